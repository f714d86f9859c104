"""Numerical laboratory for dispersive analysis on asymptotically conic
warped products: classical scattering, eikonal/transport construction,
oscillatory-integral kernels, dyadic spectral calculus, and Schroedinger
dynamics on the discrete model.
"""

from .geometry import (ChartMetric2D, DecayFit, WarpedMetric, gamma,
                       modified_bracket, normal_form_step, smooth_bump,
                       smooth_step, symbol_decay_fit)
from .flow import (ConicRegion, PhasePoint, ScatteringData, integrate_flow,
                   integrate_flow_batch, principal_symbol, scattering_map,
                   scattering_map_batch)
from .phase import (EikonalTable, ThetaDomain, TransportAmplitude,
                    build_eikonal, characteristic, check_eikonal_expansions,
                    invert_lagrangian, load_table, save_table, solve_transport,
                    transport_b, wkb_phase)
from .oscillatory import (FioKernelSpec, angular_separation_scan,
                          dispersive_scan, eval_kernel, nonstationary_scan,
                          parametrix_weight_scan, product_amplitude)
from .spectral import (DyadicBand, FieldState, RadialModeOperator,
                       apply_spectral_function, apply_to_state,
                       build_mode_operator, lp_inequality_probe,
                       lp_reconstruct, lq_norm, resolvent_probe,
                       smoothing_probe, sobolev_probe, weighted_norm)
from .dynamics import (LightConeError, NlsRun, StrichartzReport,
                       dispersive_fit, max_horizon, nls_picard, propagate,
                       scattering_detect, strichartz_experiment)

__version__ = "0.1.0"
