"""Batched adaptive Dormand-Prince 5(4) integrator.

The classical-flow work integrates many nearby trajectories at once (grids
of Newton iterates, region samples).  scipy's solve_ivp controls error per
scalar system only, so this module provides a small vectorized embedded
pair: the state is an array of shape (d, m) holding m trajectories, a
single adaptive step is shared across the batch, and the error norm is the
max over all components.  Smooth non-stiff Hamiltonians only.
"""

from __future__ import annotations

import numpy as np

# Dormand-Prince RK5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


class StepSizeUnderflow(RuntimeError):
    pass


def integrate_batch(rhs, y0: np.ndarray, s_end: float, tol: float = 1e-10,
                    checkpoints=None, min_step_factor: float = 1e-14,
                    step_monitor=None):
    """Integrate y' = rhs(s, y) from s = 0 to s_end for a batch of states.

    ``y0`` has shape (d, m).  ``checkpoints`` is an optional increasing (in
    |s|) sequence of intermediate times at which the state is recorded; the
    integrator lands on them exactly.  Returns ``(y_end, states)`` where
    ``states`` is the list of checkpoint states (empty if no checkpoints).

    Error control: per-step max norm of err / (tol + tol * |y|) <= 1, shared
    across the batch.  ``step_monitor(s, y)`` is invoked after every accepted
    step (for domain-exit bookkeeping).
    """
    y = np.array(y0, dtype=float)
    s = 0.0
    direction = 1.0 if s_end >= 0 else -1.0
    targets = list(checkpoints) if checkpoints is not None else []
    for t in targets:
        if t * direction < 0 or abs(t) > abs(s_end) + 1e-12:
            raise ValueError("checkpoints must lie between 0 and s_end")
    targets.append(s_end)
    states = []

    if s_end == 0.0:
        states = [y.copy() for _ in targets[:-1]]
        return y.copy(), states

    f0 = rhs(s, y)
    scale = tol + tol * np.max(np.abs(y))
    d0 = np.max(np.abs(y)) / max(scale, 1e-300)
    d1 = np.max(np.abs(f0)) / max(scale, 1e-300)
    h = direction * min(abs(s_end), 1e-2 * (d0 / d1 if d1 > 0 else 1.0) + 1e-6)

    k = [None] * 7
    k[0] = f0
    target_idx = 0
    min_h = abs(s_end) * min_step_factor
    while True:
        target = targets[target_idx]
        if (target - s) * direction <= 1e-14 * max(abs(target), 1.0):
            # at (or numerically past) the checkpoint
            if target_idx < len(targets) - 1:
                states.append(y.copy())
                target_idx += 1
                continue
            states_final = y
            break
        if (s + h - target) * direction > 0:
            h = target - s
        # stages
        ys = [y]
        for i in range(1, 7):
            acc = np.zeros_like(y)
            for j, a in enumerate(_A[i]):
                if a != 0.0:
                    acc += a * k[j]
            k[i] = rhs(s + _C[i] * h, y + h * acc)
        y5 = y + h * sum(b * k[i] for i, b in enumerate(_B5) if b != 0.0)
        err = h * sum((_B5[i] - _B4[i]) * k[i] for i in range(7))
        sc = tol + tol * np.maximum(np.abs(y), np.abs(y5))
        err_norm = np.max(np.abs(err) / sc)
        if err_norm <= 1.0:
            s = s + h
            y = y5
            if step_monitor is not None:
                step_monitor(s, y)
            k[0] = k[6]  # FSAL
            fac = 0.9 * err_norm ** (-0.2) if err_norm > 0 else 5.0
            h *= min(5.0, max(0.2, fac))
        else:
            h *= max(0.2, 0.9 * err_norm ** (-0.2))
            k[0] = rhs(s, y)
        if abs(h) < min_h:
            raise StepSizeUnderflow(f"step size underflow at s = {s:.6g}")
    return states_final, states
