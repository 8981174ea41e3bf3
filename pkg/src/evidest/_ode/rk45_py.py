"""Adaptive Dormand-Prince 5(4) integration, pure-Python reference backend.

Two entry points:

* :func:`rk45_solve` integrates a generic callable right-hand side. Used by
  tests as an in-repo oracle and by the dataset generator for long
  equilibrium runs.
* :func:`solve_insect` / :func:`solve_insect_batch` integrate the
  three-stage insect system with the right-hand side inlined. The compiled
  backend (``_rk45_cy``) implements the same three functions with identical
  arithmetic; keep the two in sync operation-for-operation.

Error control is per-component, ``rtol * |y| + atol``, with PI step-size
control. Steps that take any state component below ``-atol`` are rejected
outright (mass-action systems started from non-negative data stay
non-negative analytically; numerical undershoot must not reach the
likelihood). Components inside ``[-atol, 0)`` are clamped to zero after
acceptance.
"""

import math

import numpy as np

# Dormand-Prince 5(4) tableau.
C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
)
B1, B3, B4, B5, B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
# Difference between the 5th-order weights and the embedded 4th-order weights.
E1, E3, E4, E5, E6, E7 = (
    71.0 / 57600.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
)
# Dense-output polynomial (same interpolant as the classic DOPRI5 code),
# row s gives the cubic-in-sigma coefficients multiplying stage s.
P_DENSE = np.array(
    [
        [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
        [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
        [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
        [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
        [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
    ]
)

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXPONENT = 0.2  # 1/5 for a 5(4) pair
PI_BETA = 0.04

OK = 0
FAIL_STEP_UNDERFLOW = 1
FAIL_MAX_STEPS = 2


def _initial_step(f, t0, y0, f0, rtol, atol):
    """Hairer-style starting step-size guess."""
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    y1 = y0 + h0 * f0
    f1 = f(t0 + h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** ERR_EXPONENT
    return min(100.0 * h0, h1)


def rk45_solve(f, t_span, y0, t_eval, rtol=1e-8, atol=1e-10, max_steps=1_000_000,
               nonneg=False):
    """Integrate ``dy/dt = f(t, y)`` and return the solution at ``t_eval``.

    Parameters
    ----------
    f : callable ``(t, y) -> dy`` returning a length-n array.
    t_span : (t0, t_end) with t_end > t0.
    y0 : initial state, length n.
    t_eval : increasing query times inside [t0, t_end].
    nonneg : reject steps that take any component below ``-atol``.

    Returns
    -------
    (y_out, status, n_steps, n_rejected, t_last)
        ``y_out`` has shape (len(t_eval), n); rows past ``t_last`` are NaN
        when ``status != OK``.
    """
    t0, t_end = float(t_span[0]), float(t_span[1])
    y = np.asarray(y0, dtype=float).copy()
    n = y.size
    t_eval = np.asarray(t_eval, dtype=float)
    y_out = np.full((t_eval.size, n), np.nan)

    i_out = 0
    while i_out < t_eval.size and t_eval[i_out] <= t0:
        y_out[i_out] = y
        i_out += 1

    t = t0
    k1 = np.asarray(f(t, y), dtype=float)
    h = _initial_step(f, t, y, k1, rtol, atol)
    h = min(h, t_end - t0)
    err_prev = 1e-4
    n_steps = 0
    n_rejected = 0

    while t < t_end:
        if n_steps >= max_steps:
            return y_out, FAIL_MAX_STEPS, n_steps, n_rejected, t
        if h < 1e-14 * max(abs(t), 1.0):
            return y_out, FAIL_STEP_UNDERFLOW, n_steps, n_rejected, t
        if t + h > t_end:
            h = t_end - t

        k2 = np.asarray(f(t + C2 * h, y + h * (A21 * k1)), dtype=float)
        k3 = np.asarray(f(t + C3 * h, y + h * (A31 * k1 + A32 * k2)), dtype=float)
        k4 = np.asarray(f(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3)), dtype=float)
        k5 = np.asarray(f(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4)), dtype=float)
        k6 = np.asarray(f(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5)), dtype=float)
        y_new = y + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = np.asarray(f(t + h, y_new), dtype=float)

        err_vec = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2))
        if not np.isfinite(err):
            err = 1e10

        accept = err <= 1.0
        if accept and nonneg and np.min(y_new) < -atol:
            accept = False
            n_steps += 1
            n_rejected += 1
            h *= 0.5
            continue

        if accept:
            n_steps += 1
            if i_out < t_eval.size and t_eval[i_out] <= t + h:
                # Stage matrix for dense output inside the accepted step.
                kmat = np.stack([k1, k2, k3, k4, k5, k6, k7])
                q = kmat.T @ P_DENSE
                while i_out < t_eval.size and t_eval[i_out] <= t + h:
                    sigma = (t_eval[i_out] - t) / h
                    powers = np.array([sigma, sigma**2, sigma**3, sigma**4])
                    y_q = y + h * (q @ powers)
                    if nonneg:
                        y_q = np.where((y_q < 0) & (y_q >= -atol), 0.0, y_q)
                    y_out[i_out] = y_q
                    i_out += 1
            t = t + h
            y = y_new
            if nonneg:
                y = np.where((y < 0) & (y >= -atol), 0.0, y)
            k1 = k7
            err = max(err, 1e-10)
            factor = SAFETY * err ** (-ERR_EXPONENT) * err_prev ** PI_BETA
            h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))
            err_prev = err
        else:
            n_steps += 1
            n_rejected += 1
            err = max(err, 1e-10)
            factor = SAFETY * err ** (-ERR_EXPONENT)
            h *= min(1.0, max(MIN_FACTOR, factor))

    if i_out < t_eval.size:  # t_end query hit by roundoff slack
        while i_out < t_eval.size and t_eval[i_out] <= t_end * (1 + 1e-12):
            y_out[i_out] = y
            i_out += 1
    return y_out, OK, n_steps, n_rejected, t


# Insect life-stage system. Parameter slot order (fixed everywhere):
# 0 rho, 1 lam_EL, 2 lam_LA, 3 d_E, 4 d_L, 5 d_A, 6 k_E, 7 k_L, 8 k_A.


def insect_rhs(params, state):
    """Right-hand side of the egg/larva/adult system (masked rates are zero)."""
    rho, lam_el, lam_la, d_e, d_l, d_a, k_e, k_l, k_a = params
    e, l, a = state
    de = rho * a - lam_el * e - d_e * e - 0.5 * k_e * e * e
    dl = lam_el * e - lam_la * l - d_l * l - 0.5 * k_l * l * l
    da = lam_la * l - d_a * a - 0.5 * k_a * a * a
    return np.array([de, dl, da])


def insect_jacobian(params, state):
    """Analytic Jacobian of :func:`insect_rhs` with respect to the state."""
    rho, lam_el, lam_la, d_e, d_l, d_a, k_e, k_l, k_a = params
    e, l, a = state
    return np.array(
        [
            [-lam_el - d_e - k_e * e, 0.0, rho],
            [lam_el, -lam_la - d_l - k_l * l, 0.0],
            [0.0, lam_la, -d_a - k_a * a],
        ]
    )


def solve_insect(params, t_end, t_eval, rtol=1e-6, atol=1e-8, max_steps=100_000,
                 y0=(0.0, 0.0, 3.0)):
    """Integrate the insect system from ``y0`` on [0, t_end].

    Scalar-arithmetic twin of the compiled kernel. Returns
    ``(y_out, status, n_steps, n_rejected, t_last, y_last)``.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    n_eval = t_eval.size
    y_out = np.full((n_eval, 3), np.nan)
    p = [float(v) for v in params]

    ye, yl, ya = float(y0[0]), float(y0[1]), float(y0[2])
    t = 0.0
    i_out = 0
    while i_out < n_eval and t_eval[i_out] <= 0.0:
        y_out[i_out] = (ye, yl, ya)
        i_out += 1

    def rhs(e, l, a):
        de = p[0] * a - p[1] * e - p[3] * e - 0.5 * p[6] * e * e
        dl = p[1] * e - p[2] * l - p[4] * l - 0.5 * p[7] * l * l
        da = p[2] * l - p[5] * a - 0.5 * p[8] * a * a
        return de, dl, da

    f1 = rhs(ye, yl, ya)

    # Starting step: same heuristic as rk45_solve, scalarized.
    s0 = atol + rtol * abs(ye)
    s1 = atol + rtol * abs(yl)
    s2 = atol + rtol * abs(ya)
    d0 = math.sqrt(((ye / s0) ** 2 + (yl / s1) ** 2 + (ya / s2) ** 2) / 3.0)
    d1 = math.sqrt(((f1[0] / s0) ** 2 + (f1[1] / s1) ** 2 + (f1[2] / s2) ** 2) / 3.0)
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    fe = rhs(ye + h0 * f1[0], yl + h0 * f1[1], ya + h0 * f1[2])
    d2 = (
        math.sqrt(
            (((fe[0] - f1[0]) / s0) ** 2 + ((fe[1] - f1[1]) / s1) ** 2 + ((fe[2] - f1[2]) / s2) ** 2)
            / 3.0
        )
        / h0
    )
    if max(d1, d2) <= 1e-15:
        h = max(1e-6, h0 * 1e-3)
    else:
        h = (0.01 / max(d1, d2)) ** ERR_EXPONENT
    h = min(100.0 * h0, h)
    h = min(h, t_end)

    err_prev = 1e-4
    n_steps = 0
    n_rejected = 0
    k1 = f1

    while t < t_end:
        if n_steps >= max_steps:
            return y_out, FAIL_MAX_STEPS, n_steps, n_rejected, t, np.array([ye, yl, ya])
        if h < 1e-14 * max(abs(t), 1.0):
            return y_out, FAIL_STEP_UNDERFLOW, n_steps, n_rejected, t, np.array([ye, yl, ya])
        if t + h > t_end:
            h = t_end - t

        k2 = rhs(ye + h * A21 * k1[0], yl + h * A21 * k1[1], ya + h * A21 * k1[2])
        k3 = rhs(
            ye + h * (A31 * k1[0] + A32 * k2[0]),
            yl + h * (A31 * k1[1] + A32 * k2[1]),
            ya + h * (A31 * k1[2] + A32 * k2[2]),
        )
        k4 = rhs(
            ye + h * (A41 * k1[0] + A42 * k2[0] + A43 * k3[0]),
            yl + h * (A41 * k1[1] + A42 * k2[1] + A43 * k3[1]),
            ya + h * (A41 * k1[2] + A42 * k2[2] + A43 * k3[2]),
        )
        k5 = rhs(
            ye + h * (A51 * k1[0] + A52 * k2[0] + A53 * k3[0] + A54 * k4[0]),
            yl + h * (A51 * k1[1] + A52 * k2[1] + A53 * k3[1] + A54 * k4[1]),
            ya + h * (A51 * k1[2] + A52 * k2[2] + A53 * k3[2] + A54 * k4[2]),
        )
        k6 = rhs(
            ye + h * (A61 * k1[0] + A62 * k2[0] + A63 * k3[0] + A64 * k4[0] + A65 * k5[0]),
            yl + h * (A61 * k1[1] + A62 * k2[1] + A63 * k3[1] + A64 * k4[1] + A65 * k5[1]),
            ya + h * (A61 * k1[2] + A62 * k2[2] + A63 * k3[2] + A64 * k4[2] + A65 * k5[2]),
        )
        ye_n = ye + h * (B1 * k1[0] + B3 * k3[0] + B4 * k4[0] + B5 * k5[0] + B6 * k6[0])
        yl_n = yl + h * (B1 * k1[1] + B3 * k3[1] + B4 * k4[1] + B5 * k5[1] + B6 * k6[1])
        ya_n = ya + h * (B1 * k1[2] + B3 * k3[2] + B4 * k4[2] + B5 * k5[2] + B6 * k6[2])
        k7 = rhs(ye_n, yl_n, ya_n)

        e0 = h * (E1 * k1[0] + E3 * k3[0] + E4 * k4[0] + E5 * k5[0] + E6 * k6[0] + E7 * k7[0])
        e1 = h * (E1 * k1[1] + E3 * k3[1] + E4 * k4[1] + E5 * k5[1] + E6 * k6[1] + E7 * k7[1])
        e2 = h * (E1 * k1[2] + E3 * k3[2] + E4 * k4[2] + E5 * k5[2] + E6 * k6[2] + E7 * k7[2])
        s0 = atol + rtol * max(abs(ye), abs(ye_n))
        s1 = atol + rtol * max(abs(yl), abs(yl_n))
        s2 = atol + rtol * max(abs(ya), abs(ya_n))
        err = math.sqrt(((e0 / s0) ** 2 + (e1 / s1) ** 2 + (e2 / s2) ** 2) / 3.0)
        if not (err == err and err < 1e300):  # NaN or overflow
            err = 1e10

        accept = err <= 1.0
        if accept and min(ye_n, yl_n, ya_n) < -atol:
            n_steps += 1
            n_rejected += 1
            h *= 0.5
            continue

        if accept:
            n_steps += 1
            if i_out < n_eval and t_eval[i_out] <= t + h:
                kmat = np.array([k1, k2, k3, k4, k5, k6, k7])
                q = kmat.T @ P_DENSE
                while i_out < n_eval and t_eval[i_out] <= t + h:
                    sigma = (t_eval[i_out] - t) / h
                    s2_, s3_, s4_ = sigma * sigma, sigma**3, sigma**4
                    for j in range(3):
                        v = ye if j == 0 else (yl if j == 1 else ya)
                        v = v + h * (
                            q[j, 0] * sigma + q[j, 1] * s2_ + q[j, 2] * s3_ + q[j, 3] * s4_
                        )
                        if -atol <= v < 0.0:
                            v = 0.0
                        y_out[i_out, j] = v
                    i_out += 1
            t = t + h
            ye, yl, ya = ye_n, yl_n, ya_n
            if -atol <= ye < 0.0:
                ye = 0.0
            if -atol <= yl < 0.0:
                yl = 0.0
            if -atol <= ya < 0.0:
                ya = 0.0
            k1 = k7
            err = max(err, 1e-10)
            factor = SAFETY * err ** (-ERR_EXPONENT) * err_prev ** PI_BETA
            h *= min(MAX_FACTOR, max(MIN_FACTOR, factor))
            err_prev = err
        else:
            n_steps += 1
            n_rejected += 1
            err = max(err, 1e-10)
            factor = SAFETY * err ** (-ERR_EXPONENT)
            h *= min(1.0, max(MIN_FACTOR, factor))

    while i_out < n_eval and t_eval[i_out] <= t_end * (1 + 1e-12):
        y_out[i_out] = (ye, yl, ya)
        i_out += 1
    return y_out, OK, n_steps, n_rejected, t, np.array([ye, yl, ya])


def solve_insect_batch(params_batch, t_end, t_eval, rtol=1e-6, atol=1e-8,
                       max_steps=100_000, y0=(0.0, 0.0, 3.0)):
    """Row-wise :func:`solve_insect` over a (n, 9) parameter matrix.

    Returns ``(trajectories (n, len(t_eval), 3), statuses (n,))``.
    """
    params_batch = np.asarray(params_batch, dtype=float)
    n = params_batch.shape[0]
    t_eval = np.asarray(t_eval, dtype=float)
    out = np.empty((n, t_eval.size, 3))
    statuses = np.zeros(n, dtype=np.int64)
    for i in range(n):
        y_i, status, _, _, _, _ = solve_insect(
            params_batch[i], t_end, t_eval, rtol=rtol, atol=atol,
            max_steps=max_steps, y0=y0,
        )
        out[i] = y_i
        statuses[i] = status
    return out, statuses
