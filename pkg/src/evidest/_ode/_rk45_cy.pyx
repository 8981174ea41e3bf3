# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled Dormand-Prince 5(4) kernel for the insect life-stage system.

Mirrors rk45_py.solve_insect operation-for-operation (same tableau, same
PI controller, same negative-state guard) so the two backends agree to
roundoff. Compiled without fast-math to keep IEEE semantics.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, fmax, fmin, isfinite, pow, sqrt

cnp.import_array()

cdef double C2 = 1.0 / 5.0
cdef double C3 = 3.0 / 10.0
cdef double C4 = 4.0 / 5.0
cdef double C5 = 8.0 / 9.0
cdef double A21 = 1.0 / 5.0
cdef double A31 = 3.0 / 40.0, A32 = 9.0 / 40.0
cdef double A41 = 44.0 / 45.0, A42 = -56.0 / 15.0, A43 = 32.0 / 9.0
cdef double A51 = 19372.0 / 6561.0, A52 = -25360.0 / 2187.0
cdef double A53 = 64448.0 / 6561.0, A54 = -212.0 / 729.0
cdef double A61 = 9017.0 / 3168.0, A62 = -355.0 / 33.0
cdef double A63 = 46732.0 / 5247.0, A64 = 49.0 / 176.0, A65 = -5103.0 / 18656.0
cdef double B1 = 35.0 / 384.0, B3 = 500.0 / 1113.0, B4 = 125.0 / 192.0
cdef double B5 = -2187.0 / 6784.0, B6 = 11.0 / 84.0
cdef double E1 = 71.0 / 57600.0, E3 = -71.0 / 16695.0, E4 = 71.0 / 1920.0
cdef double E5 = -17253.0 / 339200.0, E6 = 22.0 / 525.0, E7 = -1.0 / 40.0

cdef double[7][4] P_DENSE = [
    [1.0, -8048581381.0 / 2820520608.0, 8663915743.0 / 2820520608.0, -12715105075.0 / 11282082432.0],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200.0 / 32700410799.0, -68118460800.0 / 10900136933.0, 87487479700.0 / 32700410799.0],
    [0.0, -1754552775.0 / 470086768.0, 14199869525.0 / 1410260304.0, -10690763975.0 / 1880347072.0],
    [0.0, 127303824393.0 / 49829197408.0, -318862633887.0 / 49829197408.0, 701980252875.0 / 199316789632.0],
    [0.0, -282668133.0 / 205662961.0, 2019193451.0 / 616988883.0, -1453857185.0 / 822651844.0],
    [0.0, 40617522.0 / 29380423.0, -110615467.0 / 29380423.0, 69997945.0 / 29380423.0],
]

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0
cdef double ERR_EXPONENT = 0.2
cdef double PI_BETA = 0.04

OK = 0
FAIL_STEP_UNDERFLOW = 1
FAIL_MAX_STEPS = 2


cdef inline void _rhs(const double* p, double e, double l, double a, double* out) noexcept nogil:
    out[0] = p[0] * a - p[1] * e - p[3] * e - 0.5 * p[6] * e * e
    out[1] = p[1] * e - p[2] * l - p[4] * l - 0.5 * p[7] * l * l
    out[2] = p[2] * l - p[5] * a - 0.5 * p[8] * a * a


cdef int _solve_one(const double* p, double t_end, const double* t_eval, Py_ssize_t n_eval,
                    double rtol, double atol, long max_steps,
                    double y0_0, double y0_1, double y0_2,
                    double* y_out, long* n_steps_out, long* n_rej_out,
                    double* t_last_out, double* y_last) noexcept nogil:
    cdef double ye = y0_0, yl = y0_1, ya = y0_2
    cdef double t = 0.0
    cdef Py_ssize_t i_out = 0, j
    cdef double k1[3], k2[3], k3[3], k4[3], k5[3], k6[3], k7[3]
    cdef double fe[3]
    cdef double s0, s1, s2, d0, d1, d2, h0, h
    cdef double ye_n, yl_n, ya_n, e0, e1, e2, err, err_prev, factor
    cdef double sigma, sg2, sg3, sg4, v, q0, q1, q2, q3
    cdef long n_steps = 0, n_rejected = 0
    cdef int accept, status = 0
    cdef double kmat[7][3]
    cdef Py_ssize_t srow

    while i_out < n_eval and t_eval[i_out] <= 0.0:
        y_out[3 * i_out + 0] = ye
        y_out[3 * i_out + 1] = yl
        y_out[3 * i_out + 2] = ya
        i_out += 1

    _rhs(p, ye, yl, ya, k1)

    s0 = atol + rtol * fabs(ye)
    s1 = atol + rtol * fabs(yl)
    s2 = atol + rtol * fabs(ya)
    d0 = sqrt(((ye / s0) * (ye / s0) + (yl / s1) * (yl / s1) + (ya / s2) * (ya / s2)) / 3.0)
    d1 = sqrt(((k1[0] / s0) * (k1[0] / s0) + (k1[1] / s1) * (k1[1] / s1) + (k1[2] / s2) * (k1[2] / s2)) / 3.0)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    _rhs(p, ye + h0 * k1[0], yl + h0 * k1[1], ya + h0 * k1[2], fe)
    d2 = sqrt((((fe[0] - k1[0]) / s0) * ((fe[0] - k1[0]) / s0)
               + ((fe[1] - k1[1]) / s1) * ((fe[1] - k1[1]) / s1)
               + ((fe[2] - k1[2]) / s2) * ((fe[2] - k1[2]) / s2)) / 3.0) / h0
    if fmax(d1, d2) <= 1e-15:
        h = fmax(1e-6, h0 * 1e-3)
    else:
        h = pow(0.01 / fmax(d1, d2), ERR_EXPONENT)
    h = fmin(100.0 * h0, h)
    h = fmin(h, t_end)

    err_prev = 1e-4

    while t < t_end:
        if n_steps >= max_steps:
            status = 2
            break
        if h < 1e-14 * fmax(fabs(t), 1.0):
            status = 1
            break
        if t + h > t_end:
            h = t_end - t

        _rhs(p, ye + h * A21 * k1[0], yl + h * A21 * k1[1], ya + h * A21 * k1[2], k2)
        _rhs(p,
             ye + h * (A31 * k1[0] + A32 * k2[0]),
             yl + h * (A31 * k1[1] + A32 * k2[1]),
             ya + h * (A31 * k1[2] + A32 * k2[2]), k3)
        _rhs(p,
             ye + h * (A41 * k1[0] + A42 * k2[0] + A43 * k3[0]),
             yl + h * (A41 * k1[1] + A42 * k2[1] + A43 * k3[1]),
             ya + h * (A41 * k1[2] + A42 * k2[2] + A43 * k3[2]), k4)
        _rhs(p,
             ye + h * (A51 * k1[0] + A52 * k2[0] + A53 * k3[0] + A54 * k4[0]),
             yl + h * (A51 * k1[1] + A52 * k2[1] + A53 * k3[1] + A54 * k4[1]),
             ya + h * (A51 * k1[2] + A52 * k2[2] + A53 * k3[2] + A54 * k4[2]), k5)
        _rhs(p,
             ye + h * (A61 * k1[0] + A62 * k2[0] + A63 * k3[0] + A64 * k4[0] + A65 * k5[0]),
             yl + h * (A61 * k1[1] + A62 * k2[1] + A63 * k3[1] + A64 * k4[1] + A65 * k5[1]),
             ya + h * (A61 * k1[2] + A62 * k2[2] + A63 * k3[2] + A64 * k4[2] + A65 * k5[2]), k6)
        ye_n = ye + h * (B1 * k1[0] + B3 * k3[0] + B4 * k4[0] + B5 * k5[0] + B6 * k6[0])
        yl_n = yl + h * (B1 * k1[1] + B3 * k3[1] + B4 * k4[1] + B5 * k5[1] + B6 * k6[1])
        ya_n = ya + h * (B1 * k1[2] + B3 * k3[2] + B4 * k4[2] + B5 * k5[2] + B6 * k6[2])
        _rhs(p, ye_n, yl_n, ya_n, k7)

        e0 = h * (E1 * k1[0] + E3 * k3[0] + E4 * k4[0] + E5 * k5[0] + E6 * k6[0] + E7 * k7[0])
        e1 = h * (E1 * k1[1] + E3 * k3[1] + E4 * k4[1] + E5 * k5[1] + E6 * k6[1] + E7 * k7[1])
        e2 = h * (E1 * k1[2] + E3 * k3[2] + E4 * k4[2] + E5 * k5[2] + E6 * k6[2] + E7 * k7[2])
        s0 = atol + rtol * fmax(fabs(ye), fabs(ye_n))
        s1 = atol + rtol * fmax(fabs(yl), fabs(yl_n))
        s2 = atol + rtol * fmax(fabs(ya), fabs(ya_n))
        err = sqrt(((e0 / s0) * (e0 / s0) + (e1 / s1) * (e1 / s1) + (e2 / s2) * (e2 / s2)) / 3.0)
        if not (err == err and err < 1e300):
            err = 1e10

        accept = err <= 1.0
        if accept and fmin(ye_n, fmin(yl_n, ya_n)) < -atol:
            n_steps += 1
            n_rejected += 1
            h *= 0.5
            continue

        if accept:
            n_steps += 1
            if i_out < n_eval and t_eval[i_out] <= t + h:
                for j in range(3):
                    kmat[0][j] = k1[j]
                    kmat[1][j] = k2[j]
                    kmat[2][j] = k3[j]
                    kmat[3][j] = k4[j]
                    kmat[4][j] = k5[j]
                    kmat[5][j] = k6[j]
                    kmat[6][j] = k7[j]
                while i_out < n_eval and t_eval[i_out] <= t + h:
                    sigma = (t_eval[i_out] - t) / h
                    sg2 = sigma * sigma
                    sg3 = sg2 * sigma
                    sg4 = sg3 * sigma
                    for j in range(3):
                        q0 = 0.0
                        q1 = 0.0
                        q2 = 0.0
                        q3 = 0.0
                        for srow in range(7):
                            q0 += kmat[srow][j] * P_DENSE[srow][0]
                            q1 += kmat[srow][j] * P_DENSE[srow][1]
                            q2 += kmat[srow][j] * P_DENSE[srow][2]
                            q3 += kmat[srow][j] * P_DENSE[srow][3]
                        if j == 0:
                            v = ye
                        elif j == 1:
                            v = yl
                        else:
                            v = ya
                        v = v + h * (q0 * sigma + q1 * sg2 + q2 * sg3 + q3 * sg4)
                        if v < 0.0 and v >= -atol:
                            v = 0.0
                        y_out[3 * i_out + j] = v
                    i_out += 1
            t = t + h
            ye = ye_n
            yl = yl_n
            ya = ya_n
            if ye < 0.0 and ye >= -atol:
                ye = 0.0
            if yl < 0.0 and yl >= -atol:
                yl = 0.0
            if ya < 0.0 and ya >= -atol:
                ya = 0.0
            for j in range(3):
                k1[j] = k7[j]
            err = fmax(err, 1e-10)
            factor = SAFETY * pow(err, -ERR_EXPONENT) * pow(err_prev, PI_BETA)
            h *= fmin(MAX_FACTOR, fmax(MIN_FACTOR, factor))
            err_prev = err
        else:
            n_steps += 1
            n_rejected += 1
            err = fmax(err, 1e-10)
            factor = SAFETY * pow(err, -ERR_EXPONENT)
            h *= fmin(1.0, fmax(MIN_FACTOR, factor))

    if status == 0:
        while i_out < n_eval and t_eval[i_out] <= t_end * (1 + 1e-12):
            y_out[3 * i_out + 0] = ye
            y_out[3 * i_out + 1] = yl
            y_out[3 * i_out + 2] = ya
            i_out += 1

    n_steps_out[0] = n_steps
    n_rej_out[0] = n_rejected
    t_last_out[0] = t
    y_last[0] = ye
    y_last[1] = yl
    y_last[2] = ya
    return status


def insect_rhs(params, state):
    """Right-hand side of the egg/larva/adult system (masked rates zero)."""
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] s = np.ascontiguousarray(state, dtype=np.float64)
    out = np.empty(3)
    cdef double[::1] o = out
    _rhs(&p[0], s[0], s[1], s[2], &o[0])
    return out


def solve_insect(params, double t_end, t_eval, double rtol=1e-6, double atol=1e-8,
                 long max_steps=100000, y0=(0.0, 0.0, 3.0)):
    """Compiled twin of rk45_py.solve_insect; identical return contract."""
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] te = np.ascontiguousarray(t_eval, dtype=np.float64)
    cdef Py_ssize_t n_eval = te.shape[0]
    y_out = np.full((n_eval, 3), np.nan)
    cdef double[:, ::1] yo = y_out
    y_last = np.empty(3)
    cdef double[::1] ylv = y_last
    cdef long n_steps = 0, n_rej = 0
    cdef double t_last = 0.0
    cdef double y00 = float(y0[0]), y01 = float(y0[1]), y02 = float(y0[2])
    cdef int status
    cdef double* yo_ptr = &yo[0, 0] if n_eval > 0 else NULL
    cdef const double* te_ptr = &te[0] if n_eval > 0 else NULL
    with nogil:
        status = _solve_one(&p[0], t_end, te_ptr, n_eval, rtol, atol, max_steps,
                            y00, y01, y02, yo_ptr, &n_steps, &n_rej, &t_last, &ylv[0])
    return y_out, status, n_steps, n_rej, t_last, y_last


def solve_insect_batch(params_batch, double t_end, t_eval, double rtol=1e-6,
                       double atol=1e-8, long max_steps=100000, y0=(0.0, 0.0, 3.0)):
    """Row-wise solve over an (n, 9) parameter matrix."""
    cdef double[:, ::1] pb = np.ascontiguousarray(params_batch, dtype=np.float64)
    cdef double[::1] te = np.ascontiguousarray(t_eval, dtype=np.float64)
    cdef Py_ssize_t n = pb.shape[0], n_eval = te.shape[0], i
    out = np.empty((n, n_eval, 3))
    statuses = np.zeros(n, dtype=np.int64)
    cdef double[:, :, ::1] ov = out
    cdef long[::1] sv = statuses
    cdef long n_steps = 0, n_rej = 0
    cdef double t_last = 0.0
    cdef double y_last[3]
    cdef double y00 = float(y0[0]), y01 = float(y0[1]), y02 = float(y0[2])
    cdef const double* te_ptr = &te[0] if n_eval > 0 else NULL
    with nogil:
        for i in range(n):
            sv[i] = _solve_one(&pb[i, 0], t_end, te_ptr, n_eval, rtol, atol, max_steps,
                               y00, y01, y02, &ov[i, 0, 0], &n_steps, &n_rej,
                               &t_last, y_last)
    return out, statuses
