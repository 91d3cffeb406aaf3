# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loop for the kinematic bicycle.

Same algorithm and signatures as ``cilqg._pykernels``; the state is
``(px, py, v, theta)`` and the control ``(a, delta)``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, cos, tan, log, sqrt, fabs, INFINITY

cnp.import_array()

DEF NX = 4
DEF NU = 2
DEF TAYLOR_EPS = 1e-8
DEF JAC_EPS = 1e-3
DEF JITTER = 1e-12


cdef inline void sinc_terms(double phi, double* S, double* C) noexcept nogil:
    cdef double h
    if fabs(phi) <= TAYLOR_EPS:
        S[0] = 1.0 - phi * phi / 6.0
        C[0] = 0.5 * phi
    else:
        h = sin(0.5 * phi)
        S[0] = sin(phi) / phi
        C[0] = 2.0 * h * h / phi


cdef inline void sinc_derivs(double phi, double* dS, double* dC) noexcept nogil:
    cdef double p2, s, c
    p2 = phi * phi
    if fabs(phi) < JAC_EPS:
        dS[0] = -phi / 3.0 + phi * p2 / 30.0 - phi * p2 * p2 / 840.0
        dC[0] = 0.5 - p2 / 8.0 + p2 * p2 / 144.0
    else:
        s = sin(phi)
        c = cos(phi)
        dS[0] = (phi * c - s) / p2
        dC[0] = (phi * s - (1.0 - c)) / p2


cdef inline void bstep(const double* x, const double* u, double L, double tr, double* out) noexcept nogil:
    cdef double kappa = tan(u[1]) / L
    cdef double d = x[2] * tr + 0.5 * u[0] * tr * tr
    cdef double phi = kappa * d
    cdef double S, C
    sinc_terms(phi, &S, &C)
    cdef double c = cos(x[3]), s = sin(x[3])
    out[0] = x[0] + d * (c * S - s * C)
    out[1] = x[1] + d * (c * C + s * S)
    out[2] = x[2] + u[0] * tr
    out[3] = x[3] + phi


cdef inline void bjac(const double* x, const double* u, double L, double tr,
                      double* A, double* B, double* W) noexcept nogil:
    # A: 4x4, B/W: 4x2, row-major
    cdef double t = tan(u[1])
    cdef double kappa = t / L
    cdef double dk = (1.0 + t * t) / L
    cdef double d = x[2] * tr + 0.5 * u[0] * tr * tr
    cdef double phi = kappa * d
    cdef double S, C, dS, dC
    sinc_terms(phi, &S, &C)
    sinc_derivs(phi, &dS, &dC)
    cdef double c = cos(x[3]), s = sin(x[3])
    cdef double dpx = d * (c * S - s * C)
    cdef double dpy = d * (c * C + s * S)
    cdef double cth = cos(x[3] + phi), sth = sin(x[3] + phi)
    cdef double dpx_dk = d * d * (c * dS - s * dC)
    cdef double dpy_dk = d * d * (c * dC + s * dS)
    cdef double h2 = 0.5 * tr * tr
    cdef int i
    for i in range(16):
        A[i] = 0.0
    A[0] = 1.0; A[2] = cth * tr; A[3] = -dpy
    A[5] = 1.0; A[6] = sth * tr; A[7] = dpx
    A[10] = 1.0
    A[14] = kappa * tr; A[15] = 1.0
    W[0] = cth * h2; W[1] = dpx_dk
    W[2] = sth * h2; W[3] = dpy_dk
    W[4] = tr; W[5] = 0.0
    W[6] = kappa * h2; W[7] = d
    if B != NULL:
        for i in range(4):
            B[2 * i] = W[2 * i]
            B[2 * i + 1] = W[2 * i + 1] * dk


cdef int cholesky(double* M, int n, double* L) noexcept nogil:
    """Lower Cholesky factor of the n x n row-major M; -1 when not PD."""
    cdef int i, j, k
    cdef double s
    for i in range(n * n):
        L[i] = 0.0
    for j in range(n):
        s = M[j * n + j]
        for k in range(j):
            s -= L[j * n + k] * L[j * n + k]
        if not (s > 0.0):
            return -1
        L[j * n + j] = sqrt(s)
        for i in range(j + 1, n):
            s = M[i * n + j]
            for k in range(j):
                s -= L[i * n + k] * L[j * n + k]
            L[i * n + j] = s / L[j * n + j]
    return 0


cdef void chol_solve(double* L, int n, double* b) noexcept nogil:
    """Solve (L L^T) x = b in place."""
    cdef int i, k
    cdef double s
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i * n + k] * b[k]
        b[i] = s / L[i * n + i]
    for i in range(n - 1, -1, -1):
        s = b[i]
        for k in range(i + 1, n):
            s -= L[k * n + i] * b[k]
        b[i] = s / L[i * n + i]


cdef class _Problem:
    cdef double[:, ::1] Xref
    cdef double[:, ::1] Q
    cdef double[:, ::1] R
    cdef double[:, ::1] Qf
    cdef double[:, :, ::1] Gx
    cdef double[:, ::1] hx
    cdef double[:, :, ::1] Gu
    cdef double[:, ::1] hu
    cdef double L, tr, weight
    cdef int penalty, N, cx, cu


cdef _Problem make_problem(Xref, Q, R, Qf, Gx, hx, Gu, hu, double L, double tr, int penalty, double weight, int N):
    cdef _Problem p = _Problem()
    p.Xref = np.require(Xref, np.float64, ("C", "W"))
    p.Q = np.require(Q, np.float64, ("C", "W"))
    p.R = np.require(R, np.float64, ("C", "W"))
    p.Qf = np.require(Qf, np.float64, ("C", "W"))
    p.Gx = np.require(Gx, np.float64, ("C", "W"))
    p.hx = np.require(hx, np.float64, ("C", "W"))
    p.Gu = np.require(Gu, np.float64, ("C", "W"))
    p.hu = np.require(hu, np.float64, ("C", "W"))
    p.L = L
    p.tr = tr
    p.penalty = penalty
    p.weight = weight
    p.N = N
    p.cx = Gx.shape[1]
    p.cu = Gu.shape[1]
    return p


cdef double row_value(double[:, :, ::1] G, double[:, ::1] h, int k, int c, const double* z, int dim) noexcept nogil:
    cdef double v = h[k, c]
    cdef int i
    for i in range(dim):
        v += G[k, c, i] * z[i]
    return v


cdef double cost_value(_Problem p, double[:, ::1] X, double[:, ::1] U) noexcept nogil:
    """Augmented cost; INFINITY outside the barrier interior."""
    cdef int N = p.N, k, i, j, c
    cdef double J = 0.0, acc, v, e[NX]
    cdef double run = 0.0, ctl = 0.0, term = 0.0
    for k in range(N):
        if fabs(U[k, 1]) >= 1.5707963267948966:
            return INFINITY
    for k in range(N + 1):
        for i in range(NX):
            e[i] = X[k, i] - p.Xref[k, i]
        acc = 0.0
        if k < N:
            for i in range(NX):
                for j in range(NX):
                    acc += e[i] * p.Q[i, j] * e[j]
            run += acc
            acc = 0.0
            for i in range(NU):
                for j in range(NU):
                    acc += U[k, i] * p.R[i, j] * U[k, j]
            ctl += acc
        else:
            for i in range(NX):
                for j in range(NX):
                    acc += e[i] * p.Qf[i, j] * e[j]
            term = acc
    J = run + ctl + term
    acc = 0.0
    for k in range(1, N + 1):
        for c in range(p.cx):
            v = row_value(p.Gx, p.hx, k, c, &X[k, 0], NX)
            if p.penalty:
                if v > 0.0:
                    acc += v * v
            else:
                if not (v < 0.0):
                    return INFINITY
                acc += log(-v)
    for k in range(N):
        for c in range(p.cu):
            v = row_value(p.Gu, p.hu, k, c, &U[k, 0], NU)
            if p.penalty:
                if v > 0.0:
                    acc += v * v
            else:
                if not (v < 0.0):
                    return INFINITY
                acc += log(-v)
    if p.penalty:
        return J + p.weight * acc
    return J - p.weight * acc


cdef void derivatives(_Problem p, double[:, ::1] X, double[:, ::1] U,
                      double[:, ::1] lx, double[:, :, ::1] lxx,
                      double[:, ::1] lu, double[:, :, ::1] luu) noexcept nogil:
    cdef int N = p.N, k, i, j, c
    cdef double e[NX]
    cdef double v, g1, g2
    for k in range(N + 1):
        for i in range(NX):
            e[i] = X[k, i] - p.Xref[k, i]
        for i in range(NX):
            lx[k, i] = 0.0
            for j in range(NX):
                if k < N:
                    lx[k, i] += 2.0 * p.Q[i, j] * e[j]
                    lxx[k, i, j] = 2.0 * p.Q[i, j]
                else:
                    lx[k, i] += 2.0 * p.Qf[i, j] * e[j]
                    lxx[k, i, j] = 2.0 * p.Qf[i, j]
        if k >= 1:
            for c in range(p.cx):
                v = row_value(p.Gx, p.hx, k, c, &X[k, 0], NX)
                if p.penalty:
                    g1 = 2.0 * p.weight * v if v > 0.0 else 0.0
                    g2 = 2.0 * p.weight if v > 0.0 else 0.0
                else:
                    g1 = p.weight / (-v)
                    g2 = p.weight / (v * v)
                for i in range(NX):
                    lx[k, i] += g1 * p.Gx[k, c, i]
                    for j in range(NX):
                        lxx[k, i, j] += g2 * p.Gx[k, c, i] * p.Gx[k, c, j]
        if k < N:
            for i in range(NU):
                lu[k, i] = 0.0
                for j in range(NU):
                    lu[k, i] += 2.0 * p.R[i, j] * U[k, j]
                    luu[k, i, j] = 2.0 * p.R[i, j]
            for c in range(p.cu):
                v = row_value(p.Gu, p.hu, k, c, &U[k, 0], NU)
                if p.penalty:
                    g1 = 2.0 * p.weight * v if v > 0.0 else 0.0
                    g2 = 2.0 * p.weight if v > 0.0 else 0.0
                else:
                    g1 = p.weight / (-v)
                    g2 = p.weight / (v * v)
                for i in range(NU):
                    lu[k, i] += g1 * p.Gu[k, c, i]
                    for j in range(NU):
                        luu[k, i, j] += g2 * p.Gu[k, c, i] * p.Gu[k, c, j]


cdef int backward(_Problem p, double[:, ::1] X, double[:, ::1] U,
                  double[:, ::1] lx, double[:, :, ::1] lxx, double[:, ::1] lu, double[:, :, ::1] luu,
                  double rho, double[:, ::1] kff, double[:, :, ::1] Kfb, double* d1, double* d2) noexcept nogil:
    cdef int N = p.N, k, i, j, l
    cdef double A[NX * NX]
    cdef double B[NX * NU]
    cdef double W[NX * NU]
    cdef double Vx[NX]
    cdef double Vxx[NX * NX]
    cdef double Qx[NX]
    cdef double Qu[NU]
    cdef double Qxx[NX * NX]
    cdef double Qux[NU * NX]
    cdef double Quu[NU * NU]
    cdef double VA[NX * NX]
    cdef double VB[NX * NU]
    cdef double Lc[NU * NU]
    cdef double col[NU]
    cdef double s
    for i in range(NX):
        Vx[i] = lx[N, i]
        for j in range(NX):
            Vxx[i * NX + j] = lxx[N, i, j]
    d1[0] = 0.0
    d2[0] = 0.0
    for k in range(N - 1, -1, -1):
        bjac(&X[k, 0], &U[k, 0], p.L, p.tr, A, B, W)
        for i in range(NX):
            s = lx[k, i]
            for j in range(NX):
                s += A[j * NX + i] * Vx[j]
            Qx[i] = s
        for i in range(NU):
            s = lu[k, i]
            for j in range(NX):
                s += B[j * NU + i] * Vx[j]
            Qu[i] = s
        # VA = Vxx A, VB = Vxx B
        for i in range(NX):
            for j in range(NX):
                s = 0.0
                for l in range(NX):
                    s += Vxx[i * NX + l] * A[l * NX + j]
                VA[i * NX + j] = s
            for j in range(NU):
                s = 0.0
                for l in range(NX):
                    s += Vxx[i * NX + l] * B[l * NU + j]
                VB[i * NU + j] = s
        for i in range(NX):
            for j in range(NX):
                s = lxx[k, i, j]
                for l in range(NX):
                    s += A[l * NX + i] * VA[l * NX + j]
                Qxx[i * NX + j] = s
        for i in range(NU):
            for j in range(NX):
                s = 0.0
                for l in range(NX):
                    s += B[l * NU + i] * VA[l * NX + j]
                Qux[i * NX + j] = s
            for j in range(NU):
                s = luu[k, i, j]
                for l in range(NX):
                    s += B[l * NU + i] * VB[l * NU + j]
                if i == j:
                    s += rho
                Quu[i * NU + j] = s
        if cholesky(Quu, NU, Lc) != 0:
            return -1
        for i in range(NU):
            col[i] = Qu[i]
        chol_solve(Lc, NU, col)
        for i in range(NU):
            kff[k, i] = -col[i]
        for j in range(NX):
            for i in range(NU):
                col[i] = Qux[i * NX + j]
            chol_solve(Lc, NU, col)
            for i in range(NU):
                Kfb[k, i, j] = -col[i]
        # V_x = Q_x + Q_ux^T k ; V_xx = Q_xx + Q_ux^T K
        for i in range(NX):
            s = Qx[i]
            for l in range(NU):
                s += Qux[l * NX + i] * kff[k, l]
            Vx[i] = s
            for j in range(NX):
                s = Qxx[i * NX + j]
                for l in range(NU):
                    s += Qux[l * NX + i] * Kfb[k, l, j]
                Vxx[i * NX + j] = s
        for i in range(NX):
            for j in range(i + 1, NX):
                s = 0.5 * (Vxx[i * NX + j] + Vxx[j * NX + i])
                Vxx[i * NX + j] = s
                Vxx[j * NX + i] = s
        for i in range(NU):
            d1[0] += kff[k, i] * Qu[i]
            s = 0.0
            for j in range(NU):
                s += Quu[i * NU + j] * kff[k, j]
            d2[0] += 0.5 * kff[k, i] * s
    return 0


cdef void policy_rollout(_Problem p, double[:, ::1] X, double[:, ::1] U, double[:, ::1] kff,
                         double[:, :, ::1] Kfb, double alpha, double[:, ::1] Xn, double[:, ::1] Un) noexcept nogil:
    cdef int N = p.N, k, i, j
    cdef double s
    for i in range(NX):
        Xn[0, i] = X[0, i]
    for k in range(N):
        for i in range(NU):
            s = U[k, i] + alpha * kff[k, i]
            for j in range(NX):
                s += Kfb[k, i, j] * (Xn[k, j] - X[k, j])
            Un[k, i] = s
        bstep(&Xn[k, 0], &Un[k, 0], p.L, p.tr, &Xn[k + 1, 0])


def bicycle_rollout(x0, U, double wheelbase, double tr):
    cdef double[:, ::1] Uv = np.require(U, np.float64, ("C", "W"))
    cdef int N = Uv.shape[0], k
    out = np.empty((N + 1, NX))
    cdef double[:, ::1] Xv = out
    x0 = np.asarray(x0, dtype=np.float64)
    for k in range(NX):
        Xv[0, k] = x0[k]
    for k in range(N):
        if fabs(Uv[k, 1]) >= 1.5707963267948966:
            raise ValueError("steering angle outside (-pi/2, pi/2)")
    with nogil:
        for k in range(N):
            bstep(&Xv[k, 0], &Uv[k, 0], wheelbase, tr, &Xv[k + 1, 0])
    return out


def constrained_cost(X, U, Xref, Q, R, Qf, Gx, hx, Gu, hu, double wheelbase, double tr,
                     int penalty, double weight):
    cdef double[:, ::1] Xv = np.require(X, np.float64, ("C", "W"))
    cdef double[:, ::1] Uv = np.require(U, np.float64, ("C", "W"))
    cdef _Problem p = make_problem(Xref, Q, R, Qf, Gx, hx, Gu, hu, wheelbase, tr, penalty, weight, Uv.shape[0])
    return cost_value(p, Xv, Uv)


def backward_gains(X, U, Xref, Q, R, Qf, Gx, hx, Gu, hu, double wheelbase, double tr,
                   int penalty, double weight, double rho_min, double rho_max, double rho_growth):
    cdef double[:, ::1] Xv = np.require(X, np.float64, ("C", "W"))
    cdef double[:, ::1] Uv = np.require(U, np.float64, ("C", "W"))
    cdef int N = Uv.shape[0]
    cdef _Problem p = make_problem(Xref, Q, R, Qf, Gx, hx, Gu, hu, wheelbase, tr, penalty, weight, N)
    lx_a = np.empty((N + 1, NX)); lxx_a = np.empty((N + 1, NX, NX))
    lu_a = np.empty((N, NU)); luu_a = np.empty((N, NU, NU))
    kff_a = np.zeros((N, NU)); Kfb_a = np.zeros((N, NU, NX))
    cdef double[:, ::1] lx = lx_a, lu = lu_a, kff = kff_a
    cdef double[:, :, ::1] lxx = lxx_a, luu = luu_a, Kfb = Kfb_a
    cdef double d1, d2, rho = 0.0
    cdef int rc
    with nogil:
        derivatives(p, Xv, Uv, lx, lxx, lu, luu)
        rc = backward(p, Xv, Uv, lx, lxx, lu, luu, rho, kff, Kfb, &d1, &d2)
        while rc != 0:
            rho = (rho_min if rho < rho_min else rho) * rho_growth
            if rho > rho_max:
                break
            rc = backward(p, Xv, Uv, lx, lxx, lu, luu, rho, kff, Kfb, &d1, &d2)
    if rc != 0:
        raise ArithmeticError("Q_uu not positive definite for any admissible regularization")
    return kff_a, Kfb_a


def inner_solve(X, U, Xref, Q, R, Qf, Gx, hx, Gu, hu, double wheelbase, double tr,
                int penalty, double weight, int max_iter, double tol, double rho_init,
                double rho_min, double rho_max, double rho_growth, double rho_shrink,
                double beta, int max_ls):
    """Inner iLQR loop; returns (X, U, J, k_ff, K_fb, iterations, converged, status)."""
    Xa = np.array(X, dtype=np.float64, order="C")
    Ua = np.array(U, dtype=np.float64, order="C")
    cdef int N = Ua.shape[0]
    cdef _Problem p = make_problem(Xref, Q, R, Qf, Gx, hx, Gu, hu, wheelbase, tr, penalty, weight, N)
    Xn_a = np.empty_like(Xa); Un_a = np.empty_like(Ua)
    lx_a = np.empty((N + 1, NX)); lxx_a = np.empty((N + 1, NX, NX))
    lu_a = np.empty((N, NU)); luu_a = np.empty((N, NU, NU))
    kff_a = np.zeros((N, NU)); Kfb_a = np.zeros((N, NU, NX))
    cdef double[:, ::1] Xv = Xa, Uv = Ua, Xn = Xn_a, Un = Un_a
    cdef double[:, ::1] lx = lx_a, lu = lu_a, kff = kff_a
    cdef double[:, :, ::1] lxx = lxx_a, luu = luu_a, Kfb = Kfb_a
    cdef double J, Jn = 0.0, rho = rho_init, d1 = 0.0, d2 = 0.0, alpha, rel, absJ
    cdef int it = 0, rc, trial, accepted, any_ff, i, k
    cdef int status = 0  # 0 max_iter, 1 converged, 2 stalled, 3 rho_overflow, 4 infeasible start
    J = cost_value(p, Xv, Uv)
    if J == INFINITY:
        status = 4
    with nogil:
        while status == 0 and it < max_iter:
            it += 1
            derivatives(p, Xv, Uv, lx, lxx, lu, luu)
            rc = backward(p, Xv, Uv, lx, lxx, lu, luu, rho, kff, Kfb, &d1, &d2)
            while rc != 0:
                rho = (rho_min if rho < rho_min else rho) * rho_growth
                if rho > rho_max:
                    status = 3
                    break
                rc = backward(p, Xv, Uv, lx, lxx, lu, luu, rho, kff, Kfb, &d1, &d2)
            if status != 0:
                break
            absJ = fabs(J)
            if absJ < 1.0:
                absJ = 1.0
            if -(d1 + d2) <= 1e-12 * absJ:
                status = 1
                break
            any_ff = 0
            for k in range(N):
                for i in range(NU):
                    if kff[k, i] != 0.0:
                        any_ff = 1
            if not any_ff:
                status = 1
                break
            alpha = 1.0
            accepted = 0
            for trial in range(max_ls):
                policy_rollout(p, Xv, Uv, kff, Kfb, alpha, Xn, Un)
                Jn = cost_value(p, Xn, Un)
                if Jn < J:
                    accepted = 1
                    break
                alpha *= beta
            if not accepted:
                rho = (rho_min if rho < rho_min else rho) * rho_growth
                if rho > rho_max:
                    status = 2
                    break
                continue
            rel = (J - Jn) / absJ
            Xv[:, :] = Xn
            Uv[:, :] = Un
            J = Jn
            rho *= rho_shrink
            if rho < rho_min:
                rho = 0.0
            if rel < tol:
                status = 1
                break
    names = {0: "max_iter", 1: "converged", 2: "stalled", 3: "rho_overflow", 4: "infeasible_start"}
    return Xa, Ua, J, kff_a, Kfb_a, it, status == 1, names[status]


def bicycle_covariances(X, U, Sigma0, Sw, Sv, double wheelbase, double tr, int measurement):
    """Posterior covariance and Kalman-gain sequences along a bicycle nominal."""
    cdef double[:, ::1] Xv = np.require(X, np.float64, ("C", "W"))
    cdef double[:, ::1] Uv = np.require(U, np.float64, ("C", "W"))
    cdef double[:, ::1] sw = np.require(Sw, np.float64, ("C", "W"))
    cdef double[:, ::1] sv = np.require(Sv, np.float64, ("C", "W"))
    cdef int N = Uv.shape[0], k, i, j, l
    covs_a = np.empty((N + 1, NX, NX))
    priors_a = np.empty((N + 1, NX, NX))
    gains_a = np.zeros((N + 1, NX, NX))
    covs_a[0] = Sigma0
    priors_a[0] = Sigma0
    cdef double[:, :, ::1] covs = covs_a, priors = priors_a, gains = gains_a
    cdef double A[NX * NX]
    cdef double W[NX * NU]
    cdef double P[NX * NX]
    cdef double T[NX * NX]
    cdef double WS[NX * NU]
    cdef double S[NX * NX]
    cdef double Ls[NX * NX]
    cdef double col[NX]
    cdef double post[NX * NX]
    cdef double s, v2
    cdef int fail = 0
    for i in range(NX):
        for j in range(NX):
            post[i * NX + j] = covs[0, i, j]
    with nogil:
        for k in range(N):
            bjac(&Xv[k, 0], &Uv[k, 0], wheelbase, tr, A, NULL, W)
            # T = A post
            for i in range(NX):
                for j in range(NX):
                    s = 0.0
                    for l in range(NX):
                        s += A[i * NX + l] * post[l * NX + j]
                    T[i * NX + j] = s
            for i in range(NX):
                for j in range(NU):
                    s = 0.0
                    for l in range(NU):
                        s += W[i * NU + l] * sw[l, j]
                    WS[i * NU + j] = s
            for i in range(NX):
                for j in range(NX):
                    s = 0.0
                    for l in range(NX):
                        s += T[i * NX + l] * A[j * NX + l]
                    for l in range(NU):
                        s += WS[i * NU + l] * W[j * NU + l]
                    P[i * NX + j] = s
            for i in range(NX):
                for j in range(i + 1, NX):
                    s = 0.5 * (P[i * NX + j] + P[j * NX + i])
                    P[i * NX + j] = s
                    P[j * NX + i] = s
            for i in range(NX):
                for j in range(NX):
                    priors[k + 1, i, j] = P[i * NX + j]
            if measurement:
                # H = I, V = v I  ->  S = P + v^2 Sv, jittered only if singular
                v2 = Xv[k + 1, 2] * Xv[k + 1, 2]
                for i in range(NX):
                    for j in range(NX):
                        S[i * NX + j] = P[i * NX + j] + v2 * 0.5 * (sv[i, j] + sv[j, i])
                if cholesky(S, NX, Ls) != 0:
                    for i in range(NX):
                        S[i * NX + i] += JITTER
                    if cholesky(S, NX, Ls) != 0:
                        fail = 1
                        break
                # K^T = S^-1 P  (P, S symmetric)
                for j in range(NX):
                    for i in range(NX):
                        col[i] = P[i * NX + j]
                    chol_solve(Ls, NX, col)
                    for i in range(NX):
                        gains[k + 1, j, i] = col[i]
                # post = (I - K) P
                for i in range(NX):
                    for j in range(NX):
                        s = P[i * NX + j]
                        for l in range(NX):
                            s -= gains[k + 1, i, l] * P[l * NX + j]
                        post[i * NX + j] = s
                for i in range(NX):
                    for j in range(i + 1, NX):
                        s = 0.5 * (post[i * NX + j] + post[j * NX + i])
                        post[i * NX + j] = s
                        post[j * NX + i] = s
            else:
                for i in range(NX * NX):
                    post[i] = P[i]
            for i in range(NX):
                for j in range(NX):
                    covs[k + 1, i, j] = post[i * NX + j]
    if fail:
        raise ArithmeticError("innovation covariance is not positive definite")
    return covs_a, priors_a, gains_a
