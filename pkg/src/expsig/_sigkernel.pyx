# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for truncated signatures.

Tensors use the flat layout ``[level 0 | level 1 | ... | level L]`` with the
level-n block holding ``d**n`` row-major coefficients. The pure-Python twin
lives in :mod:`expsig._sigkernel_py` and must stay numerically equivalent.
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, free
from libc.string cimport memcpy, memset
from libc.math cimport fabs

cnp.import_array()


cdef struct Layout:
    int d
    int L
    Py_ssize_t size
    Py_ssize_t* off
    Py_ssize_t* pw


cdef int _layout_init(Layout* lay, int d, int L) except -1:
    cdef int n
    lay.d = d
    lay.L = L
    lay.off = <Py_ssize_t*> malloc((L + 2) * sizeof(Py_ssize_t))
    lay.pw = <Py_ssize_t*> malloc((L + 1) * sizeof(Py_ssize_t))
    if lay.off == NULL or lay.pw == NULL:
        raise MemoryError()
    lay.pw[0] = 1
    lay.off[0] = 0
    for n in range(1, L + 1):
        lay.pw[n] = lay.pw[n - 1] * d
    for n in range(1, L + 2):
        lay.off[n] = lay.off[n - 1] + lay.pw[n - 1]
    lay.size = lay.off[L + 1]
    return 0


cdef void _layout_free(Layout* lay) noexcept:
    free(lay.off)
    free(lay.pw)


cdef void _unit(const Layout* lay, double* out) noexcept nogil:
    memset(out, 0, lay.size * sizeof(double))
    out[0] = 1.0


cdef void _mul(const Layout* lay, const double* a, const double* b, double* out) noexcept nogil:
    cdef int n, i, p
    cdef Py_ssize_t ia, ib, base
    cdef double av
    memset(out, 0, lay.size * sizeof(double))
    for n in range(lay.L + 1):
        for i in range(n + 1):
            p = n - i
            for ia in range(lay.pw[p]):
                av = a[lay.off[p] + ia]
                if av == 0.0:
                    continue
                base = lay.off[n] + ia * lay.pw[i]
                for ib in range(lay.pw[i]):
                    out[base + ib] += av * b[lay.off[i] + ib]


cdef void _exp(const Layout* lay, const double* v, double* out) noexcept nogil:
    cdef int n, c
    cdef Py_ssize_t j
    cdef int d = lay.d
    out[0] = 1.0
    for n in range(1, lay.L + 1):
        for j in range(lay.pw[n - 1]):
            for c in range(d):
                out[lay.off[n] + j * d + c] = out[lay.off[n - 1] + j] * v[c] / n


cdef void _chen_step(const Layout* lay, double* S, const double* v, double* t1, double* t2) noexcept nogil:
    # S <- S (x) exp(v), Horner form, top level first so lower levels are still old.
    cdef int n, k, c
    cdef Py_ssize_t j
    cdef int d = lay.d
    cdef double* tmp
    for n in range(lay.L, 0, -1):
        for c in range(d):
            t1[c] = S[0] * v[c] / n
        for k in range(1, n):
            for j in range(lay.pw[k]):
                t1[j] += S[lay.off[k] + j]
            for j in range(lay.pw[k]):
                for c in range(d):
                    t2[j * d + c] = t1[j] * v[c] / (n - k)
            tmp = t1
            t1 = t2
            t2 = tmp
        for j in range(lay.pw[n]):
            S[lay.off[n] + j] += t1[j]


cdef void _leftadj(const Layout* lay, const double* a, const double* G, double* out) noexcept nogil:
    # Cotangent of b in <a (x) b, G>.
    cdef int i, n, p
    cdef Py_ssize_t ja, jb, base
    cdef double av
    memset(out, 0, lay.size * sizeof(double))
    for i in range(lay.L + 1):
        for n in range(i, lay.L + 1):
            p = n - i
            for ja in range(lay.pw[p]):
                av = a[lay.off[p] + ja]
                if av == 0.0:
                    continue
                base = lay.off[n] + ja * lay.pw[i]
                for jb in range(lay.pw[i]):
                    out[lay.off[i] + jb] += av * G[base + jb]


cdef void _rightadj(const Layout* lay, const double* b, const double* G, double* out) noexcept nogil:
    # Cotangent of a in <a (x) b, G>.
    cdef int j, n, q
    cdef Py_ssize_t ja, jb, base
    cdef double acc
    memset(out, 0, lay.size * sizeof(double))
    for j in range(lay.L + 1):
        for n in range(j, lay.L + 1):
            q = n - j
            for ja in range(lay.pw[j]):
                base = lay.off[n] + ja * lay.pw[q]
                acc = 0.0
                for jb in range(lay.pw[q]):
                    acc += G[base + jb] * b[lay.off[q] + jb]
                out[lay.off[j] + ja] += acc


cdef void _exp_vjp(const Layout* lay, const double* v, const double* H, double* g,
                   int* digits, double* pre, double* suf) noexcept nogil:
    cdef int n, p, c
    cdef Py_ssize_t idx, rem
    cdef int d = lay.d
    cdef double fact = 1.0, h
    for c in range(d):
        g[c] = 0.0
    for n in range(1, lay.L + 1):
        fact *= n
        for idx in range(lay.pw[n]):
            h = H[lay.off[n] + idx]
            if h == 0.0:
                continue
            rem = idx
            for p in range(n - 1, -1, -1):
                digits[p] = rem % d
                rem = rem // d
            pre[0] = 1.0
            for p in range(n):
                pre[p + 1] = pre[p] * v[digits[p]]
            suf[n] = 1.0
            for p in range(n - 1, -1, -1):
                suf[p] = suf[p + 1] * v[digits[p]]
            for p in range(n):
                g[digits[p]] += h * pre[p] * suf[p + 1] / fact


def tensor_mul(const double[::1] a, const double[::1] b, int d, int L):
    cdef Layout lay
    _layout_init(&lay, d, L)
    out = np.empty(lay.size, dtype=np.float64)
    cdef double[::1] o = out
    try:
        if a.shape[0] != lay.size or b.shape[0] != lay.size:
            raise ValueError("flat tensor length does not match (d, L)")
        _mul(&lay, &a[0], &b[0], &o[0])
    finally:
        _layout_free(&lay)
    return out


def sig_forward(const double[:, :, ::1] incr, int L):
    """Signatures of a batch of piecewise-linear paths from their increments."""
    cdef Py_ssize_t B = incr.shape[0], n_steps = incr.shape[1], b, s
    cdef int d = incr.shape[2]
    cdef Layout lay
    _layout_init(&lay, d, L)
    out = np.empty((B, lay.size), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double* t1 = <double*> malloc((lay.pw[L] + d) * sizeof(double))
    cdef double* t2 = <double*> malloc((lay.pw[L] + d) * sizeof(double))
    try:
        if t1 == NULL or t2 == NULL:
            raise MemoryError()
        with nogil:
            for b in range(B):
                _unit(&lay, &o[b, 0])
                for s in range(n_steps):
                    _chen_step(&lay, &o[b, 0], &incr[b, s, 0], t1, t2)
    finally:
        free(t1)
        free(t2)
        _layout_free(&lay)
    return out


def sig_backward(const double[:, :, ::1] incr, int L, const double[:, ::1] grad):
    """Vector-Jacobian product of :func:`sig_forward` with respect to the increments."""
    cdef Py_ssize_t B = incr.shape[0], n_steps = incr.shape[1], b, s
    cdef int d = incr.shape[2]
    cdef Layout lay
    _layout_init(&lay, d, L)
    if grad.shape[0] != B or grad.shape[1] != lay.size:
        _layout_free(&lay)
        raise ValueError("cotangent shape does not match the signature shape")
    out = np.zeros((B, n_steps, d), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    cdef Py_ssize_t size = lay.size
    cdef double* prefix = <double*> malloc((n_steps + 1) * size * sizeof(double))
    cdef double* Q = <double*> malloc(size * sizeof(double))
    cdef double* Qn = <double*> malloc(size * sizeof(double))
    cdef double* E = <double*> malloc(size * sizeof(double))
    cdef double* GR = <double*> malloc(size * sizeof(double))
    cdef double* GE = <double*> malloc(size * sizeof(double))
    cdef double* t1 = <double*> malloc((lay.pw[L] + d) * sizeof(double))
    cdef double* t2 = <double*> malloc((lay.pw[L] + d) * sizeof(double))
    cdef int* digits = <int*> malloc((L + 1) * sizeof(int))
    cdef double* pre = <double*> malloc((L + 2) * sizeof(double))
    cdef double* suf = <double*> malloc((L + 2) * sizeof(double))
    cdef double* tmp
    try:
        if (prefix == NULL or Q == NULL or Qn == NULL or E == NULL or GR == NULL
                or GE == NULL or t1 == NULL or t2 == NULL or digits == NULL
                or pre == NULL or suf == NULL):
            raise MemoryError()
        with nogil:
            for b in range(B):
                _unit(&lay, prefix)
                for s in range(n_steps):
                    memcpy(prefix + (s + 1) * size, prefix + s * size, size * sizeof(double))
                    _chen_step(&lay, prefix + (s + 1) * size, &incr[b, s, 0], t1, t2)
                _unit(&lay, Q)
                for s in range(n_steps - 1, -1, -1):
                    _leftadj(&lay, prefix + s * size, &grad[b, 0], GR)
                    _rightadj(&lay, Q, GR, GE)
                    _exp_vjp(&lay, &incr[b, s, 0], GE, &o[b, s, 0], digits, pre, suf)
                    _exp(&lay, &incr[b, s, 0], E)
                    _mul(&lay, E, Q, Qn)
                    tmp = Q
                    Q = Qn
                    Qn = tmp
    finally:
        free(prefix); free(Q); free(Qn); free(E); free(GR); free(GE)
        free(t1); free(t2); free(digits); free(pre); free(suf)
        _layout_free(&lay)
    return out


cdef double _residual(const double* a, int L, double lam, double target) noexcept nogil:
    cdef double mu = lam * lam, p = 1.0, acc = 1.0
    cdef int n
    for n in range(L):
        p *= mu
        acc += p * a[n]
    return acc - target


cdef double _dresidual(const double* a, int L, double lam) noexcept nogil:
    cdef double mu = lam * lam, p = 1.0 / lam, acc = 0.0
    cdef int n
    for n in range(L):
        p *= mu
        acc += 2.0 * (n + 1) * p * a[n]
    return acc


def solve_dilation(const double[:, ::1] level_sq, const double[::1] target, double tol, int max_iter):
    """Solve ``1 + sum_n lam**(2n) level_sq[:, n-1] = target`` for each row.

    Returns ``(lam, residual, converged)`` arrays.
    """
    cdef Py_ssize_t B = level_sq.shape[0], b
    cdef int L = level_sq.shape[1], it, n
    lam_out = np.ones(B, dtype=np.float64)
    res_out = np.zeros(B, dtype=np.float64)
    ok_out = np.ones(B, dtype=np.uint8)
    cdef double[::1] lam_v = lam_out
    cdef double[::1] res_v = res_out
    cdef unsigned char[::1] ok_v = ok_out
    cdef double lo, hi, lam, g, dg, nxt, total
    with nogil:
        for b in range(B):
            total = 0.0
            for n in range(L):
                total += level_sq[b, n]
            if total == 0.0:
                continue
            lo = 0.0
            hi = 1.0
            it = 0
            while _residual(&level_sq[b, 0], L, hi, target[b]) < 0.0 and it < max_iter:
                lo = hi
                hi *= 2.0
                it += 1
            # coarse bisection, then safeguarded Newton
            while hi - lo > 1e-3 * hi and it < max_iter:
                lam = 0.5 * (lo + hi)
                if _residual(&level_sq[b, 0], L, lam, target[b]) < 0.0:
                    lo = lam
                else:
                    hi = lam
                it += 1
            lam = hi
            g = _residual(&level_sq[b, 0], L, lam, target[b])
            while fabs(g) > tol and it < max_iter:
                dg = _dresidual(&level_sq[b, 0], L, lam)
                nxt = lam - g / dg if dg > 0.0 else -1.0
                if nxt <= lo or nxt >= hi:
                    nxt = 0.5 * (lo + hi)
                if nxt == lam:
                    break
                lam = nxt
                g = _residual(&level_sq[b, 0], L, lam, target[b])
                if g < 0.0:
                    lo = lam
                else:
                    hi = lam
                it += 1
            lam_v[b] = lam
            res_v[b] = g
            ok_v[b] = 1 if fabs(g) <= tol else 0
    return lam_out, res_out, ok_out.astype(bool)
