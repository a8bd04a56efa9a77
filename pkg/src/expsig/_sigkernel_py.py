"""Pure numpy implementation of the signature kernels.

Mirrors :mod:`expsig._sigkernel` operation by operation, vectorised over the
batch axis instead of compiled loops. Used when the extension is unavailable
or when ``EXPSIG_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np


def _layout(d, L):
    pw = [d**n for n in range(L + 1)]
    off = np.concatenate([[0], np.cumsum(pw)]).astype(int)
    return pw, off


def _levels(flat, off, L):
    return [flat[..., off[n] : off[n + 1]] for n in range(L + 1)]


def _mul_batch(a, b, d, L):
    pw, off = _layout(d, L)
    A, Bt = _levels(a, off, L), _levels(b, off, L)
    out = np.zeros_like(a)
    for n in range(L + 1):
        acc = out[..., off[n] : off[n + 1]]
        for i in range(n + 1):
            p = n - i
            acc += (A[p][..., :, None] * Bt[i][..., None, :]).reshape(acc.shape)
    return out


def tensor_mul(a, b, d, L):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    _, off = _layout(d, L)
    if a.shape[-1] != off[-1] or b.shape[-1] != off[-1]:
        raise ValueError("flat tensor length does not match (d, L)")
    return _mul_batch(a, b, d, L)


def _exp_batch(v, L):
    B, d = v.shape
    pw, off = _layout(d, L)
    out = np.empty((B, off[-1]))
    out[:, 0] = 1.0
    for n in range(1, L + 1):
        prev = out[:, off[n - 1] : off[n]]
        out[:, off[n] : off[n + 1]] = (prev[:, :, None] * v[:, None, :]).reshape(B, -1) / n
    return out


def _chen_step(S, v, d, L, off):
    B = S.shape[0]
    for n in range(L, 0, -1):
        u = S[:, :1] * v / n
        for k in range(1, n):
            u = u + S[:, off[k] : off[k + 1]]
            u = (u[:, :, None] * v[:, None, :]).reshape(B, -1) / (n - k)
        S[:, off[n] : off[n + 1]] += u


def sig_forward(incr, L):
    incr = np.ascontiguousarray(incr, dtype=np.float64)
    B, n_steps, d = incr.shape
    _, off = _layout(d, L)
    S = np.zeros((B, off[-1]))
    S[:, 0] = 1.0
    for s in range(n_steps):
        _chen_step(S, incr[:, s], d, L, off)
    return S


def _leftadj(a, G, d, L, off, pw):
    out = np.zeros_like(G)
    for i in range(L + 1):
        acc = out[:, off[i] : off[i + 1]]
        for n in range(i, L + 1):
            p = n - i
            Gn = G[:, off[n] : off[n + 1]].reshape(-1, pw[p], pw[i])
            acc += np.einsum("bj,bjk->bk", a[:, off[p] : off[p + 1]], Gn)
    return out


def _rightadj(b, G, d, L, off, pw):
    out = np.zeros_like(G)
    for j in range(L + 1):
        acc = out[:, off[j] : off[j + 1]]
        for n in range(j, L + 1):
            q = n - j
            Gn = G[:, off[n] : off[n + 1]].reshape(-1, pw[j], pw[q])
            acc += np.einsum("bjk,bk->bj", Gn, b[:, off[q] : off[q + 1]])
    return out


def _exp_vjp(v, H, d, L, off):
    B = v.shape[0]
    g = np.zeros((B, d))
    letters = "acdefghijklmnopqrstuvwxyz"
    for n in range(1, L + 1):
        Hn = H[:, off[n] : off[n + 1]].reshape((B,) + (d,) * n)
        idx = letters[:n]
        scale = 1.0 / math.factorial(n)
        for p in range(n):
            closed = [c for q, c in enumerate(idx) if q != p]
            spec = "b" + idx + "".join(",b" + c for c in closed) + "->b" + idx[p]
            g += scale * np.einsum(spec, Hn, *([v] * (n - 1)))
    return g


def sig_backward(incr, L, grad):
    incr = np.ascontiguousarray(incr, dtype=np.float64)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    B, n_steps, d = incr.shape
    pw, off = _layout(d, L)
    if grad.shape != (B, off[-1]):
        raise ValueError("cotangent shape does not match the signature shape")
    prefix = np.empty((n_steps + 1, B, off[-1]))
    prefix[0] = 0.0
    prefix[0][:, 0] = 1.0
    for s in range(n_steps):
        prefix[s + 1] = prefix[s]
        _chen_step(prefix[s + 1], incr[:, s], d, L, off)
    out = np.zeros((B, n_steps, d))
    Q = np.zeros((B, off[-1]))
    Q[:, 0] = 1.0
    for s in range(n_steps - 1, -1, -1):
        GR = _leftadj(prefix[s], grad, d, L, off, pw)
        GE = _rightadj(Q, GR, d, L, off, pw)
        out[:, s] = _exp_vjp(incr[:, s], GE, d, L, off)
        Q = _mul_batch(_exp_batch(incr[:, s], L), Q, d, L)
    return out


def _residual(a, lam, target):
    mu = lam * lam
    powers = mu[:, None] ** np.arange(1, a.shape[1] + 1)
    return 1.0 + np.sum(powers * a, axis=1) - target


def _dresidual(a, lam):
    mu = lam * lam
    n = np.arange(1, a.shape[1] + 1)
    return np.sum(2.0 * n * mu[:, None] ** n / lam[:, None] * a, axis=1)


def solve_dilation(level_sq, target, tol, max_iter):
    level_sq = np.ascontiguousarray(level_sq, dtype=np.float64)
    target = np.ascontiguousarray(target, dtype=np.float64)
    B = level_sq.shape[0]
    lam = np.ones(B)
    res = np.zeros(B)
    ok = np.ones(B, dtype=bool)
    active = level_sq.sum(axis=1) != 0.0
    if not active.any():
        return lam, res, ok
    a, t = level_sq[active], target[active]
    lo, hi = np.zeros(len(a)), np.ones(len(a))
    it = 0
    grow = _residual(a, hi, t) < 0.0
    while grow.any() and it < max_iter:
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)
        grow = _residual(a, hi, t) < 0.0
        it += 1
    wide = hi - lo > 1e-3 * hi
    while wide.any() and it < max_iter:
        mid = 0.5 * (lo + hi)
        neg = _residual(a, mid, t) < 0.0
        lo = np.where(wide & neg, mid, lo)
        hi = np.where(wide & ~neg, mid, hi)
        wide = hi - lo > 1e-3 * hi
        it += 1
    x = hi.copy()
    g = _residual(a, x, t)
    todo = np.abs(g) > tol
    while todo.any() and it < max_iter:
        dg = _dresidual(a, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            nxt = np.where(dg > 0.0, x - g / dg, -1.0)
        bad = (nxt <= lo) | (nxt >= hi)
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        stuck = nxt == x
        todo &= ~stuck
        x = np.where(todo, nxt, x)
        g = np.where(todo, _residual(a, x, t), g)
        lo = np.where(todo & (g < 0.0), x, lo)
        hi = np.where(todo & (g >= 0.0), x, hi)
        todo &= np.abs(g) > tol
        it += 1
    lam[active] = x
    res[active] = g
    ok[active] = np.abs(g) <= tol
    return lam, res, ok
