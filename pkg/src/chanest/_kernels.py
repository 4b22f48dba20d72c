"""Compiled inner loops for the solvers.

The blocks handled here are tiny (typically 4 x 3), where LAPACK call
overhead dominates, so the SVD is a one-sided (Hestenes) Jacobi sweep over
column pairs.
"""
import numba as nb
import numpy as np

_JACOBI_TOL = 1e-15
_JACOBI_MAX_SWEEPS = 40


@nb.njit(cache=True)
def _jacobi_columns(W, V):
    # Orthogonalise the columns of W in place, accumulating the rotations in V
    # so that (input) @ V == W on exit.
    K, n = W.shape
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = 0.0
                beta = 0.0
                g = 0j
                for k in range(K):
                    wp = W[k, p]
                    wq = W[k, q]
                    alpha += wp.real * wp.real + wp.imag * wp.imag
                    beta += wq.real * wq.real + wq.imag * wq.imag
                    g += np.conj(wp) * wq
                ag = abs(g)
                # sqrt of each factor: the product underflows for tiny columns
                if ag == 0.0 or ag <= _JACOBI_TOL * np.sqrt(alpha) * np.sqrt(beta):
                    continue
                rotated = True
                ph = np.conj(g / ag)
                ph /= abs(ph)  # subnormal g loses the unit modulus
                zeta = (beta - alpha) / (2.0 * ag)
                sgn = 1.0 if zeta >= 0 else -1.0
                t = sgn / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                for k in range(K):
                    wp = W[k, p]
                    wq = W[k, q] * ph
                    W[k, p] = c * wp - s * wq
                    W[k, q] = s * wp + c * wq
                for k in range(n):
                    vp = V[k, p]
                    vq = V[k, q] * ph
                    V[k, p] = c * vp - s * vq
                    V[k, q] = s * vp + c * vq
        if not rotated:
            break


@nb.njit(cache=True)
def jacobi_svd(A):
    """Unsorted SVD of one matrix: returns ``(W, s, V)`` with ``A V = W``.

    Columns of ``W`` are orthogonal with norms ``s``; so ``A = (W / s) diag(s)
    V^H`` for nonzero ``s``.
    """
    K, n = A.shape
    W = A.copy()
    V = np.eye(n, dtype=np.complex128)
    _jacobi_columns(W, V)
    s = np.empty(n)
    for j in range(n):
        acc = 0.0
        for k in range(K):
            acc += W[k, j].real ** 2 + W[k, j].imag ** 2
        s[j] = np.sqrt(acc)
    return W, s, V


@nb.njit(cache=True)
def _gram_top(A):
    # Largest eigenvalue of A^H A: closed form for up to three columns,
    # otherwise the Gershgorin row-sum bound (an overestimate).
    K, n = A.shape
    Gm = np.zeros((n, n), dtype=np.complex128)
    for i in range(n):
        for j in range(i, n):
            g = 0j
            for k in range(K):
                g += np.conj(A[k, i]) * A[k, j]
            Gm[i, j] = g
            Gm[j, i] = np.conj(g)
    if n == 1:
        return Gm[0, 0].real
    if n == 2:
        a = Gm[0, 0].real
        d = Gm[1, 1].real
        off = abs(Gm[0, 1])
        return 0.5 * (a + d) + np.sqrt(0.25 * (a - d) ** 2 + off * off)
    if n == 3:
        a, b, c = Gm[0, 0].real, Gm[1, 1].real, Gm[2, 2].real
        p1 = abs(Gm[0, 1]) ** 2 + abs(Gm[0, 2]) ** 2 + abs(Gm[1, 2]) ** 2
        q = (a + b + c) / 3.0
        p2 = (a - q) ** 2 + (b - q) ** 2 + (c - q) ** 2 + 2.0 * p1
        if p2 <= 0.0:
            return q
        p = np.sqrt(p2 / 6.0)
        x, y, z = (a - q) / p, (b - q) / p, (c - q) / p
        u, v, w = Gm[0, 1] / p, Gm[0, 2] / p, Gm[1, 2] / p
        det = x * y * z - x * abs(w) ** 2 - y * abs(v) ** 2 - z * abs(u) ** 2 \
            + 2.0 * (u * w * np.conj(v)).real
        r = min(1.0, max(-1.0, 0.5 * det))
        return q + 2.0 * p * np.cos(np.arccos(r) / 3.0)
    best = 0.0
    for i in range(n):
        row = 0.0
        for j in range(n):
            row += abs(Gm[i, j])
        best = max(best, row)
    return best


@nb.njit(cache=True)
def _svt_into(A, mu, out, W, V):
    # out <- U (S - mu)_+ V^H using work buffers W (like A) and V (n x n);
    # returns the thresholded nuclear norm
    K, n = A.shape
    fro = 0.0
    for k in range(K):
        for l in range(n):
            W[k, l] = A[k, l]
            out[k, l] = 0j
            fro += A[k, l].real ** 2 + A[k, l].imag ** 2
    # all singular values at or below mu: the output is zero. The Frobenius
    # norm is a free first check; the margin covers rounding in the cubic.
    if fro <= mu * mu or _gram_top(A) <= mu * mu * (1.0 - 1e-9):
        return 0.0
    for k in range(n):
        for l in range(n):
            V[k, l] = 1.0 if k == l else 0.0
    _jacobi_columns(W, V)
    s = np.empty(n)
    smax = 0.0
    for j in range(n):
        acc = 0.0
        for k in range(K):
            acc += W[k, j].real ** 2 + W[k, j].imag ** 2
        s[j] = np.sqrt(acc)
        smax = max(smax, s[j])
    # shrinkage below rounding of the largest value counts as zero
    floor = 4 * 2.220446049250313e-16 * smax
    nuc = 0.0
    for j in range(n):
        sj = s[j]
        if sj - mu > floor:
            f = (sj - mu) / sj
            nuc += sj - mu
            for k in range(K):
                wk = f * W[k, j]
                for l in range(n):
                    out[k, l] += wk * np.conj(V[l, j])
    return nuc


@nb.njit(cache=True)
def svt_stack(X, mu):
    """Threshold every block of a ``(Q, K, L)`` stack.

    Returns the thresholded stack and the nuclear norm of each output block.
    """
    Q, K, n = X.shape
    out = np.empty_like(X)
    nuc = np.empty(Q)
    W = np.empty((K, n), dtype=np.complex128)
    V = np.empty((n, n), dtype=np.complex128)
    for q in range(Q):
        nuc[q] = _svt_into(X[q], mu, out[q], W, V)
    return out, nuc


@nb.njit(cache=True)
def nuclear_stack(X):
    Q, K, n = X.shape
    out = np.empty(Q)
    W = np.empty((K, n), dtype=np.complex128)
    V = np.empty((n, n), dtype=np.complex128)
    for q in range(Q):
        fro = 0.0
        for k in range(K):
            for l in range(n):
                W[k, l] = X[q, k, l]
                fro += W[k, l].real ** 2 + W[k, l].imag ** 2
        if fro == 0.0:
            out[q] = 0.0
            continue
        for k in range(n):
            for l in range(n):
                V[k, l] = 1.0 if k == l else 0.0
        _jacobi_columns(W, V)
        tot = 0.0
        for j in range(n):
            acc = 0.0
            for k in range(K):
                acc += W[k, j].real ** 2 + W[k, j].imag ** 2
            tot += np.sqrt(acc)
        out[q] = tot
    return out


@nb.njit(cache=True)
def bcd_updates(Rg, atoms, G, nuc_q, mu, q_start, count, ref, err_q, obj, step, err):
    """Run ``count`` cyclic block updates starting at block ``q_start``.

    ``Rg`` is the residual laid out as ``(gridded, K, L)``; it, ``G`` and
    ``nuc_q`` are updated in place. Per-update objective, step norm and (if
    ``ref`` is non-empty) distance to ``ref`` are written to the output
    arrays.
    """
    Gd, K, L = Rg.shape
    Q = G.shape[0]
    Z = np.empty((K, L), dtype=np.complex128)
    new = np.empty((K, L), dtype=np.complex128)
    W = np.empty((K, L), dtype=np.complex128)
    V = np.empty((L, L), dtype=np.complex128)
    have_ref = ref.shape[0] > 0
    for i in range(count):
        q = (q_start + i) % Q
        for k in range(K):
            for l in range(L):
                acc = G[q, k, l]
                for g in range(Gd):
                    acc += np.conj(atoms[g, q]) * Rg[g, k, l]
                Z[k, l] = acc
        snew = _svt_into(Z, mu, new, W, V)
        d2 = 0.0
        for k in range(K):
            for l in range(L):
                d = new[k, l] - G[q, k, l]
                d2 += d.real * d.real + d.imag * d.imag
        if d2 > 0.0:
            for k in range(K):
                for l in range(L):
                    d = new[k, l] - G[q, k, l]
                    for g in range(Gd):
                        Rg[g, k, l] -= atoms[g, q] * d
                    G[q, k, l] = new[k, l]
            nuc_q[q] = snew
            if have_ref:
                e2 = 0.0
                for k in range(K):
                    for l in range(L):
                        e = ref[q, k, l] - new[k, l]
                        e2 += e.real * e.real + e.imag * e.imag
                err_q[q] = e2
        r2 = 0.0
        for g in range(Gd):
            for k in range(K):
                for l in range(L):
                    v = Rg[g, k, l]
                    r2 += v.real * v.real + v.imag * v.imag
        obj[i] = 0.5 * r2 + mu * nuc_q.sum()
        step[i] = np.sqrt(d2)
        if have_ref:
            err[i] = np.sqrt(err_q.sum())
