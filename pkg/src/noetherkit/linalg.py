"""Dense real linear algebra on float64 numpy arrays.

Everything here is written against plain ndarray storage: LU inversion,
Householder QR, Jacobi eigen and singular value solvers, adaptive Simpson
quadrature and a Taylor matrix exponential.  The Jacobi solvers use the
round-robin (parallel) pair ordering so that each sweep is a handful of
vectorized column and row updates.
"""
import math

import numpy as np


class SingularMatrixError(ValueError):
    """Raised when LU elimination meets a pivot that is numerically zero."""

    def __init__(self, pivot, index):
        super().__init__(f"singular matrix: pivot {pivot:.3e} at column {index}")
        self.pivot = pivot
        self.index = index


class QuadratureError(RuntimeError):
    pass


def _as_matrix(a, name="a"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


def matmul(a, b):
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


def lu_factor(a, rel_tol=1e-12):
    """Partial-pivot LU.  Returns (lu, perm, sign) with L unit-lower in lu."""
    a = _as_matrix(a)
    n, m = a.shape
    if n != m:
        raise ValueError(f"square matrix required, got {a.shape}")
    lu = a.copy()
    perm = np.arange(n)
    sign = 1.0
    scale = np.max(np.abs(a)) if a.size else 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        pivot = lu[p, k]
        if abs(pivot) <= rel_tol * scale or scale == 0.0:
            raise SingularMatrixError(abs(pivot), k)
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
            sign = -sign
        lu[k + 1:, k] /= pivot
        lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])
    return lu, perm, sign


def lu_solve(lu, perm, b):
    b = np.asarray(b, dtype=np.float64)
    vec = b.ndim == 1
    x = (b[perm] if vec else b[perm, :]).astype(np.float64, copy=True)
    if vec:
        x = x[:, None]
    n = lu.shape[0]
    for i in range(n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x[:, 0] if vec else x


def inverse(a):
    lu, perm, _ = lu_factor(a)
    return lu_solve(lu, perm, np.eye(lu.shape[0]))


def det(a):
    """Determinant via LU; returns 0.0 for numerically singular input."""
    try:
        lu, _, sign = lu_factor(a)
    except SingularMatrixError:
        return 0.0
    return sign * float(np.prod(np.diag(lu)))


def qr(a):
    """Householder QR of a tall matrix: a = q @ r with q (m, n), r (n, n)."""
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        raise ValueError("qr needs rows >= cols")
    r = a.copy()
    vs = []
    for k in range(n):
        x = r[k:, k]
        alpha = math.sqrt(float(x @ x))
        v = x.copy()
        v[0] += alpha if x[0] >= 0 else -alpha
        vn = math.sqrt(float(v @ v))
        if vn == 0.0:
            vs.append(None)
            continue
        v /= vn
        r[k:, k:] -= 2.0 * np.outer(v, v @ r[k:, k:])
        vs.append(v)
    q = np.eye(m, n)
    for k in range(n - 1, -1, -1):
        v = vs[k]
        if v is not None:
            q[k:, :] -= 2.0 * np.outer(v, v @ q[k:, :])
    return q, np.triu(r[:n, :])


def _round_robin(n):
    """Pairings for one sweep: n-1 rounds (n even) covering every pair once."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        half = n // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        rounds.append((np.minimum(p, q), np.maximum(p, q)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _pairs_for(n):
    # odd sizes get a phantom index that is filtered out of each round
    m = n + (n % 2)
    out = []
    for p, q in _round_robin(m):
        keep = q < n
        out.append((p[keep], q[keep]))
    return out


def eigh_jacobi(a, max_sweeps=60, tol=1e-12):
    """Symmetric eigendecomposition by Jacobi rotations.

    Returns (w, v) with w ascending and a ≈ v @ diag(w) @ v.T.
    """
    a = _as_matrix(a)
    n = a.shape[0]
    if a.shape[1] != n:
        raise ValueError(f"square matrix required, got {a.shape}")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n == 1:
        return a[0].copy(), v
    fro = math.sqrt(float(np.sum(a * a)))
    rounds = _pairs_for(n)
    for _ in range(max_sweeps):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= tol * fro:
            break
        for p, q in rounds:
            apq = a[p, q]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.sign(theta) / (np.abs(theta) + np.hypot(theta, 1.0))
            t[theta == 0.0] = 1.0
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cp, cq = a[:, p], a[:, q]
            a[:, p], a[:, q] = c * cp - s * cq, s * cp + c * cq
            rp, rq = a[p, :], a[q, :]
            a[p, :], a[q, :] = c[:, None] * rp - s[:, None] * rq, s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def _complete_basis(phi, filled):
    """Replace columns of phi not in `filled` by an orthonormal completion."""
    m, n = phi.shape
    basis = [phi[:, j] for j in range(n) if filled[j]]
    for j in range(n):
        if filled[j]:
            continue
        for e in np.eye(m):
            x = e.copy()
            for _ in range(2):
                for b in basis:
                    x -= (b @ x) * b
            nx = math.sqrt(float(x @ x))
            if nx > 1e-8:
                phi[:, j] = x / nx
                basis.append(phi[:, j])
                break
    return phi


def svd_jacobi(a, max_sweeps=60, tol=1e-15):
    """Thin SVD by one-sided (Hestenes) Jacobi.

    Returns (phi, s, psi) with s descending and a ≈ phi @ diag(s) @ psi.T.
    For a of shape (m, n): phi is (m, k), psi is (n, k), k = min(m, n).
    """
    a = _as_matrix(a)
    m, n = a.shape
    if m < n:
        psi, s, phi = svd_jacobi(a.T, max_sweeps, tol)
        return phi, s, psi
    w = a.copy()
    v = np.eye(n)
    rounds = _pairs_for(n) if n > 1 else []
    for _ in range(max_sweeps):
        rotated = False
        for p, q in rounds:
            wp, wq = w[:, p], w[:, q]
            alpha = np.einsum("ij,ij->j", wp, wp)
            beta = np.einsum("ij,ij->j", wq, wq)
            gamma = np.einsum("ij,ij->j", wp, wq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            active &= gamma != 0.0
            if not np.any(active):
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta))
            t[zeta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            wp, wq = w[:, p], w[:, q]
            w[:, p], w[:, q] = c * wp - s * wq, s * wp + c * wq
            vp, vq = v[:, p], v[:, q]
            v[:, p], v[:, q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    sv = np.sqrt(np.einsum("ij,ij->j", w, w))
    order = np.argsort(-sv, kind="stable")
    sv, w, v = sv[order], w[:, order], v[:, order]
    cutoff = sv[0] * 1e-14 if sv.size and sv[0] > 0 else 0.0
    filled = sv > max(cutoff, 1e-300)
    phi = np.zeros((m, n))
    phi[:, filled] = w[:, filled] / sv[filled]
    if not np.all(filled):
        phi = _complete_basis(phi, filled)
    return phi, sv, v


def numerical_rank(a, rel_tol=1e-8):
    a = _as_matrix(a)
    if a.size == 0:
        return 0
    _, s, _ = svd_jacobi(a)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def pinv(a, rel_cutoff=1e-10):
    """Moore-Penrose pseudo-inverse via svd_jacobi with a relative cutoff."""
    phi, s, psi = svd_jacobi(a)
    keep = s > rel_cutoff * (s[0] if s.size else 0.0)
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (psi * inv) @ phi.T


def operator_norm(a, iters=50, tol=1e-10):
    """Largest singular value by power iteration on aᵀa."""
    a = _as_matrix(a)
    if not np.any(a):
        return 0.0
    x = np.ones(a.shape[1]) / math.sqrt(a.shape[1])
    # a deterministic start that is never orthogonal to the top right-singular vector
    x = x + a[np.argmax(np.sum(a * a, axis=1))]
    x /= math.sqrt(float(x @ x))
    est = 0.0
    for _ in range(iters):
        y = a.T @ (a @ x)
        ny = math.sqrt(float(y @ y))
        if ny == 0.0:
            break
        x = y / ny
        new = math.sqrt(ny)
        if abs(new - est) <= tol * new:
            est = new
            break
        est = new
    y = a @ x
    return math.sqrt(float(y @ y))


def integrate_adaptive(f, lo, hi, tol=1e-10, max_depth=50):
    """Adaptive Simpson quadrature with absolute tolerance `tol`."""
    if lo == hi:
        return 0.0

    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, eps, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, m)
        right = simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            return left + right + delta / 15.0
        if depth >= max_depth:
            raise QuadratureError(f"depth {max_depth} exhausted near [{a}, {b}]")
        return (recurse(a, m, fa, flm, fm, left, eps / 2.0, depth + 1)
                + recurse(m, b, fm, frm, fb, right, eps / 2.0, depth + 1))

    fa, fb = f(lo), f(hi)
    fm = f(0.5 * (lo + hi))
    for val in (fa, fm, fb):
        if not math.isfinite(val):
            raise QuadratureError("integrand is not finite on the interval")
    return recurse(lo, hi, fa, fm, fb, simpson(fa, fm, fb, lo, hi), tol, 0)


def expm(a, tol=1e-12):
    """Matrix exponential by scaling and squaring with a Taylor core."""
    a = _as_matrix(a)
    norm = float(np.max(np.sum(np.abs(a), axis=1))) if a.size else 0.0
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    b = a / (2.0 ** squarings)
    term = np.eye(a.shape[0])
    out = term.copy()
    for k in range(1, 40):
        term = term @ b / k
        out += term
        if np.max(np.abs(term)) <= tol * np.max(np.abs(out)):
            break
    for _ in range(squarings):
        out = out @ out
    return out
