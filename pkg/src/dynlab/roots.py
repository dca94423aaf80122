"""Batched polynomial root extraction.

Every preimage computation in the package reduces to finding all roots of
many polynomials of the same degree at once, so the solvers here operate on
coefficient matrices of shape ``(m, d + 1)`` (highest degree first, the
:func:`numpy.polyval` convention) and return roots of shape ``(m, d)``.
"""

from __future__ import annotations

import numpy as np

RESIDUAL_TOL = 1e-12
MAX_SWEEPS = 200


class RootFindingError(RuntimeError):
    """Raised when the simultaneous iteration fails to reach its residual tolerance."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


def _as_matrix(coeffs):
    c = np.asarray(coeffs, dtype=complex)
    if c.ndim == 1:
        c = c[None, :]
    return c


def _horner(c, z):
    """Value and derivative of each row polynomial at the matching row of ``z``."""
    p = np.zeros(z.shape, dtype=complex) + c[:, :1]
    dp = np.zeros(z.shape, dtype=complex)
    for j in range(1, c.shape[1]):
        dp = dp * z + p
        p = p * z + c[:, j:j + 1]
    return p, dp


def _scale(c, z):
    # sum |a_i| |z|^i, the natural backward-error normaliser
    a = np.abs(c)
    r = np.abs(z)
    s = np.zeros(z.shape) + a[:, :1]
    for j in range(1, c.shape[1]):
        s = s * r + a[:, j:j + 1]
    return s


def relative_residual(coeffs, roots):
    c = _as_matrix(coeffs)
    z = np.atleast_2d(np.asarray(roots, dtype=complex))
    p, _ = _horner(c, z)
    return np.abs(p) / np.maximum(_scale(c, z), np.finfo(float).tiny)


def quadratic_roots(coeffs):
    """Closed-form roots of rows ``a z^2 + b z + c`` using the cancellation-free formula."""
    c = _as_matrix(coeffs)
    a, b, k = c[:, 0], c[:, 1], c[:, 2]
    disc = np.sqrt(b * b - 4 * a * k)
    # pick the sign that avoids cancellation in -b -/+ disc
    sgn = np.where((np.conj(b) * disc).real >= 0, 1.0, -1.0)
    q = -0.5 * (b + sgn * disc)
    small = np.abs(q) == 0
    q = np.where(small, 1.0, q)
    r1 = np.where(small, 0.0, q / a)
    r2 = np.where(small, 0.0, k / q)
    return np.stack([r1, r2], axis=1)


def aberth_roots(coeffs, tol=RESIDUAL_TOL, max_sweeps=MAX_SWEEPS, init=None, strict=True):
    """Aberth-Ehrlich simultaneous iteration on every row of ``coeffs``.

    Parameters
    ----------
    coeffs : array_like, shape (m, d + 1) or (d + 1,)
        Polynomial coefficients, highest degree first. Leading entries must be nonzero.
    tol : float
        Relative backward-error tolerance on each root.
    max_sweeps : int
        Iteration cap.
    init : array_like, optional
        Warm-start roots of shape (m, d).
    strict : bool
        Raise :class:`RootFindingError` when some row misses the tolerance.

    Returns
    -------
    ndarray, shape (m, d)
    """
    c = _as_matrix(coeffs)
    m, n1 = c.shape
    d = n1 - 1
    if d < 1:
        return np.zeros((m, 0), dtype=complex)
    if np.any(c[:, 0] == 0):
        raise ValueError("leading coefficient vanishes")
    c = c / c[:, :1]
    if d == 1:
        return -c[:, 1:2]
    if init is None:
        # Fujiwara-type radius bound, spread on a rotated circle
        ratios = np.abs(c[:, 1:]) ** (1.0 / np.arange(1, d + 1))
        rad = 2.0 * ratios.max(axis=1)
        rad = np.where(rad > 0, rad, 1.0)
        ang = 2 * np.pi * np.arange(d) / d + 0.4
        z = rad[:, None] * 0.5 * np.exp(1j * ang)[None, :]
    else:
        z = np.array(init, dtype=complex).reshape(m, d)
    active = np.ones(m, dtype=bool)
    eye = np.eye(d, dtype=bool)
    for _ in range(max_sweeps):
        za = z[active]
        ca = c[active]
        p, dp = _horner(ca, za)
        res = np.abs(p) / np.maximum(_scale(ca, za), np.finfo(float).tiny)
        done = (res <= tol).all(axis=1)
        idx = np.flatnonzero(active)
        active[idx[done]] = False
        if not active.any():
            break
        za, p, dp = za[~done], p[~done], dp[~done]
        diff = za[:, :, None] - za[:, None, :]
        diff[:, eye] = 1.0
        inv = 1.0 / diff
        inv[:, eye] = 0.0
        s = inv.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = p / dp
            w = ratio / (1.0 - ratio * s)
        w = np.where(np.isfinite(w), w, 1e-3 * (1 + np.abs(za)))
        za = za - w
        z[idx[~done]] = za
    if strict and active.any():
        res = relative_residual(c[active], z[active])
        raise RootFindingError(
            f"{int(active.sum())} polynomial(s) did not converge in {max_sweeps} sweeps",
            residuals=res,
        )
    return z


def poly_roots(coeffs, tol=RESIDUAL_TOL):
    """All roots of a single polynomial (highest degree first), with leading zeros stripped."""
    c = np.trim_zeros(np.asarray(coeffs, dtype=complex), "f")
    if len(c) <= 1:
        return np.zeros(0, dtype=complex)
    # exact zero roots are split off; the relative residual is useless there
    core = np.trim_zeros(c, "b")
    zeros = np.zeros(len(c) - len(core), dtype=complex)
    if len(core) <= 1:
        return zeros
    if len(core) == 3:
        return np.concatenate([quadratic_roots(core)[0], zeros])
    return np.concatenate([aberth_roots(core, tol=tol)[0], zeros])


def batched_roots(coeffs, tol=RESIDUAL_TOL):
    c = _as_matrix(coeffs)
    if c.shape[1] == 3:
        return quadratic_roots(c)
    return aberth_roots(c, tol=tol)


def cluster_roots(roots, tol):
    """Group numerically coincident roots.

    Returns a list of ``(center, count)``; multiple roots of multiplicity ``m``
    come out of the iteration scattered at radius about ``eps**(1/m)``, so
    the tolerance must be generous.
    """
    roots = list(np.asarray(roots, dtype=complex))
    out = []
    used = [False] * len(roots)
    scale = max(1.0, max((abs(r) for r in roots), default=1.0))
    for i, r in enumerate(roots):
        if used[i]:
            continue
        group = [r]
        used[i] = True
        for j in range(i + 1, len(roots)):
            if not used[j] and abs(roots[j] - r) < tol * scale:
                group.append(roots[j])
                used[j] = True
        out.append((complex(np.mean(group)), len(group)))
    return out
