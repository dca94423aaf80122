"""Julia-set membership rasters on dyadic grids.

Corners of a ``(2**k + 1)``-square lattice are iterated. For polynomials a
corner is *bounded*, *escaping*, or *slow* (escaping, but with a potential
distance estimate below one cell side). A cell is a member when its
corners disagree or any corner is slow. Rational maps use basin labels of
the attracting cycles instead of escape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .maps import PoleProximityError, classify_orbit, critical_points, evaluate_and_derivative
from .parallel import ordered_map

BOUNDED = 0
ESCAPED = 1
SLOW = 2
CAPTURE_TOL = 1e-4
ROW_CHUNK = 64
SLOW_FACTOR = 1.0


@dataclass
class DyadicRaster:
    bbox: tuple
    k: int
    bits: np.ndarray  # bool, shape (2**k, 2**k), row 0 at y_min
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = 2 ** self.k
        if self.bits.shape != (n, n):
            raise ValueError(f"bits must have shape {(n, n)}")
        self.bits = self.bits.astype(bool)

    @property
    def side(self):
        return 2 ** self.k

    @property
    def cell_size(self):
        return (self.bbox[1] - self.bbox[0]) / self.side

    def count(self):
        return int(self.bits.sum())

    def coarsen(self, level):
        """Raster at resolution ``2**level`` (a coarse cell is set if any sub-cell is)."""
        if level > self.k or level < 0:
            raise ValueError("level outside 0..k")
        f = 2 ** (self.k - level)
        n = 2 ** level
        b = self.bits.reshape(n, f, n, f).any(axis=(1, 3))
        return DyadicRaster(self.bbox, level, b, dict(self.meta))

    def cell_centers(self):
        iy, ix = np.nonzero(self.bits)
        h = self.cell_size
        x = self.bbox[0] + (ix + 0.5) * h
        y = self.bbox[2] + (iy + 0.5) * (self.bbox[3] - self.bbox[2]) / self.side
        return x + 1j * y

    def to_pgm(self, path):
        header = "P5\n# bbox {} {} {} {}\n".format(*(repr(float(v)) for v in self.bbox))
        for key in sorted(self.meta):
            header += f"# {key} {self.meta[key]!r}\n"
        header += f"{self.side} {self.side}\n255\n"
        img = np.where(self.bits[::-1], 255, 0).astype(np.uint8)
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            fh.write(img.tobytes())

    @classmethod
    def from_pgm(cls, path):
        with open(path, "rb") as fh:
            data = fh.read()
        tokens, comments, pos = [], [], 0
        while len(tokens) < 4:
            while data[pos:pos + 1].isspace():
                pos += 1
            if data[pos:pos + 1] == b"#":
                end = data.index(b"\n", pos)
                comments.append(data[pos + 1:end].decode().strip())
                pos = end + 1
                continue
            end = pos
            while not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end].decode())
            pos = end
        pos += 1
        if tokens[0] != "P5":
            raise ValueError("not a binary PGM file")
        w, h = int(tokens[1]), int(tokens[2])
        if w != h or w & (w - 1):
            raise ValueError("raster must be square with a power-of-two side")
        bbox, meta = None, {}
        for c in comments:
            key, _, rest = c.partition(" ")
            if key == "bbox":
                bbox = tuple(float(v) for v in rest.split())
            elif rest:
                try:
                    meta[key] = float(rest) if "." in rest or "e" in rest else int(rest)
                except ValueError:
                    meta[key] = rest
        if bbox is None:
            raise ValueError("missing '# bbox' comment")
        img = np.frombuffer(data[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
        return cls(bbox, int(np.log2(w)), img[::-1] > 127, meta)


def attracting_cycles(fmap, crit=None, max_iter=2000):
    """Attracting cycles found from critical orbits (each attracts a critical point)."""
    crit = critical_points(fmap, max_iter=max_iter) if crit is None else crit
    cycles = []
    for c in crit:
        if c.at_infinity and fmap.is_polynomial:
            continue
        if c.at_infinity:
            p, q = fmap.num_coeffs, fmap.den_coeffs
            start = p[0] / q[0] if len(p) == len(q) else 0j
        else:
            start = c.location
        state, info = classify_orbit(fmap, start, max_iter=max_iter)
        if info.get("reason") != "cycle" or state != "no":
            continue
        period = info["period"]
        pts = np.array(info["orbit"][-period:])
        if any(np.min(np.abs(pts[:, None] - cyc[None, :])) < 1e-8 for cyc in cycles):
            continue
        cycles.append(pts)
    return cycles


def _escape_bound(fmap):
    p = fmap.num_coeffs
    return 1.0 + float(np.abs(p[1:]).sum() / abs(p[0])) + 1.0 / abs(p[0])


def _corner_states_poly(fmap, z, max_iter, radius, cycles, cell):
    state = np.full(z.shape, BOUNDED, dtype=np.int8)
    w = z.copy()
    dw = np.ones_like(z)
    idx = np.arange(z.size)
    w, dw = w.ravel(), dw.ravel()
    st = state.ravel()
    cyc = np.concatenate(cycles) if cycles else np.zeros(0, dtype=complex)
    for _ in range(max_iter):
        if idx.size == 0:
            break
        f, df = evaluate_and_derivative(fmap, w[idx])
        dw_new = df * dw[idx]
        w[idx] = f
        dw[idx] = dw_new
        mod = np.abs(f)
        out = mod > radius
        if out.any():
            j = idx[out]
            m = mod[out]
            est = m * np.log(m) / np.maximum(np.abs(dw_new[out]), 1e-300)
            st[j] = np.where(est < SLOW_FACTOR * cell, SLOW, ESCAPED)
        keep = ~out
        if cyc.size:
            near = np.min(np.abs(f[:, None] - cyc[None, :]), axis=1) < CAPTURE_TOL
            keep &= ~near
        idx = idx[keep]
    return state


def _corner_labels_rational(fmap, z, max_iter, cycles):
    # label = index of the attracting cycle reached, -1 if unresolved
    w = z.ravel().copy()
    label = np.full(w.shape, -1, dtype=np.int16)
    idx = np.arange(w.size)
    pts = np.concatenate(cycles)
    owner = np.concatenate([np.full(len(c), i) for i, c in enumerate(cycles)])
    for _ in range(max_iter):
        if idx.size == 0:
            break
        with np.errstate(all="ignore"):
            try:
                f, _ = evaluate_and_derivative(fmap, w[idx], pole_tol=0.0)
            except PoleProximityError:  # pragma: no cover - tolerance is zero
                f = w[idx]
        f = np.where(np.isfinite(f), f, 1e300)
        w[idx] = f
        dist = np.abs(f[:, None] - pts[None, :])
        hit = dist.min(axis=1) < CAPTURE_TOL
        label[idx[hit]] = owner[np.argmin(dist[hit], axis=1)]
        idx = idx[~hit]
    return label.reshape(z.shape)


def julia_membership_grid(fmap, bbox, k, max_iter=500, escape_radius=None):
    """Rasterize the Julia set of ``fmap`` on a ``2**k`` square grid over ``bbox``.

    Parameters
    ----------
    fmap : MapSpec
    bbox : tuple
        ``(x_min, x_max, y_min, y_max)``; must be a square.
    k : int
        Resolution exponent, 1 <= k <= 13.
    max_iter : int
        Iteration cap for each corner.
    escape_radius : float, optional
        For polynomials; defaults to ``max(100, 1 + sum |a_i / a_d|)``.

    Returns
    -------
    DyadicRaster
    """
    x0, x1, y0, y1 = (float(v) for v in bbox)
    if not (x1 > x0 and y1 > y0) or abs((x1 - x0) - (y1 - y0)) > 1e-12 * (x1 - x0):
        raise ValueError("bbox must be a nondegenerate square")
    if not (1 <= int(k) <= 13) or max_iter < 1:
        raise ValueError("resolution exponent must lie in 1..13 and max_iter >= 1")
    n = 2 ** k
    cell = (x1 - x0) / n
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    cycles = attracting_cycles(fmap)
    polynomial = fmap.is_polynomial
    if polynomial:
        bound = _escape_bound(fmap)
        radius = max(100.0, bound) if escape_radius is None else float(escape_radius)
        if radius < bound:
            raise ValueError(f"escape radius must be at least {bound:.6g}")
    elif not cycles:
        raise ValueError("no attracting cycle found; rational rasters need basin labels")

    def rows(start):
        stop = min(start + ROW_CHUNK, n + 1)
        z = xs[None, :] + 1j * ys[start:stop, None]
        if polynomial:
            return _corner_states_poly(fmap, z, max_iter, radius, cycles, cell)
        return _corner_labels_rational(fmap, z, max_iter, cycles)

    corners = np.concatenate(ordered_map(rows, range(0, n + 1, ROW_CHUNK)), axis=0)
    a, b = corners[:-1, :-1], corners[:-1, 1:]
    c, d = corners[1:, :-1], corners[1:, 1:]
    if polynomial:
        esc = [v != BOUNDED for v in (a, b, c, d)]
        mixed = ~((esc[0] == esc[1]) & (esc[1] == esc[2]) & (esc[2] == esc[3]))
        slow = (a == SLOW) | (b == SLOW) | (c == SLOW) | (d == SLOW)
        bits = mixed | slow
        meta = {"escape_radius": radius, "max_iter": int(max_iter)}
    else:
        mixed = ~((a == b) & (b == c) & (c == d))
        unresolved = (a < 0) | (b < 0) | (c < 0) | (d < 0)
        bits = mixed | unresolved
        meta = {"escape_radius": 0.0, "max_iter": int(max_iter)}
    return DyadicRaster((x0, x1, y0, y1), int(k), bits, meta)


def filled_raster(k, bbox=(0.0, 1.0, 0.0, 1.0)):
    """All-ones raster, the area test case for box counting."""
    n = 2 ** k
    return DyadicRaster(tuple(bbox), k, np.ones((n, n), dtype=bool), {})
