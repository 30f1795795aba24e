"""Volume of an energy / angular-momentum cell in the unobserved coordinates.

For a datum with projected radius R and line-of-sight velocity w, and a
depth s3 >= 0 along the line of sight, the rotated frame has

    r = sqrt(R^2 + s3^2),  cos(gamma) = s3 / r,  sin(gamma) = R / r.

In the plane of the unobserved velocities (v1, v2) the energy bound
E <= e is the disc v1^2 + v2^2 <= 2 (e - phi(r)) - w^2 and the angular
momentum bound L <= l is the (possibly degenerate) ellipse

    v1^2 + (v2 cos(gamma) - w sin(gamma))^2 <= (l / r)^2.

Areas of the annulus overlaps are assembled by inclusion-exclusion from
disc-ellipse intersection areas, each integrated in v1 strips with the
admissible v2 interval computed exactly.  Strips are split at the
circle/ellipse crossing points so every piece is smooth, and a cosine
map absorbs the square-root behaviour at vertical tangents.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from numba import njit

from .errors import GeometryError, QuadratureError

FOUR_PI_3 = 4.0 * math.pi / 3.0


@dataclass(frozen=True)
class OverlapConfig:
    n_v1: int = 64
    mc_samples: int = 1_000_000
    tol: float = 1e-6
    # compiled-kernel resolution used by the sampler
    kernel_v1_nodes: int = 6
    kernel_s3_nodes: int = 12
    kernel_panel_ratio: float = 2.0
    max_refine: int = 40

    def __post_init__(self):
        if self.n_v1 < 16 or self.tol <= 0:
            raise ValueError("OverlapConfig requires n_v1 >= 16 and tol > 0")


@dataclass(frozen=True)
class CellVolume:
    value: float
    k: int
    c: int
    d: int


@dataclass(frozen=True)
class CircleAnnulus:
    r_inner: float
    r_outer: float


@dataclass(frozen=True)
class EllipseAnnulus:
    """Region lam_inner <= sqrt(v1^2 + (cos_g v2 - shift)^2) <= lam_outer."""

    cos_gamma: float
    shift: float
    lam_inner: float
    lam_outer: float

    @property
    def degenerate(self):
        return self.cos_gamma <= 0.0

    @property
    def center(self):
        return self.shift / self.cos_gamma if self.cos_gamma > 0 else math.inf

    @property
    def semi_minor(self):
        return self.lam_inner, self.lam_outer

    @property
    def semi_major(self):
        if self.degenerate:
            return math.inf, math.inf
        return self.lam_inner / self.cos_gamma, self.lam_outer / self.cos_gamma


@lru_cache(maxsize=None)
def _gl01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x, w = 0.5 * (x + 1.0), 0.5 * w
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


@lru_cache(maxsize=None)
def _mapped_nodes(n):
    """Gauss-Legendre on [0, 1] pushed through u = (1 - cos(pi x)) / 2."""
    x, w = _gl01(n)
    u = 0.5 * (1.0 - np.cos(np.pi * x))
    du = 0.5 * np.pi * np.sin(np.pi * x) * w
    u.setflags(write=False)
    du.setflags(write=False)
    return u, du


# ----------------------------------------------------------------------------
# compiled kernels
# ----------------------------------------------------------------------------


@njit(cache=True)
def _phi_at(r, edges, rho, cum_mass, outer_int, m_total):
    n = rho.size
    if r >= edges[n]:
        return -m_total / r
    j = np.searchsorted(edges, r, side="right") - 1
    if j < 0:
        j = 0
    m = cum_mass[j] + FOUR_PI_3 * rho[j] * (r * r * r - edges[j] ** 3)
    outer = 0.5 * rho[j] * (edges[j + 1] ** 2 - r * r) + outer_int[j + 1]
    if r > 0.0:
        return -m / r - 4.0 * math.pi * outer
    return -4.0 * math.pi * outer


@njit(cache=True)
def _strip_length(v1, a2, lam2, c, t):
    h2 = a2 - v1 * v1
    if h2 <= 0.0:
        return 0.0
    q2 = lam2 - v1 * v1
    if q2 <= 0.0:
        return 0.0
    h = math.sqrt(h2)
    if c > 0.0:
        q = math.sqrt(q2)
        lo = (t - q) / c
        hi = (t + q) / c
        if lo < -h:
            lo = -h
        if hi > h:
            hi = h
        return hi - lo if hi > lo else 0.0
    return 2.0 * h if t * t <= q2 else 0.0


@njit(cache=True)
def _disc_ellipse_area(a2, lam2, c, t, w2, u, du):
    """Area of {v1^2+v2^2 <= a2} & {v1^2+(c v2-t)^2 <= lam2}.

    ``w2`` is the squared line-of-sight velocity; when lam2 >= a2 + w2 the
    ellipse covers the whole disc (tangential speed never exceeds speed).
    """
    if a2 <= 0.0 or lam2 <= 0.0:
        return 0.0
    if lam2 >= a2 + w2:
        return math.pi * a2
    upper = math.sqrt(min(a2, lam2))
    # crossings of the two boundary curves: (c^2-1) v2^2 - 2ct v2 + (t^2 - lam2 + a2) = 0
    qa = c * c - 1.0
    qb = -2.0 * c * t
    qc = t * t - lam2 + a2
    b1 = -1.0
    b2 = -1.0
    nroot = 0
    r1 = 0.0
    r2 = 0.0
    if abs(qa) < 1e-14:
        if qb != 0.0:
            r1 = -qc / qb
            nroot = 1
    else:
        disc = qb * qb - 4.0 * qa * qc
        if disc >= 0.0:
            sd = math.sqrt(disc)
            r1 = (-qb + sd) / (2.0 * qa)
            r2 = (-qb - sd) / (2.0 * qa)
            nroot = 2
    if nroot >= 1:
        rem = a2 - r1 * r1
        if rem > 0.0:
            v = math.sqrt(rem)
            if 0.0 < v < upper:
                b1 = v
    if nroot == 2:
        rem = a2 - r2 * r2
        if rem > 0.0:
            v = math.sqrt(rem)
            if 0.0 < v < upper:
                b2 = v
    if b1 > b2:
        b1, b2 = b2, b1
    total = 0.0
    lo = 0.0
    for seg in range(3):
        if seg == 0:
            hi = b1 if b1 > 0.0 else (b2 if b2 > 0.0 else upper)
        elif seg == 1:
            if b1 > 0.0 and b2 > 0.0:
                hi = b2
            elif b1 > 0.0 or b2 > 0.0:
                hi = upper
            else:
                break
        else:
            if b1 > 0.0 and b2 > 0.0:
                hi = upper
            else:
                break
        width = hi - lo
        if width > 0.0:
            acc = 0.0
            for j in range(u.size):
                acc += du[j] * _strip_length(lo + width * u[j], a2, lam2, c, t)
            total += width * acc
        lo = hi
    return 2.0 * total


@njit(cache=True)
def _los_energy_limit(R, w2, e, s_cap, edges, rho, cum_mass, outer_int, m_total):
    """Largest s3 in [0, s_cap] with 2(e - phi) - w^2 >= 0 (phi rises along the line of sight)."""
    r_cap = math.sqrt(R * R + s_cap * s_cap)
    if 2.0 * (e - _phi_at(r_cap, edges, rho, cum_mass, outer_int, m_total)) - w2 > 0.0:
        return s_cap
    lo = 0.0
    hi = s_cap
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        r = math.sqrt(R * R + mid * mid)
        if 2.0 * (e - _phi_at(r, edges, rho, cum_mass, outer_int, m_total)) - w2 > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * (hi + R):
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _cumulative_volumes(rp, w, e_edges, l_edges, r_out, edges, rho, cum_mass, outer_int, m_total,
                        s_x, s_w, u, du, ratio, out):
    n_data = rp.size
    ne = e_edges.size - 1
    nl = l_edges.size - 1
    for k in range(n_data):
        R = rp[k]
        wk = w[k]
        w2 = wk * wk
        s_cap = math.sqrt(max(r_out * r_out - R * R, 0.0))
        phi_R = _phi_at(R, edges, rho, cum_mass, outer_int, m_total)
        for i in range(1, ne + 1):
            e = e_edges[i]
            if 2.0 * (e - phi_R) - w2 <= 0.0 or s_cap <= 0.0:
                continue
            s_hi = _los_energy_limit(R, w2, e, s_cap, edges, rho, cum_mass, outer_int, m_total)
            p_lo = 0.0
            p_hi = min(R, s_hi)
            while True:
                width = p_hi - p_lo
                for j in range(s_x.size):
                    s = p_lo + width * s_x[j]
                    ws = width * s_w[j]
                    r = math.sqrt(R * R + s * s)
                    a2 = 2.0 * (e - _phi_at(r, edges, rho, cum_mass, outer_int, m_total)) - w2
                    if a2 <= 0.0:
                        continue
                    c = s / r
                    t = wk * R / r
                    for m in range(1, nl + 1):
                        lam = l_edges[m] / r
                        out[k, i, m] += ws * _disc_ellipse_area(a2, lam * lam, c, t, w2, u, du)
                if p_hi >= s_hi:
                    break
                p_lo = p_hi
                p_hi = min(p_hi * ratio, s_hi)


# ----------------------------------------------------------------------------
# geometry of a single datum / cell
# ----------------------------------------------------------------------------


def _los_geometry(datum, s3):
    R = datum.rp
    r = math.hypot(R, s3)
    if r <= 0.0:
        raise GeometryError("zero radius on the line of sight")
    return R, r, s3 / r, R / r


def annulus_circle_radii(c, datum, s3, pot, grid):
    """Inner and outer disc radii of energy bin ``c`` (1-based) at depth s3, or None."""
    if s3 < 0:
        raise ValueError("s3 must be non-negative")
    _, r, _, _ = _los_geometry(datum, s3)
    scale = -pot.phi_at_zero
    e_lo = grid.eps_edges[c - 1] * scale
    e_hi = grid.eps_edges[c] * scale
    phi = float(pot.phi(r))
    w2 = datum.v3**2
    rad_lo = 2.0 * e_lo - 2.0 * phi - w2
    rad_hi = 2.0 * e_hi - 2.0 * phi - w2
    if rad_hi < 0.0:
        return None
    return CircleAnnulus(math.sqrt(max(rad_lo, 0.0)), math.sqrt(rad_hi))


def annulus_ellipse_params(d, datum, s3, grid, lmax0):
    """Elliptical annulus of angular-momentum bin ``d`` (1-based) at depth s3."""
    if s3 < 0:
        raise ValueError("s3 must be non-negative")
    _, r, cos_g, sin_g = _los_geometry(datum, s3)
    l_lo = grid.ell_edges[d - 1] * lmax0
    l_hi = grid.ell_edges[d] * lmax0
    return EllipseAnnulus(cos_g, datum.v3 * sin_g, l_lo / r, l_hi / r)


def _area_pair(a2, lam2, ell, w2, u, du):
    return _disc_ellipse_area(a2, lam2, ell.cos_gamma, ell.shift, w2, u, du)


def overlap_area(circle, ellipse, cfg=OverlapConfig(), w2=math.inf):
    """Area of the overlap of a circular and an elliptical annulus in (v1, v2).

    Either argument may be None (empty annulus).  ``w2`` (squared
    line-of-sight speed) only enables the covering shortcut and may be
    left at its default.
    """
    if circle is None or ellipse is None:
        return 0.0
    u, du = _mapped_nodes(max(16, cfg.n_v1 // 4))
    ao2, ai2 = circle.r_outer**2, circle.r_inner**2
    lo2, li2 = ellipse.lam_outer**2, ellipse.lam_inner**2
    area = (
        _area_pair(ao2, lo2, ellipse, w2, u, du)
        - _area_pair(ai2, lo2, ellipse, w2, u, du)
        - _area_pair(ao2, li2, ellipse, w2, u, du)
        + _area_pair(ai2, li2, ellipse, w2, u, du)
    )
    return max(area, 0.0)


def s3_max(c, d, datum, pot, grid, lmax0, n_scan=512):
    """Largest depth at which cell (c, d) can be populated.

    Uses the turning-point bound 2 r^2 (e_hi - phi(r)) >= l_lo^2 with the
    cell's most permissive corner, over r <= pot.r_out.
    """
    R = datum.rp
    s_cap = math.sqrt(max(pot.r_out**2 - R**2, 0.0))
    e_hi = grid.eps_edges[c] * (-pot.phi_at_zero)
    l_lo = grid.ell_edges[d - 1] * lmax0

    def feas(s):
        r = np.hypot(R, s)
        return 2.0 * r**2 * (e_hi - pot.phi(r)) - l_lo**2

    s = np.linspace(0.0, s_cap, n_scan + 1)
    g = feas(s)
    ok = np.nonzero(g >= 0.0)[0]
    if ok.size == 0:
        return 0.0
    j = ok[-1]
    if j == n_scan:
        return s_cap
    lo, hi = s[j], s[j + 1]
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if feas(mid) >= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-12 * max(hi, 1.0):
            break
    return float(lo)


def _simpson(f, a, b, fa, fm, fb):
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def cell_volume(k, datum, c, d, pot, grid, lmax0, cfg=OverlapConfig()):
    """Triple integral over (s3, v1, v2) of cell (c, d) for one datum.

    Adaptive Simpson in s3 on [0, s3_max] with interval halving until the
    local Richardson estimate meets ``cfg.tol`` (relative to the running
    total).
    """
    top = s3_max(c, d, datum, pot, grid, lmax0)
    if top <= 0.0:
        return CellVolume(0.0, k, c, d)
    w2 = datum.v3**2

    def area(s):
        return overlap_area(
            annulus_circle_radii(c, datum, s, pot, grid),
            annulus_ellipse_params(d, datum, s, grid, lmax0),
            cfg,
            w2,
        )

    # geometric starting panels so that structure near s3 ~ R is resolved
    R = datum.rp
    pts = [0.0]
    p = min(R / 4.0, top)
    while p < top:
        pts.append(p)
        p *= 2.0
    pts.append(top)
    pts = sorted(set(pts))
    cache = {}

    def fv(s):
        if s not in cache:
            cache[s] = area(s)
        return cache[s]

    stack = []
    for a, b in zip(pts[:-1], pts[1:]):
        m = 0.5 * (a + b)
        stack.append((a, b, 0, _simpson(fv, a, b, fv(a), fv(m), fv(b))))
    total = 0.0
    coarse_total = sum(x[3] for x in stack)
    # roundoff floor: the disc area at s3 = 0 bounds every slice
    a2 = 2.0 * (grid.eps_edges[c] * (-pot.phi_at_zero) - float(pot.phi(R))) - w2
    floor = 1e-12 * math.pi * max(a2, 0.0) * top
    worst = 0.0
    while stack:
        a, b, depth, whole = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        left = _simpson(fv, a, m, fv(a), fv(lm), fv(m))
        right = _simpson(fv, m, b, fv(m), fv(rm), fv(b))
        err = abs(left + right - whole)
        budget = max(cfg.tol * abs(coarse_total), floor, 1e-300) * (b - a) / top
        if err <= 15.0 * budget or err < 1e-300:
            total += left + right + (left + right - whole) / 15.0
        elif depth >= cfg.max_refine:
            worst = max(worst, err)
            raise QuadratureError(
                "cell volume quadrature did not converge",
                {"k": k, "c": c, "d": d, "interval": (a, b), "error": err},
            )
        else:
            stack.append((a, m, depth + 1, left))
            stack.append((m, b, depth + 1, right))
    return CellVolume(max(total, 0.0), k, c, d)


# ----------------------------------------------------------------------------
# batched evaluation used by the likelihood
# ----------------------------------------------------------------------------


def cumulative_volume_table(rp, v3, pot, grid, lmax0, cfg=OverlapConfig()):
    """Volumes of {E <= e_i, L <= l_m} for every datum and every grid edge.

    Returns an array of shape (n_data, n_eps + 1, n_ell + 1).
    """
    rp = np.ascontiguousarray(rp, dtype=float)
    v3 = np.ascontiguousarray(v3, dtype=float)
    e_edges = grid.eps_edges * (-pot.phi_at_zero)
    l_edges = grid.ell_edges * lmax0
    out = np.zeros((rp.size, grid.n_eps + 1, grid.n_ell + 1))
    s_x, s_w = _gl01(cfg.kernel_s3_nodes)
    u, du = _mapped_nodes(cfg.kernel_v1_nodes)
    edges, rho, cum_mass, outer_int, m_total = pot.kernel_arrays()
    _cumulative_volumes(rp, v3, e_edges, l_edges, float(pot.r_out), edges, rho, cum_mass, outer_int,
                        m_total, s_x, s_w, u, du, float(cfg.kernel_panel_ratio), out)
    return out


def cells_from_cumulative(cum):
    """Inclusion-exclusion over the last two axes of a cumulative table."""
    cells = cum[..., 1:, 1:] - cum[..., :-1, 1:] - cum[..., 1:, :-1] + cum[..., :-1, :-1]
    return np.maximum(cells, 0.0)


def volume_table(rp, v3, pot, grid, lmax0, cfg=OverlapConfig()):
    """Cell volumes for every datum: array of shape (n_data, n_eps, n_ell)."""
    return cells_from_cumulative(cumulative_volume_table(rp, v3, pot, grid, lmax0, cfg))


def _shell_window(r, r_lo, r_hi):
    """Area of the sphere of radius r whose projected radius lies in [r_lo, r_hi]."""

    def below(R):
        inner = 4.0 * np.pi * r * (r - np.sqrt(np.clip(r * r - R * R, 0.0, None)))
        return np.where(R >= r, 4.0 * np.pi * r * r, inner)

    return below(r_hi) - below(r_lo)


def phase_volume_table(pot, grid, lmax0, r_lo, r_hi, n_nodes=64):
    """Full phase-space volume of each cell restricted to projected radii in [r_lo, r_hi].

    Integrates, over radius, the shell window times the velocity volume
    {v_r^2 + v_t^2 <= 2(e - phi), v_t <= l / r}, which is closed form:
    (4 pi / 3) [rho^3 - (rho^2 - min(l/r, rho)^2)^(3/2)].
    Returns an (n_eps, n_ell) array.
    """
    e_edges = grid.eps_edges * (-pot.phi_at_zero)
    l_edges = grid.ell_edges * lmax0
    u, du = _mapped_nodes(n_nodes)
    cum = np.zeros((grid.n_eps + 1, grid.n_ell + 1))
    for i in range(1, grid.n_eps + 1):
        e = e_edges[i]
        r_stop = _radius_of_energy(e, pot)
        bounds = sorted({r_lo, min(r_hi, r_stop), r_stop})
        bounds = [b for b in bounds if r_lo <= b <= r_stop]
        for a, b in zip(bounds[:-1], bounds[1:]):
            if b <= a:
                continue
            r = a + (b - a) * u
            wgt = (b - a) * du * _shell_window(r, r_lo, r_hi)
            rho2 = np.clip(2.0 * (e - pot.phi(r)), 0.0, None)
            vmax = np.sqrt(rho2)
            lt = np.minimum(l_edges[None, :] / r[:, None], vmax[:, None])
            g = FOUR_PI_3 * (vmax[:, None] ** 3 - np.clip(rho2[:, None] - lt**2, 0.0, None) ** 1.5)
            cum[i] += wgt @ g
    return cells_from_cumulative(cum)


def _radius_of_energy(e, pot):
    """Radius where phi(r) = e, capped at r_out."""
    if hasattr(pot, "kernel_arrays"):
        return _radius_of_energy_kernel(e, float(pot.r_out), *pot.kernel_arrays())
    if float(pot.phi(pot.r_out)) <= e:
        return float(pot.r_out)
    lo, hi = 0.0, float(pot.r_out)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if float(pot.phi(mid)) < e:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)


@njit(cache=True)
def _radius_of_energy_kernel(e, r_out, edges, rho, cum_mass, outer_int, m_total):
    if _phi_at(r_out, edges, rho, cum_mass, outer_int, m_total) <= e:
        return r_out
    lo = 0.0
    hi = r_out
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _phi_at(mid, edges, rho, cum_mass, outer_int, m_total) < e:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * hi:
            break
    return 0.5 * (lo + hi)
