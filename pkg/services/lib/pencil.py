"""
Model operator pencil of an orbit.

For an OrbitModel the pencil acts on angular profiles phi_j(omega). Each
profile is written in the fundamental system (u0, u1) of its angle, so the
pencil reduces to a 2N x 2N characteristic matrix M(lambda): row (j, sigma)
holds the nonlocal condition on side sigma of angle j, column (k, beta) the
coefficient of u_beta on angle k. Eigenvalues are zeros of det M.

Band eigenvalues are located with the argument principle on a rectangle,
refined by recursive bisection and Newton's method; the closed bottom edge
Im lambda = -1 is scanned separately.
"""
import cmath
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la
from scipy.integrate import solve_ivp

from services.lib.errors import AmbiguousSpectrum, ContourOnZero, NumericalError, WindingPrecisionError
from services.lib.geometry import OrbitModel, PrincipalPart, freeze_model, side_row

logger = logging.getLogger("pencil")

BAND = (-1.0, 0.0)
TOP_GAP = 1e-6
SHOOTING_RTOL = 1e-13
SHOOTING_ATOL = 1e-14
FD_STEP = 1e-6
TAYLOR_RADIUS = 1e-2
TAYLOR_POINTS = 32
RANK_CUT = 1e-8
RANK_GAP = 1e2
PROPER_TOL = 1e-8
POLY_RESIDUAL_OK = 1e-6
POLY_RESIDUAL_AMBIGUOUS = 1e-3
POLY_SAMPLES = 64
EDGE_SCAN_STEP = 0.01
NEWTON_MAX_ITER = 100
DEDUPE_TOL = 1e-7
SHOOTING_AGREEMENT = 1e-8


# ---------------------------------------------------------------------------
# Fundamental system
# ---------------------------------------------------------------------------

def _laplace_system(lam: complex, omegas: np.ndarray):
    z = lam * omegas
    u0 = np.cosh(z)
    # sinh(z)/lambda without the removable singularity at lambda = 0
    u1 = omegas * np.sinc(1j * z / np.pi)
    du0 = lam * np.sinh(z)
    du1 = np.cosh(z)
    return u0, u1, du0, du1


def _characteristic_roots(part: PrincipalPart) -> Tuple[complex, complex]:
    """Roots tau of p22 tau^2 + 2 p12 tau + p11 = 0; P annihilates (y1 + tau y2)^mu"""
    root = math.sqrt(part.p11 * part.p22 - part.p12 ** 2)
    return complex(-part.p12, root) / part.p22, complex(-part.p12, -root) / part.p22


def _elliptic_system(part: PrincipalPart, lam: complex, omegas: np.ndarray):
    """
    Closed form for a constant-coefficient elliptic principal part.

    phi(w) = (cos w + tau sin w)^mu, mu = i lambda, for both roots tau.
    The base never crosses the negative real axis for |w| < pi, so the
    principal logarithm is continuous along every side.
    """
    mu = 1j * lam
    tp, tm = _characteristic_roots(part)
    c, s = np.cos(omegas), np.sin(omegas)
    zp, zm = c + tp * s, c + tm * s
    lp, lm = np.log(zp), np.log(zm)
    ep, em = np.exp(mu * lp), np.exp(mu * lm)
    dp, dm = (tp * c - s) / zp, (tm * c - s) / zm
    gap = tp - tm
    u0 = (tp * em - tm * ep) / gap
    du0 = mu * (tp * dm * em - tm * dp * ep) / gap
    half = (lp - lm) / 2
    # (e^(mu lp) - e^(mu lm)) / (mu gap) without the removable singularity at mu = 0
    u1 = np.exp(mu * (lp + lm) / 2) * 2 * half * np.sinc(1j * mu * half / np.pi) / gap
    du1 = (ep * dp - em * dm) / gap
    return u0, u1, du0, du1


def _shooting_system(model: OrbitModel, j: int, lam: complex, omegas: np.ndarray):
    """Both normalized solutions by DOP853, one integration per direction from omega = 0"""
    part = model.principal_part(j)
    mu = 1j * lam

    def rhs(w, y):
        a, s, r = part.polar_coefficients(w)
        k0 = (mu * (mu - 1) * r + mu * a) / a
        k1 = 2 * (mu - 1) * s / a
        return np.array([y[1], -k1 * y[1] - k0 * y[0], y[3], -k1 * y[3] - k0 * y[2]])

    y0 = np.array([1.0, 0.0, 0.0, 1.0], dtype=complex)
    out = np.zeros((4, omegas.size), dtype=complex)
    out[:, omegas == 0.0] = y0[:, None]
    for sign in (1.0, -1.0):
        mask = sign * omegas > 0.0
        if not mask.any():
            continue
        targets = np.unique(omegas[mask])
        end = float(targets[-1] if sign > 0 else targets[0])
        sol = solve_ivp(rhs, (0.0, end), y0, method="DOP853", t_eval=targets if sign > 0 else targets[::-1],
                        rtol=SHOOTING_RTOL, atol=SHOOTING_ATOL)
        if not sol.success:
            raise NumericalError(f"[angle {j}] shooting failed at lambda={lam}: {sol.message}")
        idx = np.searchsorted(targets, omegas[mask])
        out[:, mask] = sol.y[:, idx if sign > 0 else targets.size - 1 - idx]
    return out[0], out[2], out[1], out[3]


def fundamental_system(model: OrbitModel, j: int, lam: complex, omegas,
                       method: str = "auto") -> Tuple[np.ndarray, ...]:
    """
    Normalized solutions of the angular equation of angle j.

    u0, u1 satisfy (u, u')(0) = (1, 0) and (0, 1). With method "auto" Laplace
    angles use cosh(lambda w), sinh(lambda w)/lambda and other elliptic
    principal parts the closed form in their characteristic roots. Method
    "shooting" integrates the angular equation from omega = 0 instead.

    Returns:
        (u0, u1, du0, du1) sampled at omegas
    """
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if method == "shooting":
        return _shooting_system(model, j, complex(lam), omegas)
    if method != "auto":
        raise ValueError(f"unknown fundamental-system method {method!r}")
    part = model.principal_part(j)
    if part.is_laplace:
        return _laplace_system(complex(lam), omegas)
    return _elliptic_system(part, complex(lam), omegas)


def second_derivatives(model: OrbitModel, j: int, lam: complex, omegas, u, du):
    """u'' from the angular equation, given u and u' at omegas"""
    mu = 1j * lam
    a, s, r = model.principal_part(j).polar_coefficients(np.asarray(omegas, dtype=float))
    return -(2 * (mu - 1) * s * du + (mu * (mu - 1) * r + mu * a) * u) / a


# ---------------------------------------------------------------------------
# Characteristic matrix
# ---------------------------------------------------------------------------

def characteristic_matrix(model: OrbitModel, lam: complex, method: str = "auto") -> np.ndarray:
    """
    M(lambda) with rows (j, sigma) -> 2j + sigma - 1, columns (k, beta) -> 2k + beta.

    Entry: sum over terms of chi^(i lambda) b(0) u_beta^k((-1)^sigma w_j + rotation),
    with chi^(i lambda) = exp(i lambda ln chi).
    Identity terms must be present (see freeze_model).
    """
    lam = complex(lam)
    size = 2 * model.n_angles
    m = np.zeros((size, size), dtype=complex)
    for t in model.terms:
        theta = model.image_angle(t)
        u0, u1, _, _ = fundamental_system(model, t.k, lam, [theta], method)
        factor = t.weight_at_vertex * cmath.exp(1j * lam * math.log(t.homothety))
        row = side_row(t.j, t.sigma)
        m[row, 2 * t.k] += factor * u0[0]
        m[row, 2 * t.k + 1] += factor * u1[0]
    return m


def shooting_mismatch(model: OrbitModel, lam: complex) -> float:
    """Entrywise gap between the shot and the closed-form M(lambda), relative to max(1, |M|)"""
    closed = characteristic_matrix(model, lam)
    shot = characteristic_matrix(model, lam, method="shooting")
    return float(np.abs(shot - closed).max() / max(1.0, np.abs(closed).max()))


def _laplace_lambda_derivative(lam: complex, theta: float) -> Tuple[complex, complex]:
    z = lam * theta
    d0 = theta * cmath.sinh(z)
    if abs(z) < 1e-3:
        d1 = lam * theta ** 3 / 3 + lam ** 3 * theta ** 5 / 30 + lam ** 5 * theta ** 7 / 840
    else:
        d1 = theta * cmath.cosh(z) / lam - cmath.sinh(z) / lam ** 2
    return d0, d1


def characteristic_derivative(model: OrbitModel, lam: complex) -> np.ndarray:
    """dM/dlambda; closed form on Laplace angles, central differences otherwise"""
    lam = complex(lam)
    if not model.is_laplace:
        return (characteristic_matrix(model, lam + FD_STEP) - characteristic_matrix(model, lam - FD_STEP)) / (2 * FD_STEP)
    size = 2 * model.n_angles
    dm = np.zeros((size, size), dtype=complex)
    for t in model.terms:
        theta = model.image_angle(t)
        log_chi = math.log(t.homothety)
        e = cmath.exp(1j * lam * log_chi)
        u0, u1, _, _ = _laplace_system(lam, np.array([theta]))
        d0, d1 = _laplace_lambda_derivative(lam, theta)
        row = side_row(t.j, t.sigma)
        dm[row, 2 * t.k] += t.weight_at_vertex * e * (1j * log_chi * u0[0] + d0)
        dm[row, 2 * t.k + 1] += t.weight_at_vertex * e * (1j * log_chi * u1[0] + d1)
    return dm


def char_det(model: OrbitModel, lam: complex) -> complex:
    """det M(lambda) by LU with partial pivoting"""
    lu, piv = la.lu_factor(characteristic_matrix(model, lam), check_finite=False)
    swaps = int(np.sum(piv != np.arange(piv.size)))
    return complex(np.prod(np.diag(lu)) * (-1) ** swaps)


def _scaled_det(model: OrbitModel, lam: complex) -> Tuple[complex, float]:
    """det M and the Hadamard bound (product of row norms)"""
    m = characteristic_matrix(model, lam)
    bound = float(np.prod(np.maximum(np.linalg.norm(m, axis=1), 1e-300)))
    lu, piv = la.lu_factor(m, check_finite=False)
    swaps = int(np.sum(piv != np.arange(piv.size)))
    return complex(np.prod(np.diag(lu)) * (-1) ** swaps), bound


def log_derivative(model: OrbitModel, lam: complex) -> complex:
    """d/dlambda log det M = tr(M^-1 M')"""
    m = characteristic_matrix(model, lam)
    dm = characteristic_derivative(model, lam)
    try:
        return complex(np.trace(la.solve(m, dm, check_finite=False)))
    except (la.LinAlgError, ValueError):
        return complex("inf")


def taylor_coefficients(model: OrbitModel, lam0: complex, order: int,
                        radius: float = TAYLOR_RADIUS, points: int = TAYLOR_POINTS) -> List[np.ndarray]:
    """T_q = M^(q)(lambda0)/q!, q = 0..order, by the Cauchy integral on a circle (FFT)"""
    theta = 2 * np.pi * np.arange(points) / points
    samples = np.array([characteristic_matrix(model, lam0 + radius * np.exp(1j * a)) for a in theta])
    coeffs = np.fft.fft(samples, axis=0) / points
    out = [characteristic_matrix(model, lam0)]
    for q in range(1, order + 1):
        out.append(coeffs[q] / radius ** q)
    return out


# ---------------------------------------------------------------------------
# Winding numbers
# ---------------------------------------------------------------------------

@dataclass
class _ContourSampler:
    model: OrbitModel
    evaluations: int = 0
    on_zero: bool = False

    def value(self, lam: complex) -> complex:
        self.evaluations += 1
        det, bound = _scaled_det(self.model, lam)
        if abs(det) <= 1e-13 * bound:
            self.on_zero = True
        return det


def _phase_along(sampler: _ContourSampler, a: complex, b: complex, fa: complex, fb: complex,
                 depth: int = 0) -> float:
    """Accumulated arg change of det along the segment [a, b], bisecting until it is resolved"""
    if fa == 0 or fb == 0:
        sampler.on_zero = True
        return 0.0
    delta = cmath.phase(fb / fa)
    if depth >= 40:
        sampler.on_zero = True
        return delta
    length = abs(b - a)
    reach = 1.0 / max(abs(log_derivative(sampler.model, a)), 1e-300)
    if abs(delta) < math.pi / 4 and length <= reach:
        return delta
    mid = (a + b) / 2
    fm = sampler.value(mid)
    return (_phase_along(sampler, a, mid, fa, fm, depth + 1)
            + _phase_along(sampler, mid, b, fm, fb, depth + 1))


def _winding(model: OrbitModel, vertices: Sequence[complex], per_edge: int = 16) -> Tuple[float, bool]:
    """Winding number of det M around the closed polygon through vertices"""
    sampler = _ContourSampler(model)
    nodes = []
    for a, b in zip(vertices, list(vertices[1:]) + [vertices[0]]):
        nodes.extend(a + (b - a) * np.arange(per_edge) / per_edge)
    values = [sampler.value(z) for z in nodes]
    total = 0.0
    for n in range(len(nodes)):
        m = (n + 1) % len(nodes)
        total += _phase_along(sampler, nodes[n], nodes[m], values[n], values[m])
    return total / (2 * math.pi), sampler.on_zero


def _rectangle(re_lo: float, re_hi: float, im_lo: float, im_hi: float) -> List[complex]:
    return [complex(re_lo, im_lo), complex(re_hi, im_lo), complex(re_hi, im_hi), complex(re_lo, im_hi)]


def _circle(center: complex, radius: float, points: int = 16) -> List[complex]:
    return [center + radius * cmath.exp(2j * math.pi * n / points) for n in range(points)]


def _integer_winding(model: OrbitModel, vertices: Sequence[complex], what: str) -> int:
    w, on_zero = _winding(model, vertices)
    if on_zero:
        raise ContourOnZero(f"det M vanishes on the {what}")
    n = round(w)
    if abs(w - n) > 0.25:
        raise WindingPrecisionError(f"Winding number {w:.4f} on the {what} is not near an integer")
    return int(n)


def count_zeros_in_band(model: OrbitModel, band: Tuple[float, float] = (-1 + TOP_GAP, -TOP_GAP),
                        re_window: Tuple[float, float] = (-8.0, 8.0), retries: int = 5) -> int:
    """
    Zeros of det M inside the rectangle re_window x band, with multiplicity.

    A contour that passes through a zero is dilated by 1% per retry.

    Raises:
        ContourOnZero: still on a zero after all retries
    """
    re_lo, re_hi = re_window
    im_lo, im_hi = band
    for attempt in range(retries + 1):
        grow = 0.01 * attempt
        dx, dy = grow * (re_hi - re_lo) / 2, grow * (im_hi - im_lo) / 2
        try:
            return _integer_winding(model, _rectangle(re_lo - dx, re_hi + dx, im_lo - dy, im_hi + dy),
                                    f"contour of orbit {model.orbit_id}")
        except ContourOnZero:
            logger.warning(f"[orbit {model.orbit_id}] contour passes through a zero, dilating (retry {attempt + 1})")
    raise ContourOnZero(f"[orbit {model.orbit_id}] contour still on a zero after {retries} dilations")


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------

def _newton(model: OrbitModel, z: complex, multiplicity: int = 1) -> Optional[complex]:
    """Newton's method on det M, modified for a known multiplicity"""
    for _ in range(NEWTON_MAX_ITER):
        ld = log_derivative(model, z)
        if not cmath.isfinite(ld):
            return z
        if ld == 0:
            return None
        step = multiplicity / ld
        z = z - step
        if abs(step) < 1e-14 * max(1.0, abs(z)):
            return z
    return None


def _multiplicity(model: OrbitModel, z: complex, radius: float = 1e-4) -> int:
    for r in (radius, radius / 7.3, radius * 3.1):
        try:
            return _integer_winding(model, _circle(z, r), "multiplicity circle")
        except ContourOnZero:
            continue
    raise ContourOnZero(f"Cannot isolate the zero at {z}")


@dataclass
class _Box:
    re_lo: float
    re_hi: float
    im_lo: float
    im_hi: float

    def contains(self, z: complex, margin: float = 0.0) -> bool:
        return (self.re_lo - margin <= z.real <= self.re_hi + margin
                and self.im_lo - margin <= z.imag <= self.im_hi + margin)

    def split(self, fraction: float = 0.4871) -> Tuple["_Box", "_Box"]:
        if self.re_hi - self.re_lo >= self.im_hi - self.im_lo:
            cut = self.re_lo + fraction * (self.re_hi - self.re_lo)
            return _Box(self.re_lo, cut, self.im_lo, self.im_hi), _Box(cut, self.re_hi, self.im_lo, self.im_hi)
        cut = self.im_lo + fraction * (self.im_hi - self.im_lo)
        return _Box(self.re_lo, self.re_hi, self.im_lo, cut), _Box(self.re_lo, self.re_hi, cut, self.im_hi)


def _split_with_winding(model: OrbitModel, box: _Box, count: int) -> Tuple[_Box, int, _Box, int]:
    """Bisect a box; the cut is moved off any zero it would pass through"""
    for fraction in (0.4871, 0.4871 + 1.7e-3, 0.5213, 0.4562):
        first, second = box.split(fraction)
        try:
            n1 = _integer_winding(model, _rectangle(first.re_lo, first.re_hi, first.im_lo, first.im_hi), "sub-box")
        except ContourOnZero:
            continue
        return first, n1, second, count - n1
    raise ContourOnZero(f"[orbit {model.orbit_id}] every cut of the box passes through a zero")


def _resolve_box(model: OrbitModel, box: _Box, count: int, found: List[Tuple[complex, int]],
                 unresolved: List[dict], depth: int = 0) -> None:
    if count == 0:
        return
    center = complex((box.re_lo + box.re_hi) / 2, (box.im_lo + box.im_hi) / 2)
    if count <= 4:
        for mult in (count, 1):
            z = _newton(model, center, mult)
            if z is not None and box.contains(z, 1e-9):
                m = _multiplicity(model, z)
                if m == count:
                    found.append((z, m))
                    return
                break
    if depth >= 60 or max(box.re_hi - box.re_lo, box.im_hi - box.im_lo) < 1e-9:
        logger.warning(f"[orbit {model.orbit_id}] unresolved box around {center} with winding {count}")
        unresolved.append({"center": center, "winding": count})
        return
    first, n1, second, n2 = _split_with_winding(model, box, count)
    _resolve_box(model, first, n1, found, unresolved, depth + 1)
    _resolve_box(model, second, n2, found, unresolved, depth + 1)


def _edge_scan(model: OrbitModel, im: float, re_window: Tuple[float, float]) -> List[Tuple[complex, int]]:
    """Zeros on the closed edge Im lambda = im, from local minima of |det| refined by Newton"""
    re_lo, re_hi = re_window
    grid = np.round(np.linspace(re_lo, re_hi, int(round((re_hi - re_lo) / EDGE_SCAN_STEP)) + 1), 12)
    scaled = np.array([abs(d) / b for d, b in (_scaled_det(model, complex(x, im)) for x in grid)])
    found: List[Tuple[complex, int]] = []
    for n in range(grid.size):
        left = scaled[n - 1] if n > 0 else np.inf
        right = scaled[n + 1] if n + 1 < grid.size else np.inf
        if not (scaled[n] <= left and scaled[n] <= right):
            continue
        z = _newton(model, complex(grid[n], im))
        if z is None or not (im - 1e-9 <= z.imag <= im + TOP_GAP) or not (re_lo <= z.real <= re_hi):
            continue
        det, bound = _scaled_det(model, z)
        if abs(det) > 1e-10 * bound:
            continue
        if any(abs(z - w) < DEDUPE_TOL for w, _ in found):
            continue
        found.append((z, _multiplicity(model, z)))
    return found


def find_eigenvalues(model: OrbitModel, band: Tuple[float, float] = BAND,
                     re_window: Tuple[float, float] = (-8.0, 8.0)) -> Tuple[List[Tuple[complex, int]], int, List[dict]]:
    """
    Eigenvalues in the band im_lo <= Im lambda < im_hi.

    The open top edge is realized as Im lambda <= im_hi - 1e-6; the closed
    bottom edge is scanned explicitly.

    Returns:
        (list of (lambda, algebraic multiplicity), argument-principle count,
         unresolved boxes)
    """
    model = freeze_model(model)
    im_lo, im_hi = band
    interior = _Box(re_window[0], re_window[1], im_lo + TOP_GAP, im_hi - TOP_GAP)
    count = count_zeros_in_band(model, (interior.im_lo, interior.im_hi), re_window)
    found: List[Tuple[complex, int]] = []
    unresolved: List[dict] = []
    _resolve_box(model, interior, count, found, unresolved)
    edge = _edge_scan(model, im_lo, re_window)
    total = count + sum(m for _, m in edge)
    eigen = sorted(found + edge, key=lambda e: (-e[0].imag, e[0].real))
    logger.info(f"[orbit {model.orbit_id}] {len(eigen)} eigenvalue(s) in band, argument-principle count {total}")
    return eigen, total, unresolved


# ---------------------------------------------------------------------------
# Jordan structure and proper eigenvalues
# ---------------------------------------------------------------------------

@dataclass
class PencilEigenvalue:
    lam: complex
    algebraic_multiplicity: int
    partial_multiplicities: Tuple[int, ...] = ()
    eigenvectors: Tuple[np.ndarray, ...] = field(default=(), repr=False)
    chains: Tuple[Tuple[np.ndarray, ...], ...] = field(default=(), repr=False)
    has_associated: Tuple[bool, ...] = ()
    proper: Optional[bool] = None
    proper_residual: float = float("nan")
    rank_ambiguous: bool = False

    def to_dict(self) -> Dict[str, object]:
        return {
            "re": self.lam.real,
            "im": self.lam.imag,
            "mult": self.algebraic_multiplicity,
            "partial_multiplicities": list(self.partial_multiplicities),
            "proper": self.proper,
            "proper_residual": self.proper_residual,
            "rank_ambiguous": self.rank_ambiguous,
        }


def _normalize(vec: np.ndarray) -> np.ndarray:
    k = int(np.argmax(np.abs(vec)))
    return vec * (abs(vec[k]) / vec[k]) / np.linalg.norm(vec)


def jordan_structure(model: OrbitModel, lam0: complex, algebraic_multiplicity: int = 1) -> PencilEigenvalue:
    """
    Eigenvectors and Jordan chains of the pencil at lam0.

    Null space by SVD with rank cut sigma_min/sigma_max < 1e-8. Chains solve
    sum_{q=0..p} T_q c^(p-q) = 0 with T_q the Taylor coefficients of M.
    """
    m = characteristic_matrix(model, lam0)
    u, sv, vh = la.svd(m)
    smax = max(float(sv[0]), 1e-300)
    null = [n for n, s in enumerate(sv) if s / smax < RANK_CUT]
    ambiguous = False
    if null:
        first_null = null[0]
        if first_null > 0 and sv[first_null - 1] / max(sv[first_null], 1e-300) < RANK_GAP:
            ambiguous = True
    elif sv[-1] / smax < RANK_CUT * RANK_GAP:
        ambiguous = True
    if not null:
        null = [sv.size - 1]
        ambiguous = True
    if ambiguous:
        logger.warning(f"[orbit {model.orbit_id}] rank decision at lambda={lam0:.6g} is ambiguous (singular values {sv})")

    left = u[:, null].conj().T
    max_len = max(1, algebraic_multiplicity) + 1
    taylor = taylor_coefficients(model, lam0, max_len)
    scale = max(np.linalg.norm(t) for t in taylor)

    vectors, chains, flags, lengths = [], [], [], []
    for n in null:
        c0 = _normalize(vh[n].conj())
        chain = [c0]
        while len(chain) < max_len:
            p = len(chain)
            rhs = -sum(taylor[q] @ chain[p - q] for q in range(1, p + 1))
            if np.linalg.norm(left @ rhs) > 1e-6 * scale:
                break
            nxt, *_ = la.lstsq(taylor[0], rhs)
            chain.append(nxt)
        vectors.append(c0)
        chains.append(tuple(chain))
        flags.append(len(chain) > 1)
        lengths.append(len(chain))

    if sum(lengths) != algebraic_multiplicity and not ambiguous:
        ambiguous = True
        logger.warning(
            f"[orbit {model.orbit_id}] chain lengths {lengths} at lambda={lam0:.6g} do not add up "
            f"to the algebraic multiplicity {algebraic_multiplicity}"
        )

    return PencilEigenvalue(
        lam=complex(lam0),
        algebraic_multiplicity=algebraic_multiplicity,
        partial_multiplicities=tuple(sorted(lengths, reverse=True)),
        eigenvectors=tuple(vectors),
        chains=tuple(chains),
        has_associated=tuple(flags),
        rank_ambiguous=ambiguous,
    )


def sample_profile(model: OrbitModel, lam: complex, coeffs: np.ndarray, j: int, omegas) -> np.ndarray:
    """phi_j(omega) = c_{2j} u0 + c_{2j+1} u1"""
    u0, u1, _, _ = fundamental_system(model, j, lam, omegas)
    return coeffs[2 * j] * u0 + coeffs[2 * j + 1] * u1


def homogeneous_polynomial_residual(values: np.ndarray, omegas: np.ndarray, degree: int) -> float:
    """Relative least-squares residual of values against cos^(d-i) sin^i on the unit circle"""
    basis = np.column_stack([np.cos(omegas) ** (degree - i) * np.sin(omegas) ** i for i in range(degree + 1)])
    norm = np.linalg.norm(values)
    if norm == 0:
        return 0.0
    coef, *_ = la.lstsq(basis.astype(complex), values)
    return float(np.linalg.norm(values - basis @ coef) / norm)


def proper_residual(model: OrbitModel, eig: PencilEigenvalue) -> Tuple[bool, float]:
    """
    Proper test without the ambiguity decision.

    Returns:
        (structurally proper candidate, worst polynomial-fit residual)
    """
    lam = eig.lam
    degree = int(round(-lam.imag))
    if abs(lam.real) > PROPER_TOL or degree < 1 or abs(lam.imag + degree) > PROPER_TOL:
        return False, float("inf")
    if any(eig.has_associated):
        return False, float("inf")
    exact = complex(0.0, -degree)
    worst = 0.0
    for vec in eig.eigenvectors:
        for j in range(model.n_angles):
            omegas = np.linspace(-model.angles[j], model.angles[j], POLY_SAMPLES)
            values = sample_profile(model, exact, vec, j, omegas)
            worst = max(worst, homogeneous_polynomial_residual(values, omegas, degree))
    return True, worst


def is_proper(model: OrbitModel, eig: PencilEigenvalue) -> bool:
    """
    True iff lambda = -ik, no associated vectors, and every r^(i lambda) phi_j is
    a homogeneous polynomial of degree k.

    Raises:
        AmbiguousSpectrum: polynomial residual in [1e-6, 1e-3]
    """
    candidate, residual = proper_residual(model, eig)
    if not candidate:
        return False
    if residual < POLY_RESIDUAL_OK:
        return True
    if residual <= POLY_RESIDUAL_AMBIGUOUS:
        raise AmbiguousSpectrum(
            f"[orbit {model.orbit_id}] polynomial residual {residual:.3e} at lambda={eig.lam} "
            f"is in the ambiguous zone; manual review needed"
        )
    return False


def classify_eigenvalue(model: OrbitModel, eig: PencilEigenvalue) -> PencilEigenvalue:
    """Copy of eig with proper set (None when ambiguous)"""
    candidate, residual = proper_residual(model, eig)
    if eig.rank_ambiguous:
        return replace(eig, proper=None, proper_residual=residual)
    if not candidate:
        return replace(eig, proper=False, proper_residual=residual)
    if residual < POLY_RESIDUAL_OK:
        return replace(eig, proper=True, proper_residual=residual)
    if residual <= POLY_RESIDUAL_AMBIGUOUS:
        return replace(eig, proper=None, proper_residual=residual)
    return replace(eig, proper=False, proper_residual=residual)


# ---------------------------------------------------------------------------
# Reports and oracles
# ---------------------------------------------------------------------------

@dataclass
class SpectralReport:
    orbit_id: int
    band: Tuple[float, float]
    eigenvalues: List[PencilEigenvalue]
    argument_principle_count: int
    search_window: Tuple[float, float]
    window_warning: bool = False
    unresolved: List[dict] = field(default_factory=list)
    shooting_mismatch: float = 0.0

    @property
    def closed(self) -> bool:
        return self.argument_principle_count == sum(e.algebraic_multiplicity for e in self.eigenvalues)

    def to_dict(self) -> Dict[str, object]:
        return {
            "orbit_id": self.orbit_id,
            "band": list(self.band),
            "search_window": list(self.search_window),
            "argument_principle_count": self.argument_principle_count,
            "closed": self.closed,
            "window_warning": self.window_warning,
            "shooting_mismatch": self.shooting_mismatch,
            "unresolved": [{"re": u["center"].real, "im": u["center"].imag, "winding": u["winding"]}
                           for u in self.unresolved],
            "eigenvalues": [e.to_dict() for e in self.eigenvalues],
        }


def spectral_report(model: OrbitModel, band: Tuple[float, float] = BAND,
                    re_window: Tuple[float, float] = (-8.0, 8.0), check_window: bool = False) -> SpectralReport:
    """find_eigenvalues + jordan_structure + proper classification for one orbit"""
    model = freeze_model(model)
    eigen, total, unresolved = find_eigenvalues(model, band, re_window)
    eigenvalues = [classify_eigenvalue(model, jordan_structure(model, lam, mult)) for lam, mult in eigen]
    report = SpectralReport(model.orbit_id, band, eigenvalues, total, re_window, unresolved=unresolved)
    if not report.closed:
        logger.warning(
            f"[orbit {model.orbit_id}] argument-principle count {total} differs from the "
            f"enumerated multiplicity {sum(e.algebraic_multiplicity for e in eigenvalues)}"
        )
    if not model.is_laplace and eigenvalues:
        report.shooting_mismatch = max(shooting_mismatch(model, e.lam) for e in eigenvalues)
        if report.shooting_mismatch > SHOOTING_AGREEMENT:
            logger.warning(
                f"[orbit {model.orbit_id}] shooting and closed-form characteristic matrices differ "
                f"by {report.shooting_mismatch:.3e} at the eigenvalues"
            )
    if check_window:
        wide = (2 * re_window[0], 2 * re_window[1])
        interior = (band[0] + TOP_GAP, band[1] - TOP_GAP)
        if count_zeros_in_band(model, interior, wide) != count_zeros_in_band(model, interior, re_window):
            report.window_warning = True
            logger.warning(f"[orbit {model.orbit_id}] winding differs between Re windows {re_window} and {wide}")
    return report


@dataclass(frozen=True)
class HalfPiCase:
    case: int
    eigenvalue: Optional[complex]
    proper: Optional[bool]
    arctan_form: Optional[complex] = None

    @property
    def label(self) -> str:
        return f"Case {self.case}"


def laplace_halfpi_oracle(s: float) -> HalfPiCase:
    """
    Closed-form band picture of the flat-boundary model with rotations +-pi/2.

    s = b1(0) + b2(0). Case 1: s in (-inf, -2] or (0, inf), no eigenvalues.
    Case 2: s = 0, lambda = -i proper. Case 3: -2 < s < 0,
    lambda = -(2/pi) arccos(-s/2) i, improper.
    """
    if abs(s) <= 1e-12:
        return HalfPiCase(2, complex(0.0, -1.0), True)
    if -2.0 < s < 0.0:
        lam = complex(0.0, -(2.0 / math.pi) * math.acos(-s / 2.0))
        arctan = complex(0.0, (2.0 / math.pi) * math.atan(math.sqrt(4.0 - s * s) / s))
        return HalfPiCase(3, lam, False, arctan)
    return HalfPiCase(1, None, None)


def cauchy_riemann_residual(model: OrbitModel, lam: complex, h: float = 1e-7) -> float:
    """Relative residual of d/dx = -i d/dy for det M at lam (analyticity smoke test)"""
    fx = (char_det(model, lam + h) - char_det(model, lam - h)) / (2 * h)
    fy = (char_det(model, lam + 1j * h) - char_det(model, lam - 1j * h)) / (2 * h)
    return abs(fx + 1j * fy) / max(abs(fx), abs(fy), 1e-300)


def eigenvalue_or_raise(report: SpectralReport) -> None:
    """Raise when any eigenvalue could not be classified"""
    for e in report.eigenvalues:
        if e.proper is None:
            raise AmbiguousSpectrum(
                f"[orbit {report.orbit_id}] proper/improper decision at lambda={e.lam} is ambiguous "
                f"(residual {e.proper_residual:.3e}, rank ambiguous: {e.rank_ambiguous})"
            )
    if report.unresolved:
        raise NumericalError(f"[orbit {report.orbit_id}] {len(report.unresolved)} box(es) could not be resolved")
