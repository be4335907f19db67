"""
Geometry of nonlocal problems near conjugation points.

Holds the immutable data model (conjugation points, nonlocal terms, orbit
models, exterior terms, truncation radii, problem specs), validates the
structural hypotheses, computes orbits and freezes coefficients into the
per-orbit model problems the pencil works with.

Conventions:
    - Each angle is {|omega| < omega_j} in its local frame; omega_j is the
      half-opening and lies in (0, pi).
    - Side sigma = 1 is the ray omega = -omega_j, sigma = 2 is omega = +omega_j.
    - Row (j, sigma) of any per-side matrix has index 2*j + sigma - 1.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from services.lib.errors import ConditionK1Violation, OrbitError, ValidationError
from services.lib.profiles import ScalarProfile

logger = logging.getLogger("geometry")

ANGLE_TOL = 1e-12
LANDINGS = ("interior", "interior-point", "boundary")
RHS_KINDS = ("general", "regular", "homogeneous")


def rotation_matrix(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def side_angle(omega_j: float, sigma: int) -> float:
    """Polar angle of side sigma of an angle with half-opening omega_j"""
    return omega_j if sigma == 2 else -omega_j


def side_row(j: int, sigma: int) -> int:
    return 2 * j + sigma - 1


@dataclass(frozen=True)
class ConjugationPoint:
    id: int
    position: Tuple[float, float]
    opening: float
    frame_rotation: float = 0.0

    def to_local(self, x: np.ndarray) -> np.ndarray:
        return rotation_matrix(-self.frame_rotation) @ (np.asarray(x, dtype=float) - np.asarray(self.position))

    def to_global(self, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.position) + rotation_matrix(self.frame_rotation) @ np.asarray(y, dtype=float)


@dataclass(frozen=True)
class NonlocalTerm:
    """One summand b * U_k(G y) of the nonlocal condition on side (j, sigma)"""
    j: int
    sigma: int
    k: int
    s: int
    weight_at_vertex: float
    rotation: float = 0.0
    homothety: float = 1.0
    weight_profile: Optional[ScalarProfile] = None

    @property
    def is_identity(self) -> bool:
        return self.k == self.j and self.s == 0

    def weight(self, r, theta: float):
        """b along the side at arclength r; frozen value when no profile is given"""
        if self.weight_profile is None or self.is_identity:
            return np.full_like(np.asarray(r, dtype=float), self.weight_at_vertex)
        return self.weight_profile.value(r, theta)


@dataclass(frozen=True)
class PrincipalPart:
    """Constant-coefficient operator p11 d1^2 + 2 p12 d1 d2 + p22 d2^2"""
    p11: float = 1.0
    p12: float = 0.0
    p22: float = 1.0

    @property
    def is_laplace(self) -> bool:
        return self.p11 == 1.0 and self.p12 == 0.0 and self.p22 == 1.0

    @property
    def is_elliptic(self) -> bool:
        return self.p11 > 0 and self.p11 * self.p22 - self.p12 ** 2 > 0

    def polar_coefficients(self, omega):
        """
        Coefficients of the operator in polar form at angle omega.

        Returns:
            (A, S, R): A = e_w.P.e_w, S = e_r.P.e_w, R = e_r.P.e_r
        """
        c, s = np.cos(omega), np.sin(omega)
        a = self.p11 * s * s - 2 * self.p12 * c * s + self.p22 * c * c
        sh = (self.p22 - self.p11) * c * s + self.p12 * (c * c - s * s)
        rr = self.p11 * c * c + 2 * self.p12 * c * s + self.p22 * s * s
        return a, sh, rr


LAPLACE = PrincipalPart()


@dataclass(frozen=True)
class OrbitModel:
    orbit_id: int
    angles: Tuple[float, ...]
    terms: Tuple[NonlocalTerm, ...]
    principal_parts: Tuple[PrincipalPart, ...] = ()

    @property
    def n_angles(self) -> int:
        return len(self.angles)

    @property
    def is_laplace(self) -> bool:
        return all(p.is_laplace for p in self.principal_parts)

    def principal_part(self, j: int) -> PrincipalPart:
        return self.principal_parts[j] if self.principal_parts else LAPLACE

    def side_angle(self, j: int, sigma: int) -> float:
        return side_angle(self.angles[j], sigma)

    def image_angle(self, term: NonlocalTerm) -> float:
        return self.side_angle(term.j, term.sigma) + term.rotation

    def terms_for(self, j: int, sigma: int) -> List[NonlocalTerm]:
        return [t for t in self.terms if t.j == j and t.sigma == sigma]

    def max_homothety(self) -> float:
        return max([1.0] + [t.homothety for t in self.terms])

    def min_homothety(self) -> float:
        return min([1.0] + [t.homothety for t in self.terms])

    def validate(self) -> None:
        """Raise ValidationError on the first violated invariant"""
        tag = f"[orbit {self.orbit_id}]"
        if not self.angles:
            raise ValidationError(f"{tag} needs at least one angle")
        for j, w in enumerate(self.angles):
            if not (0.0 < w < math.pi):
                raise ValidationError(f"{tag} half-opening of angle {j} must lie in (0, pi), got {w}")
        if self.principal_parts:
            if len(self.principal_parts) != self.n_angles:
                raise ValidationError(f"{tag} needs one principal part per angle")
            for j, p in enumerate(self.principal_parts):
                if not p.is_elliptic:
                    raise ValidationError(
                        f"{tag} principal part of angle {j} is not properly elliptic "
                        f"(p11={p.p11}, p12={p.p12}, p22={p.p22})"
                    )

        seen = set()
        for t in self.terms:
            where = f"{tag} term (j={t.j}, sigma={t.sigma}, k={t.k}, s={t.s})"
            if t.sigma not in (1, 2):
                raise ValidationError(f"{where}: sigma must be 1 or 2")
            if not (0 <= t.j < self.n_angles and 0 <= t.k < self.n_angles):
                raise ValidationError(f"{where}: angle index out of range")
            if (t.j, t.sigma, t.k, t.s) in seen:
                raise ValidationError(f"{where}: duplicate term")
            seen.add((t.j, t.sigma, t.k, t.s))
            if not (t.homothety > 0 and math.isfinite(t.homothety)):
                raise ValidationError(f"{where}: homothety must be positive")
            if t.is_identity:
                if t.weight_at_vertex != 1.0 or t.rotation != 0.0 or t.homothety != 1.0:
                    raise ValidationError(f"{where}: identity term needs weight 1, rotation 0, homothety 1")
                continue
            image = self.image_angle(t)
            if not abs(image) < self.angles[t.k] - ANGLE_TOL:
                raise ValidationError(
                    f"{where}: image ray at angle {image:.6g} is not strictly inside angle {t.k} "
                    f"(half-opening {self.angles[t.k]:.6g})"
                )


@dataclass(frozen=True)
class ExteriorTerm:
    """
    Coupling a(y) * u(Omega(y)) on side (j, sigma) of an orbit, where Omega maps
    the side into the domain away from the orbit.

    landing: where Omega sends the vertex: "interior" (support of the image
    strictly inside the domain), "interior-point" (Omega(0) is an interior point
    not lying on another nonlocal image) or "boundary" (Omega(0) on the side's
    own boundary curve).
    """
    orbit_id: int
    j: int
    sigma: int
    coefficient: ScalarProfile
    landing: str = "interior"
    exterior_trace: Optional[ScalarProfile] = None
    landing_coefficient: Optional[float] = None


@dataclass(frozen=True)
class SideTrace:
    orbit_id: int
    j: int
    sigma: int
    profile: ScalarProfile


@dataclass(frozen=True)
class RightHandSide:
    kind: str = "general"
    volume: ScalarProfile = field(default_factory=ScalarProfile.zero)
    traces: Tuple[SideTrace, ...] = ()


@dataclass(frozen=True)
class Truncation:
    epsilon: float = 0.25
    kappa1: float = 0.125
    kappa2: float = 0.0625
    outer_radius: float = 1.0
    levels: int = 24

    @classmethod
    def from_epsilon(cls, epsilon: float, **overrides) -> "Truncation":
        kappa1 = overrides.pop("kappa1", epsilon / 2)
        kappa2 = overrides.pop("kappa2", kappa1 / 2)
        return cls(epsilon=epsilon, kappa1=kappa1, kappa2=kappa2, **overrides)


@dataclass(frozen=True)
class ProblemSpec:
    orbits: Tuple[OrbitModel, ...]
    exterior_terms: Tuple[ExteriorTerm, ...] = ()
    rhs: RightHandSide = field(default_factory=RightHandSide)
    truncation: Truncation = field(default_factory=Truncation)
    name: str = ""
    description: str = ""

    def orbit(self, orbit_id: int) -> OrbitModel:
        for model in self.orbits:
            if model.orbit_id == orbit_id:
                return model
        raise ValidationError(f"No orbit with id {orbit_id}")

    def trace(self, orbit_id: int, j: int, sigma: int) -> ScalarProfile:
        """Right-hand side trace on a side; zero when the problem gives none"""
        for tr in self.rhs.traces:
            if (tr.orbit_id, tr.j, tr.sigma) == (orbit_id, j, sigma):
                return tr.profile
        return ScalarProfile.zero()

    def exterior_for(self, orbit_id: int) -> List[ExteriorTerm]:
        return [e for e in self.exterior_terms if e.orbit_id == orbit_id]

    def d_chi(self) -> float:
        """D_chi = 2 max chi over all terms (identity included)"""
        return 2.0 * max(m.max_homothety() for m in self.orbits)

    def small_d_chi(self) -> float:
        """d_chi = min chi / 2 over all terms (identity included)"""
        return 0.5 * min(m.min_homothety() for m in self.orbits)

    def cutoff_radius(self) -> float:
        """epsilon' = d_chi * min(epsilon, kappa2)"""
        tr = self.truncation
        return self.small_d_chi() * min(tr.epsilon, tr.kappa2)

    def validate(self) -> None:
        if not self.orbits:
            raise ValidationError("Problem spec has no orbits")
        ids = [m.orbit_id for m in self.orbits]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"Duplicate orbit ids: {ids}")
        for model in self.orbits:
            model.validate()

        tr = self.truncation
        if not (tr.epsilon > 0 and tr.kappa1 > 0 and tr.kappa2 > 0 and tr.outer_radius > 0):
            raise ValidationError("Truncation radii must be positive")
        if tr.levels < 1:
            raise ValidationError("Truncation needs at least one dyadic level")
        if not self.d_chi() * tr.epsilon < tr.outer_radius:
            raise ValidationError(
                f"Separation fails: D_chi * epsilon = {self.d_chi() * tr.epsilon:.6g} "
                f"must be below epsilon1 = {tr.outer_radius:.6g}"
            )

        if self.rhs.kind not in RHS_KINDS:
            raise ValidationError(f"Unknown right-hand side kind '{self.rhs.kind}'")
        sides = {(m.orbit_id, j, sg) for m in self.orbits for j in range(m.n_angles) for sg in (1, 2)}
        for t in self.rhs.traces:
            if (t.orbit_id, t.j, t.sigma) not in sides:
                raise ValidationError(f"Trace refers to unknown side {(t.orbit_id, t.j, t.sigma)}")
        for e in self.exterior_terms:
            if (e.orbit_id, e.j, e.sigma) not in sides:
                raise ValidationError(f"Exterior term refers to unknown side {(e.orbit_id, e.j, e.sigma)}")
            if e.landing not in LANDINGS:
                raise ValidationError(f"Exterior term landing must be one of {LANDINGS}, got '{e.landing}'")


@dataclass(frozen=True)
class BoundaryMap:
    """
    Transformation Omega defined on side sigma of the curve ending at source.

    func maps global points to global points.
    """
    source: int
    sigma: int
    image: int
    func: Callable[[np.ndarray], np.ndarray] = field(compare=False)
    weight: ScalarProfile = field(default_factory=lambda: ScalarProfile.const(0.0))


def compute_orbits(points: Sequence[ConjugationPoint], transformations: Sequence[BoundaryMap],
                   tolerance: float = 1e-9) -> List[Tuple[int, ...]]:
    """
    Partition conjugation points into orbits.

    Two points share an orbit iff a chain of transformations (or their
    inverses) connects them. The result is sorted: ids ascending inside each
    orbit, orbits by their smallest id.

    Raises:
        OrbitError: a transformation maps a point outside the point set
    """
    ids = [p.id for p in points]
    if len(set(ids)) != len(ids):
        raise OrbitError(f"Conjugation point ids must be unique: {ids}")
    index = {p.id: n for n, p in enumerate(points)}
    positions = np.array([p.position for p in points], dtype=float).reshape(-1, 2)
    scale = max(1.0, float(np.abs(positions).max()) if len(points) else 1.0)

    rows, cols = [], []
    for tm in transformations:
        if tm.source not in index:
            raise OrbitError(f"Transformation source {tm.source} is not a conjugation point")
        image = np.asarray(tm.func(positions[index[tm.source]]), dtype=float)
        dist = np.hypot(*(positions - image).T)
        hit = int(np.argmin(dist))
        if dist[hit] > tolerance * scale:
            raise OrbitError(
                f"Image of conjugation point {tm.source} at {image.tolist()} is not a conjugation point"
            )
        rows.append(index[tm.source])
        cols.append(hit)

    n = len(points)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=True, connection="weak")

    groups: Dict[int, List[int]] = {}
    for p, label in zip(points, labels):
        groups.setdefault(int(label), []).append(p.id)
    return sorted((tuple(sorted(g)) for g in groups.values()), key=lambda g: g[0])


def localize_transformation(func: Callable[[np.ndarray], np.ndarray], vertex: ConjugationPoint,
                            image_vertex: ConjugationPoint, epsilon: float = 0.25,
                            tolerance: float = 1e-8) -> Tuple[float, float, float]:
    """
    Express a boundary map in local frames as chi * R_omega.

    Samples Y_k o map o Y_j^-1 at radii eps/8, eps/4, eps/2 along the two
    sides and the bisector of the source angle.

    Returns:
        (rotation, homothety, max relative deviation)

    Raises:
        ConditionK1Violation: deviation above tolerance
    """
    w = vertex.opening
    directions = (-w, 0.0, w)
    samples = []
    for rho in (epsilon / 8, epsilon / 4, epsilon / 2):
        for d in directions:
            y = rho * np.array([math.cos(d), math.sin(d)])
            fy = image_vertex.to_local(func(vertex.to_global(y)))
            samples.append((y, fy))

    y0, f0 = samples[0]
    homothety = math.hypot(*f0) / math.hypot(*y0)
    rotation = math.atan2(f0[1], f0[0]) - math.atan2(y0[1], y0[0])
    rotation = math.remainder(rotation, 2 * math.pi)
    if abs(homothety - 1.0) < 1e-14:
        homothety = 1.0
    if abs(rotation) < 1e-14:
        rotation = 0.0

    model = homothety * rotation_matrix(rotation)
    deviation = max(float(np.linalg.norm(fy - model @ y) / np.linalg.norm(y)) / homothety
                    for y, fy in samples)
    origin = image_vertex.to_local(func(vertex.to_global(np.zeros(2))))
    deviation = max(deviation, float(np.linalg.norm(origin)) / epsilon)
    if deviation > tolerance:
        raise ConditionK1Violation(
            f"Map from point {vertex.id} to {image_vertex.id} is not a rotation with homothety "
            f"near the vertex (relative deviation {deviation:.3e} > {tolerance:.1e})",
            deviation,
        )
    return rotation, homothety, deviation


def models_from_points(points: Sequence[ConjugationPoint], transformations: Sequence[BoundaryMap],
                       epsilon: float = 0.25) -> Tuple[OrbitModel, ...]:
    """
    Build orbit models from conjugation points and boundary maps.

    Orbit ids follow compute_orbits order; inside an orbit, angle j is the
    j-th point by ascending id. Term indices s count nonlocal maps per side
    starting at 1.
    """
    by_id = {p.id: p for p in points}
    models = []
    for orbit_id, members in enumerate(compute_orbits(points, transformations)):
        position = {pid: j for j, pid in enumerate(members)}
        terms = []
        counters: Dict[Tuple[int, int], int] = {}
        for tm in transformations:
            if tm.source not in position:
                continue
            src = by_id[tm.source]
            image = by_id[_nearest_point(points, tm.func(np.asarray(src.position, dtype=float)))]
            rotation, homothety, _ = localize_transformation(tm.func, src, image, epsilon)
            j, k = position[src.id], position[image.id]
            s = counters.get((j, tm.sigma), 0) + 1
            counters[(j, tm.sigma)] = s
            terms.append(NonlocalTerm(
                j=j, sigma=tm.sigma, k=k, s=s,
                weight_at_vertex=tm.weight.at_vertex(side_angle(src.opening, tm.sigma)),
                rotation=rotation, homothety=homothety, weight_profile=tm.weight,
            ))
        models.append(OrbitModel(
            orbit_id=orbit_id,
            angles=tuple(by_id[pid].opening for pid in members),
            terms=tuple(terms),
        ))
        logger.debug(f"[orbit {orbit_id}] points {members}, {len(terms)} nonlocal term(s)")
    return tuple(models)


def _nearest_point(points: Sequence[ConjugationPoint], x: np.ndarray) -> int:
    dist = [math.hypot(p.position[0] - x[0], p.position[1] - x[1]) for p in points]
    return points[int(np.argmin(dist))].id


def freeze_model(model: OrbitModel) -> OrbitModel:
    """Identity terms inserted and b(0) taken from the weight profiles; idempotent"""
    terms = []
    present = {(t.j, t.sigma) for t in model.terms if t.is_identity}
    for j in range(model.n_angles):
        for sigma in (1, 2):
            if (j, sigma) not in present:
                terms.append(NonlocalTerm(j=j, sigma=sigma, k=j, s=0, weight_at_vertex=1.0))
    for t in model.terms:
        if t.weight_profile is not None and not t.is_identity:
            b0 = t.weight_profile.at_vertex(model.side_angle(t.j, t.sigma))
            if not math.isfinite(b0):
                raise ValidationError(
                    f"[orbit {model.orbit_id}] weight profile of term "
                    f"(j={t.j}, sigma={t.sigma}, k={t.k}, s={t.s}) does not cover r = 0"
                )
            t = replace(t, weight_at_vertex=float(b0))
        terms.append(t)
    terms.sort(key=lambda t: (t.j, t.sigma, t.k, t.s))
    return replace(model, terms=tuple(terms))


def freeze(spec: ProblemSpec) -> Tuple[OrbitModel, ...]:
    """
    Freeze coefficients at the vertices.

    Inserts identity terms, sets weight_at_vertex = b(0) from each weight
    profile and keeps the profiles for the consistency checks. Idempotent.
    """
    spec.validate()
    models = tuple(freeze_model(m) for m in spec.orbits)
    for m in models:
        m.validate()
    return models


def landing_case(term: ExteriorTerm) -> Optional[str]:
    """
    Landing geometry label A/B/C of an exterior term, or None.

    A: image support strictly inside the domain; B: Omega(0) interior point;
    C: Omega(0) on the boundary with a(Omega(0)) != 0.
    """
    if term.landing == "interior":
        return "A"
    if term.landing == "interior-point":
        return "B"
    if term.landing == "boundary" and term.landing_coefficient not in (None, 0.0):
        return "C"
    return None
