"""
Consistency machinery for the border case.

When -i is a proper eigenvalue, the tangential derivatives of the nonlocal
conditions at the vertex are linearly dependent. The beta coefficients of
that dependence turn boundary traces into combinations whose weighted
integral int r^-1 |d/dr Z|^2 dr must be finite. Finiteness is decided from
the decay of the integral's dyadic pieces.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg as la

from services.lib.errors import CrossCheckError, NoDependence
from services.lib.geometry import ExteriorTerm, OrbitModel, ProblemSpec, freeze_model, rotation_matrix, side_row
from services.lib.pencil import PencilEigenvalue, sample_profile
from services.lib.profiles import ScalarProfile, dyadic_radii

logger = logging.getLogger("consistency")

Side = Tuple[int, int]

CELLS_PER_LEVEL = 4
LEVEL_FLOOR = 1e-30
SLOPE_LEVELS = 8
MIN_LEVELS = 4
MIN_GRID_LEVELS = 12
FINITE_SLOPE = -0.5
DIVERGENT_SLOPE = -0.1
VERTEX_TOL = 1e-8
FINEST_DERIVATIVE_LEVEL = 16
NULL_TOL = 1e-8


def side_label(side: Side) -> str:
    return f"({side[0]},{side[1]})"


@dataclass(frozen=True)
class HatOperatorMatrix:
    """Rows (j, sigma); columns 2k (d/dy1 of U_k) and 2k+1 (d/dy2 of U_k)"""
    orbit_id: int
    rows: np.ndarray

    def sides(self) -> List[Side]:
        return [(r // 2, r % 2 + 1) for r in range(self.rows.shape[0])]

    def row(self, side: Side) -> np.ndarray:
        return self.rows[side_row(*side)]

    def rank(self) -> int:
        return int(np.linalg.matrix_rank(self.rows, tol=1e-10 * max(1.0, np.abs(self.rows).max())))


def hat_operators(model: OrbitModel) -> HatOperatorMatrix:
    """
    Tangential derivative of each nonlocal condition at the vertex.

    A term contributes b(0) * chi * R_rotation tau_{j sigma} to row (j, sigma),
    columns of angle k, where tau is the unit vector along the side.
    """
    model = freeze_model(model)
    size = 2 * model.n_angles
    rows = np.zeros((size, size))
    for t in model.terms:
        angle = model.side_angle(t.j, t.sigma)
        tau = np.array([math.cos(angle), math.sin(angle)])
        direction = t.weight_at_vertex * t.homothety * (rotation_matrix(t.rotation) @ tau)
        r = side_row(t.j, t.sigma)
        rows[r, 2 * t.k] += direction[0]
        rows[r, 2 * t.k + 1] += direction[1]
    rows[np.abs(rows) < 1e-14] = 0.0
    return HatOperatorMatrix(model.orbit_id, rows)


def null_vector_from_proper_eigenvector(model: OrbitModel, eig: PencilEigenvalue,
                                        hat: Optional[HatOperatorMatrix] = None,
                                        vector: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Gradient (q_k1, q_k2) of the degree-one polynomials Q_k = r phi_k(omega).

    Raises:
        CrossCheckError: phi_k is not linear in (cos, sin), or the vector does
                         not annihilate the hat-operator matrix
    """
    coeffs = eig.eigenvectors[0] if vector is None else vector
    q = np.zeros(2 * model.n_angles, dtype=complex)
    for j in range(model.n_angles):
        omegas = np.linspace(-model.angles[j], model.angles[j], 64)
        values = sample_profile(model, complex(0.0, -1.0), coeffs, j, omegas)
        basis = np.column_stack([np.cos(omegas), np.sin(omegas)]).astype(complex)
        fit, *_ = la.lstsq(basis, values)
        scale = max(np.linalg.norm(values), 1e-300)
        if np.linalg.norm(values - basis @ fit) > NULL_TOL * scale:
            raise CrossCheckError(f"[orbit {model.orbit_id}] eigenvector on angle {j} is not r^-1 times a linear polynomial")
        q[2 * j:2 * j + 2] = fit

    hat = hat if hat is not None else hat_operators(model)
    residual = np.linalg.norm(hat.rows @ q)
    if residual > NULL_TOL * max(1.0, np.linalg.norm(hat.rows)) * max(np.linalg.norm(q), 1e-300):
        raise CrossCheckError(
            f"[orbit {model.orbit_id}] proper eigenvector gradient does not annihilate the hat operators "
            f"(residual {residual:.3e})"
        )
    return q


@dataclass
class BetaTable:
    independent_rows: List[Side]
    dependent_rows: Dict[Side, Dict[Side, float]]
    residuals: Dict[Side, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {
            "independent_rows": [side_label(s) for s in self.independent_rows],
            "dependent_rows": {
                side_label(s): {side_label(k): v for k, v in betas.items()}
                for s, betas in self.dependent_rows.items()
            },
            "residuals": {side_label(s): r for s, r in self.residuals.items()},
        }


def dependency_betas(matrix: HatOperatorMatrix, order: Optional[Sequence[Side]] = None) -> BetaTable:
    """
    Split rows into a maximal independent subsystem and beta expansions.

    Rows are taken in lexicographic (j, sigma) order (or the given order); a
    row joins the independent set unless it is a combination of the rows
    already there.

    Raises:
        NoDependence: the matrix has full rank
    """
    sides = list(order) if order is not None else matrix.sides()
    norm = max(1.0, float(np.abs(matrix.rows).max()))
    independent: List[Side] = []
    dependent: Dict[Side, Dict[Side, float]] = {}
    residuals: Dict[Side, float] = {}
    for side in sides:
        row = matrix.row(side)
        if not independent:
            if np.abs(row).max() > 1e-12 * norm:
                independent.append(side)
            else:
                dependent[side], residuals[side] = {}, float(np.abs(row).max())
            continue
        basis = np.array([matrix.row(s) for s in independent]).T
        coef, *_ = la.lstsq(basis, row)
        residual = float(np.abs(row - basis @ coef).max())
        if residual > 1e-10 * norm:
            independent.append(side)
        else:
            dependent[side] = {s: float(c) for s, c in zip(independent, coef)}
            residuals[side] = residual / norm
    if not dependent:
        raise NoDependence(f"[orbit {matrix.orbit_id}] hat-operator matrix has full rank")
    return BetaTable(independent, dependent, residuals)


@dataclass(frozen=True)
class BoundaryTrace:
    """
    Trace Z(r) on the dyadic grid r_m = eps 2^-m with derivative samples at the
    midpoints of CELLS_PER_LEVEL equal cells inside each level.
    """
    label: str
    radii: np.ndarray
    values: np.ndarray
    midpoints: np.ndarray
    widths: np.ndarray
    derivatives: np.ndarray

    @classmethod
    def from_profile(cls, label: str, profile: ScalarProfile, theta: float, epsilon: float,
                     levels: int) -> "BoundaryTrace":
        radii = dyadic_radii(epsilon, levels)
        midpoints, widths = _cell_geometry(radii)
        return cls(label, radii, profile.value(radii, theta), midpoints, widths,
                   profile.derivative(midpoints, theta))

    @classmethod
    def from_function(cls, label: str, func, dfunc, epsilon: float, levels: int) -> "BoundaryTrace":
        radii = dyadic_radii(epsilon, levels)
        midpoints, widths = _cell_geometry(radii)
        return cls(label, radii, np.asarray(func(radii), dtype=float), midpoints, widths,
                   np.asarray(dfunc(midpoints), dtype=float))

    def combine(self, others: Sequence[Tuple[float, "BoundaryTrace"]], label: str) -> "BoundaryTrace":
        """self + sum c * other on the same grid"""
        values = self.values.astype(float).copy()
        derivatives = self.derivatives.astype(float).copy()
        for c, tr in others:
            values = values + c * tr.values
            derivatives = derivatives + c * tr.derivatives
        return BoundaryTrace(label, self.radii, values, self.midpoints, self.widths, derivatives)

    def integrand(self) -> np.ndarray:
        """r^-1 |dZ/dr|^2 at the cell midpoints"""
        return self.derivatives ** 2 / self.midpoints


def _cell_geometry(radii: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    outer, inner = radii[:-1, None], radii[1:, None]
    widths = np.repeat((outer - inner) / CELLS_PER_LEVEL, CELLS_PER_LEVEL, axis=1)
    offsets = (np.arange(CELLS_PER_LEVEL) + 0.5)[None, :]
    return inner + offsets * widths, widths


@dataclass
class DiagnosticResult:
    label: str
    integrals: List[float]
    slope: Optional[float]
    verdict: str
    reason: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {"label": self.label, "integrals": self.integrals, "slope": self.slope,
                "verdict": self.verdict, "reason": self.reason}


def weighted_seminorm_diagnostic(combo: BoundaryTrace) -> DiagnosticResult:
    """
    Dyadic test for int_0^eps r^-1 |dZ/dr|^2 dr < inf.

    I_m is the midpoint-rule integral over [r_(m+1), r_m]; the slope of
    log2 I_m against m over the last 8 resolved levels decides: <= -0.5
    finite, >= -0.1 divergent, otherwise inconclusive.
    """
    levels = combo.radii.size - 1
    integrals = np.sum(combo.widths * combo.integrand(), axis=1)
    listed = [float(x) for x in integrals]
    if levels < MIN_GRID_LEVELS:
        return DiagnosticResult(combo.label, listed, None, "inconclusive",
                                f"only {levels} dyadic levels (need {MIN_GRID_LEVELS})")
    finite = np.isfinite(integrals)
    if not finite.all():
        return DiagnosticResult(combo.label, listed, None, "inconclusive",
                                "trace not available on every dyadic level")
    resolved = np.nonzero(integrals >= LEVEL_FLOOR)[0]
    if resolved.size == 0:
        return DiagnosticResult(combo.label, listed, None, "finite", "combination vanishes")
    if resolved.size < MIN_LEVELS:
        return DiagnosticResult(combo.label, listed, None, "inconclusive",
                                f"only {resolved.size} resolvable level(s)")
    tail = resolved[-SLOPE_LEVELS:]
    slope = float(np.polyfit(tail.astype(float), np.log2(integrals[tail]), 1)[0])
    if slope <= FINITE_SLOPE:
        verdict = "finite"
    elif slope >= DIVERGENT_SLOPE:
        verdict = "divergent"
    else:
        verdict = "inconclusive"
    return DiagnosticResult(combo.label, listed, slope, verdict)


def aggregate(verdicts: Sequence[str]) -> str:
    if any(v == "divergent" for v in verdicts):
        return "divergent"
    if all(v == "finite" for v in verdicts):
        return "finite"
    return "inconclusive"


@dataclass
class ConsistencyReport:
    orbit_id: int
    betas: BetaTable
    rows: Dict[Side, DiagnosticResult]
    verdict: str

    def to_dict(self) -> Dict[str, object]:
        return {
            "orbit_id": self.orbit_id,
            "betas": self.betas.to_dict(),
            "rows": {side_label(s): d.to_dict() for s, d in self.rows.items()},
            "verdict": self.verdict,
        }


def combination_report(model: OrbitModel, betas: BetaTable, traces: Dict[Side, BoundaryTrace]) -> ConsistencyReport:
    """Diagnostics for Z_(j sigma) - sum beta Z_(j' sigma') over every dependent row"""
    rows = {}
    for side, coeffs in betas.dependent_rows.items():
        combo = traces[side].combine([(-b, traces[s]) for s, b in coeffs.items()],
                                     f"orbit {model.orbit_id} row {side_label(side)}")
        rows[side] = weighted_seminorm_diagnostic(combo)
    verdict = aggregate([d.verdict for d in rows.values()])
    return ConsistencyReport(model.orbit_id, betas, rows, verdict)


def data_traces(spec: ProblemSpec, model: OrbitModel) -> Dict[Side, BoundaryTrace]:
    tr = spec.truncation
    out = {}
    for j in range(model.n_angles):
        for sigma in (1, 2):
            profile = spec.trace(model.orbit_id, j, sigma)
            out[(j, sigma)] = BoundaryTrace.from_profile(
                f"f{(j, sigma)}", profile, model.side_angle(j, sigma), tr.epsilon, tr.levels)
    return out


def check_boundary_data(spec: ProblemSpec, models: Sequence[OrbitModel],
                        beta_tables: Dict[int, BetaTable]) -> Dict[int, ConsistencyReport]:
    """
    Membership of the boundary data in the regular class, orbit by orbit.

    For every border orbit, the beta-combinations of the side traces must
    pass the weighted integral test.
    """
    reports = {}
    for model in models:
        if model.orbit_id not in beta_tables:
            continue
        report = combination_report(model, beta_tables[model.orbit_id], data_traces(spec, model))
        logger.info(f"[orbit {model.orbit_id}] boundary data consistency: {report.verdict}")
        reports[model.orbit_id] = report
    return reports


def _richardson_vertex(profile: ScalarProfile, theta: float, epsilon: float, levels: int) -> Tuple[float, float]:
    """a(0) and da/dr(0) from the finest usable dyadic samples"""
    m = min(levels, FINEST_DERIVATIVE_LEVEL)
    r = dyadic_radii(epsilon, m)
    a = profile.value(r[-3:], theta)
    a0 = 2 * a[-1] - a[-2]
    d1 = (a[-2] - a[-1]) / (r[-2] - r[-1])
    d2 = (a[-3] - a[-2]) / (r[-3] - r[-2])
    return float(a0), float(2 * d1 - d2)


@dataclass
class CoefficientCheck:
    orbit_id: int
    a_at_vertex: float
    a_tangential_derivative: float
    b_integral: Optional[ConsistencyReport]
    generator_reports: Dict[str, ConsistencyReport]
    holds_a_value: Optional[bool]
    holds_a_derivative: Optional[bool]
    holds_b_integral: Optional[bool]
    method: str = "generator-based"

    @property
    def holds(self) -> Optional[bool]:
        parts = [self.holds_a_value, self.holds_a_derivative, self.holds_b_integral]
        if any(p is False for p in parts):
            return False
        if any(p is None for p in parts):
            return None
        return True

    def to_dict(self) -> Dict[str, object]:
        return {
            "orbit_id": self.orbit_id,
            "a_at_vertex": self.a_at_vertex,
            "a_tangential_derivative": self.a_tangential_derivative,
            "holds_a_value": self.holds_a_value,
            "holds_a_derivative": self.holds_a_derivative,
            "holds_b_integral": self.holds_b_integral,
            "holds": self.holds,
            "method": self.method,
            "b_integral": self.b_integral.to_dict() if self.b_integral else None,
            "generators": {k: v.to_dict() for k, v in self.generator_reports.items()},
        }


def _verdict_flag(verdict: str) -> Optional[bool]:
    return {"finite": True, "divergent": False}.get(verdict)


def check_coefficient_condition(spec: ProblemSpec, model: OrbitModel, betas: BetaTable) -> CoefficientCheck:
    """
    Coefficient condition at a border vertex.

    Requires a(0) = 0 and da/dtau(0) = 0 for every exterior coefficient on the
    orbit, and a finite weighted integral for the b-combinations with C running
    over unit constant vectors. Generator pairs v = 1 and v = r are diagnosed
    as well and reported.
    """
    tr = spec.truncation
    exterior = spec.exterior_for(model.orbit_id)

    a0, da0 = 0.0, 0.0
    for e in exterior:
        theta = model.side_angle(e.j, e.sigma)
        v, d = _richardson_vertex(e.coefficient, theta, tr.epsilon, tr.levels)
        if abs(v) > abs(a0):
            a0 = v
        if abs(d) > abs(da0):
            da0 = d
    holds_value = None if not (math.isfinite(a0)) else abs(a0) < VERTEX_TOL
    holds_derivative = None if not (math.isfinite(da0)) else abs(da0) < VERTEX_TOL

    b_rows: Dict[Side, DiagnosticResult] = {}
    for k in range(model.n_angles):
        traces = constant_traces(model, k, tr.epsilon, tr.levels)
        sub = combination_report(model, betas, traces)
        for side, diag in sub.rows.items():
            diag.label = f"orbit {model.orbit_id} row {side_label(side)} C=e{k}"
            b_rows[(side, k)] = diag
    b_report = ConsistencyReport(model.orbit_id, betas, b_rows, aggregate([d.verdict for d in b_rows.values()]))

    generators: Dict[str, ConsistencyReport] = {}
    for name, v_profile in (("v=1", ScalarProfile.const(1.0)), ("v=r", ScalarProfile.parse("poly:0,1"))):
        traces = exterior_traces(model, exterior, v_profile, tr.epsilon, tr.levels)
        generators[name] = combination_report(model, betas, traces)

    return CoefficientCheck(
        orbit_id=model.orbit_id,
        a_at_vertex=a0,
        a_tangential_derivative=da0,
        b_integral=b_report,
        generator_reports=generators,
        holds_a_value=holds_value,
        holds_a_derivative=holds_derivative,
        holds_b_integral=_verdict_flag(b_report.verdict),
    )


def constant_traces(model: OrbitModel, k: int, epsilon: float, levels: int) -> Dict[Side, BoundaryTrace]:
    """(B C)(y) along every side for the unit constant vector C = e_k"""
    model = freeze_model(model)
    out = {}
    for j in range(model.n_angles):
        for sigma in (1, 2):
            theta = model.side_angle(j, sigma)
            terms = [t for t in model.terms_for(j, sigma) if t.k == k]

            def value(r, terms=terms, theta=theta):
                return sum((t.weight(r, theta) for t in terms), np.zeros_like(np.asarray(r, dtype=float)))

            def slope(r, terms=terms, theta=theta):
                total = np.zeros_like(np.asarray(r, dtype=float))
                for t in terms:
                    if t.weight_profile is not None and not t.is_identity:
                        total = total + t.weight_profile.derivative(r, theta)
                return total

            out[(j, sigma)] = BoundaryTrace.from_function(f"BC e{k} {(j, sigma)}", value, slope, epsilon, levels)
    return out


def exterior_traces(model: OrbitModel, exterior: Sequence[ExteriorTerm], v_profile: ScalarProfile,
                    epsilon: float, levels: int) -> Dict[Side, BoundaryTrace]:
    """a(y) v(Omega(y)) along every side, with v restricted to the side as v_profile"""
    out = {}
    for j in range(model.n_angles):
        for sigma in (1, 2):
            theta = model.side_angle(j, sigma)
            mine = [e for e in exterior if (e.j, e.sigma) == (j, sigma)]

            def value(r, mine=mine, theta=theta):
                r = np.asarray(r, dtype=float)
                return sum((e.coefficient.value(r, theta) * v_profile.value(r, theta) for e in mine), np.zeros_like(r))

            def slope(r, mine=mine, theta=theta):
                r = np.asarray(r, dtype=float)
                total = np.zeros_like(r)
                for e in mine:
                    total = total + (e.coefficient.derivative(r, theta) * v_profile.value(r, theta)
                                     + e.coefficient.value(r, theta) * v_profile.derivative(r, theta))
                return total

            out[(j, sigma)] = BoundaryTrace.from_function(f"Bv {(j, sigma)}", value, slope, epsilon, levels)
    return out


def vertex_matrix(model: OrbitModel) -> np.ndarray:
    """B0: rows (j, sigma), columns k, entries sum_s b_(j sigma k s)(0)"""
    model = freeze_model(model)
    b0 = np.zeros((2 * model.n_angles, model.n_angles))
    for t in model.terms:
        b0[side_row(t.j, t.sigma), t.k] += t.weight_at_vertex
    return b0


@dataclass
class AdmissibilityResult:
    admissible: bool
    particular: Optional[np.ndarray]
    null_basis: np.ndarray
    residual: float
    given_constant_ok: Optional[bool] = None

    def to_dict(self) -> Dict[str, object]:
        return {
            "admissible": self.admissible,
            "particular": None if self.particular is None else self.particular.tolist(),
            "null_basis": self.null_basis.tolist(),
            "residual": self.residual,
            "given_constant_ok": self.given_constant_ok,
        }


def exterior_vertex_values(spec: ProblemSpec, model: OrbitModel, v_at_landing: Dict[int, float]) -> np.ndarray:
    """B^v_(j sigma)(0) = sum of a(0) v_Omega(0) over exterior terms on each side"""
    values = np.zeros(2 * model.n_angles)
    for n, e in enumerate(spec.exterior_for(model.orbit_id)):
        a0 = e.coefficient.at_vertex(model.side_angle(e.j, e.sigma))
        values[side_row(e.j, e.sigma)] += a0 * v_at_landing.get(n, 0.0)
    return values


def check_admissible(model: OrbitModel, vertex_values: np.ndarray, constant: Optional[np.ndarray] = None,
                     tolerance: float = 1e-10) -> AdmissibilityResult:
    """
    Admissibility of an exterior coupling: B^v(0) + (B C)(0) = 0 on every side.

    Returns the affine set {C_p + span(null_basis)} of admissible constants;
    admissible is False when that set is empty. When constant is given, also
    reports whether it belongs to the set.
    """
    b0 = vertex_matrix(model)
    rhs = -np.asarray(vertex_values, dtype=float)
    particular, *_ = la.lstsq(b0, rhs)
    scale = max(1.0, float(np.abs(rhs).max()), float(np.abs(b0).max()))
    residual = float(np.abs(b0 @ particular - rhs).max()) / scale
    null_basis = la.null_space(b0, rcond=1e-12)
    admissible = residual < tolerance
    given_ok = None
    if constant is not None:
        c = np.asarray(constant, dtype=float)
        given_ok = bool(np.abs(b0 @ c - rhs).max() / scale < tolerance)
    return AdmissibilityResult(admissible, particular if admissible else None, null_basis, residual, given_ok)


def halfpi_consistency_integrand(df1_dy2, df2_dy2, r) -> np.ndarray:
    """r^-1 |df1/dy2(0,-r) - df2/dy2(0,r)|^2 for the flat-boundary model"""
    r = np.asarray(r, dtype=float)
    return (df1_dy2(-r) - df2_dy2(r)) ** 2 / r
