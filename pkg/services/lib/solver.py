"""
Finite-difference solver for the frozen Laplace model problem on a truncated
system of angles, in log-polar coordinates t = ln r, t in [-T, 0].

In (t, omega) the Laplacian is e^(-2t)(u_tt + u_ww), so the interior stencil
is the plain 5-point one with right-hand side e^(2t) f0. The grid is built so
every nonlocal image node is an exact index shift: rotations move omega by a
whole number of steps and homotheties move t by a whole number of steps.

Rows:
    interior              5-point Laplacian
    outer edge  t = 0     Dirichlet data (corners included)
    side nodes  w = +-w_j nonlocal condition u + sum b(r) u(image) = Psi
    inner edge  t = -T    second-order one-sided Neumann u_t = g
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import least_squares

from services.lib.errors import FitWindowError, GridConstructionError, SingularSystemError, ValidationError
from services.lib.geometry import NonlocalTerm, OrbitModel, ProblemSpec, freeze_model

logger = logging.getLogger("solver")

INDEX_TOL = 1e-8
ZERO_EXTENSION_LIMIT = 0.02
GMRES_RTOL = 1e-10
GMRES_RESTART = 50
GMRES_MAXITER = 200
ACCEPT_RESIDUAL = 1e-9
ILU_SETTINGS = (
    {"drop_tol": 1e-6, "fill_factor": 20, "permc_spec": "COLAMD"},
    {"drop_tol": 1e-6, "fill_factor": 40, "permc_spec": "COLAMD", "diag_pivot_thresh": 1.0},
    {"drop_tol": 1e-8, "fill_factor": 100, "permc_spec": "MMD_AT_PLUS_A", "diag_pivot_thresh": 1.0},
)
FIT_WINDOW = (2.0 ** -9, 2.0 ** -3)
FIT_CLEAR_LEVELS = 6
FIT_MEANINGFUL = 0.05
REGULAR_POWERS = (1.0, 2.0)
REGULAR_SEPARATION = 0.15
ALPHA_BOUNDS = (0.01, 4.0)
W2_REGION_EXPONENT = 8
GROWTH_DIVERGENT = 0.25
GROWTH_BOUNDED = 0.05


def _whole(x: float, what: str) -> int:
    n = int(round(x))
    if abs(x - n) > INDEX_TOL * max(1.0, abs(x)):
        raise GridConstructionError(what)
    return n


@dataclass(frozen=True)
class LogPolarGrid:
    """
    Nodes t_i = -T + i dt (i = 0..n_t) and omega_l = -w_j + l dw (l = 0..n_omega[j])
    on every angle, with one common dw.
    """
    T: float
    n_t: int
    n_omega: Tuple[int, ...]
    angles: Tuple[float, ...]

    @classmethod
    def build(cls, model: OrbitModel, T: float, n_t: int, n_omega: int) -> "LogPolarGrid":
        """
        Grid for a model, with n_omega intervals on its first angle.

        Raises:
            GridConstructionError: some rotation or homothety is not an exact index shift
        """
        if T <= 0 or n_t < 4 or n_omega < 4:
            raise GridConstructionError(f"Grid needs T > 0 and at least 4 intervals (T={T}, n_t={n_t}, n_omega={n_omega})")
        dw = 2 * model.angles[0] / n_omega
        counts = []
        for j, w in enumerate(model.angles):
            counts.append(_whole(2 * w / dw, f"[orbit {model.orbit_id}] angle {j} (half-opening {w:.6g}) "
                                             f"is not a whole number of steps dw={dw:.6g}; change n_omega"))
        grid = cls(T=float(T), n_t=int(n_t), n_omega=tuple(counts), angles=tuple(model.angles))
        for t in model.terms:
            grid.image_offset(model, t)
        return grid

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def domega(self) -> float:
        return 2 * self.angles[0] / self.n_omega[0]

    @property
    def t(self) -> np.ndarray:
        return -self.T + self.dt * np.arange(self.n_t + 1)

    @property
    def radii(self) -> np.ndarray:
        return np.exp(self.t)

    def omegas(self, j: int) -> np.ndarray:
        return -self.angles[j] + self.domega * np.arange(self.n_omega[j] + 1)

    @property
    def offsets(self) -> List[int]:
        out, total = [], 0
        for n in self.n_omega:
            out.append(total)
            total += (self.n_t + 1) * (n + 1)
        return out

    @property
    def size(self) -> int:
        return sum((self.n_t + 1) * (n + 1) for n in self.n_omega)

    def node_indices(self, j: int) -> np.ndarray:
        """Global indices of angle j as an (n_t + 1, n_omega[j] + 1) array"""
        n = self.n_omega[j] + 1
        return self.offsets[j] + np.arange((self.n_t + 1) * n).reshape(self.n_t + 1, n)

    def image_offset(self, model: OrbitModel, term: NonlocalTerm) -> Tuple[int, int]:
        """(omega index on angle k, t shift) of the image of side (j, sigma) under a term"""
        l_image = _whole((model.image_angle(term) + self.angles[term.k]) / self.domega,
                         f"[orbit {model.orbit_id}] rotation {term.rotation:.6g} of term "
                         f"(j={term.j}, sigma={term.sigma}, k={term.k}) is not a multiple of dw={self.domega:.6g}")
        shift = _whole(math.log(term.homothety) / self.dt,
                       f"[orbit {model.orbit_id}] ln chi = {math.log(term.homothety):.6g} of term "
                       f"(j={term.j}, sigma={term.sigma}, k={term.k}) is not a multiple of dt={self.dt:.6g}; change n_t")
        return l_image, shift

    def is_refinement_of(self, other: "LogPolarGrid") -> bool:
        return (self.angles == other.angles and abs(self.T - other.T) < 1e-12
                and self.n_t == 2 * other.n_t and all(a == 2 * b for a, b in zip(self.n_omega, other.n_omega)))

    def describe(self) -> Dict[str, object]:
        return {"T": self.T, "n_t": self.n_t, "n_omega": list(self.n_omega), "angles": list(self.angles),
                "dt": self.dt, "domega": self.domega, "layout": "angle-major, t rows, omega columns"}


def _zero_side(j: int, sigma: int, r: np.ndarray) -> np.ndarray:
    return np.zeros_like(r)


def _zero_outer(j: int, omega: np.ndarray) -> np.ndarray:
    return np.zeros_like(omega)


def _zero_volume(j: int, r: np.ndarray, omega: np.ndarray) -> np.ndarray:
    return np.zeros(np.broadcast(r, omega).shape)


@dataclass(frozen=True)
class BoundaryData:
    """
    Data of the discrete problem.

    psi(j, sigma, r)      right-hand side of the nonlocal condition on a side
    outer(j, omega)       Dirichlet data at r = 1
    volume(j, r, omega)   f0
    inner(j, omega)       r du/dr at the inner radius (None for homogeneous Neumann)
    """
    psi: Callable[[int, int, np.ndarray], np.ndarray] = _zero_side
    outer: Callable[[int, np.ndarray], np.ndarray] = _zero_outer
    volume: Callable[[int, np.ndarray, np.ndarray], np.ndarray] = _zero_volume
    inner: Optional[Callable[[int, np.ndarray], np.ndarray]] = None


@dataclass(frozen=True)
class DiscreteProblem:
    model: OrbitModel = field(repr=False)
    grid: LogPolarGrid
    matrix: sp.csr_matrix = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    zero_extended: int = 0


def assemble(model: OrbitModel, grid: LogPolarGrid, data: BoundaryData = BoundaryData()) -> DiscreteProblem:
    """
    Sparse system for the frozen Laplace model problem.

    Raises:
        ValidationError: a principal part is not the Laplacian
        GridConstructionError: more than 2% of the side rows reach below the inner edge
    """
    if not model.is_laplace:
        raise ValidationError(f"[orbit {model.orbit_id}] the solver handles the Laplacian only")
    model = freeze_model(model)
    dt, dw = grid.dt, grid.domega
    t = grid.t
    r = np.exp(t)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    rhs = np.zeros(grid.size)

    def add(row_idx, col_idx, value):
        row_idx = np.asarray(row_idx).ravel()
        rows.append(row_idx)
        cols.append(np.asarray(col_idx).ravel())
        vals.append(np.broadcast_to(np.asarray(value, dtype=float), np.asarray(col_idx).shape).ravel())

    side_rows = 0
    extended = 0
    for j in range(model.n_angles):
        idx = grid.node_indices(j)
        omegas = grid.omegas(j)

        centre = idx[1:-1, 1:-1]
        add(centre, centre, -2.0 / dt ** 2 - 2.0 / dw ** 2)
        add(centre, idx[2:, 1:-1], 1.0 / dt ** 2)
        add(centre, idx[:-2, 1:-1], 1.0 / dt ** 2)
        add(centre, idx[1:-1, 2:], 1.0 / dw ** 2)
        add(centre, idx[1:-1, :-2], 1.0 / dw ** 2)
        tt, ww = np.meshgrid(t[1:-1], omegas[1:-1], indexing="ij")
        rhs[centre.ravel()] = (np.exp(2 * tt) * data.volume(j, np.exp(tt), ww)).ravel()

        outer = idx[-1, :]
        add(outer, outer, 1.0)
        rhs[outer] = data.outer(j, omegas)

        inner = idx[0, 1:-1]
        add(inner, inner, -3.0 / (2 * dt))
        add(inner, idx[1, 1:-1], 4.0 / (2 * dt))
        add(inner, idx[2, 1:-1], -1.0 / (2 * dt))
        rhs[inner] = data.inner(j, omegas[1:-1]) if data.inner is not None else 0.0

        for sigma, l_side in ((1, 0), (2, grid.n_omega[j])):
            side = idx[:-1, l_side]
            theta = model.side_angle(j, sigma)
            missing = np.zeros(side.size, dtype=bool)
            for term in model.terms_for(j, sigma):
                l_image, shift = grid.image_offset(model, term)
                target_i = np.arange(grid.n_t) + shift
                ok = (target_i >= 0) & (target_i <= grid.n_t)
                missing |= ~ok
                target = grid.node_indices(term.k)[np.clip(target_i, 0, grid.n_t), l_image]
                weights = np.asarray(term.weight(r[:-1], theta), dtype=float)
                add(side[ok], target[ok], weights[ok])
            rhs[side] = data.psi(j, sigma, r[:-1])
            side_rows += side.size
            extended += int(missing.sum())

    if extended:
        share = extended / max(side_rows, 1)
        logger.warning(f"[orbit {model.orbit_id}] {extended} nonlocal row(s) zero-extended below the inner edge")
        if share > ZERO_EXTENSION_LIMIT:
            raise GridConstructionError(
                f"[orbit {model.orbit_id}] {share:.1%} of the nonlocal rows reach below t=-T; increase T"
            )

    matrix = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                           shape=(grid.size, grid.size)).tocsr()
    logger.debug(f"[orbit {model.orbit_id}] assembled {grid.size} unknowns, {matrix.nnz} nonzeros")
    return DiscreteProblem(model, grid, matrix, rhs, extended)


@dataclass
class DiscreteSolution:
    grid: LogPolarGrid
    values: np.ndarray = field(repr=False)
    method: str = "gmres"
    residual: float = 0.0
    fit: Optional["ExponentFit"] = None
    w2_dyadic: List[float] = field(default_factory=list)

    def field(self, j: int = 0) -> np.ndarray:
        """Values of angle j as an (n_t + 1, n_omega[j] + 1) array"""
        return self.values[self.grid.node_indices(j)]

    def ray(self, omega: float = 0.0, j: int = 0) -> Tuple[np.ndarray, np.ndarray]:
        """(r, u) along the grid ray nearest to omega"""
        l = int(np.argmin(np.abs(self.grid.omegas(j) - omega)))
        return self.grid.radii, self.field(j)[:, l]


def _relative_residual(a: sp.spmatrix, b: np.ndarray, x: np.ndarray) -> float:
    return float(np.linalg.norm(b - a @ x) / np.linalg.norm(b))


def _equilibrated(problem: DiscreteProblem) -> Tuple[sp.csc_matrix, np.ndarray]:
    """Matrix and right-hand side with every row scaled to unit max-norm"""
    a = problem.matrix.tocsr()
    row_max = abs(a).max(axis=1).toarray().ravel()
    scale = 1.0 / np.where(row_max > 0, row_max, 1.0)
    return (sp.diags(scale) @ a).tocsc(), scale * problem.rhs


def _incomplete_lu(a: sp.csc_matrix, tag: str):
    """First ILU_SETTINGS entry that factors a, or None"""
    for settings in ILU_SETTINGS:
        try:
            return spla.spilu(a, **settings)
        except RuntimeError as e:
            logger.debug(f"{tag} incomplete LU with {settings} failed ({e})")
    return None


def _finished(sol: DiscreteSolution) -> DiscreteSolution:
    sol.w2_dyadic = dyadic_w2_levels(sol)
    return sol


def solve(problem: DiscreteProblem) -> DiscreteSolution:
    """
    ILU-preconditioned restarted GMRES to relative residual 1e-10 on the
    row-equilibrated system, sparse LU when GMRES stagnates.

    Raises:
        SingularSystemError: both solvers fail
    """
    tag = f"[orbit {problem.model.orbit_id}]"
    if not np.any(problem.rhs):
        return _finished(DiscreteSolution(problem.grid, np.zeros(problem.grid.size), "zero", 0.0))

    a, b = _equilibrated(problem)
    ilu = _incomplete_lu(a, tag)
    if ilu is None:
        logger.warning(f"{tag} incomplete LU failed for every setting; falling back to a direct solve")
    else:
        precond = spla.LinearOperator(a.shape, ilu.solve)
        x, info = spla.gmres(a, b, M=precond, rtol=GMRES_RTOL, restart=GMRES_RESTART, maxiter=GMRES_MAXITER)
        if info == 0 and np.all(np.isfinite(x)):
            residual = _relative_residual(a, b, x)
            if residual < ACCEPT_RESIDUAL:
                return _finished(DiscreteSolution(problem.grid, x, "gmres", residual))
            logger.warning(f"{tag} gmres residual {residual:.3e} too large; falling back to a direct solve")
        else:
            logger.warning(f"{tag} gmres did not converge (info={info}); falling back to a direct solve")

    try:
        x = spla.spsolve(a, b)
    except RuntimeError as e:
        raise SingularSystemError(f"{tag} direct solve failed: {e}")
    if not np.all(np.isfinite(x)):
        raise SingularSystemError(f"{tag} discrete system is singular (non-finite solution)")
    residual = _relative_residual(problem.matrix, problem.rhs, x)
    if residual > 1e-6:
        raise SingularSystemError(f"{tag} direct solve residual {residual:.3e}; the discrete problem is near-singular")
    return _finished(DiscreteSolution(problem.grid, x, "spsolve", residual))


# ---------------------------------------------------------------------------
# Exponent fit
# ---------------------------------------------------------------------------

@dataclass
class ExponentFit:
    constant: float
    alpha: float
    amplitude: float
    residual: float
    window: Tuple[float, float] = FIT_WINDOW
    regular: Dict[float, float] = field(default_factory=dict)

    @property
    def meaningful(self) -> bool:
        return self.residual < FIT_MEANINGFUL

    def to_dict(self) -> Dict[str, object]:
        return {"C": self.constant, "alpha": self.alpha, "A": self.amplitude, "residual": self.residual,
                "meaningful": self.meaningful, "window": list(self.window),
                "regular": {f"r^{p:g}": b for p, b in self.regular.items()}}


def fit_power_law(r: np.ndarray, u: np.ndarray, constant_guess: float,
                  window: Tuple[float, float] = FIT_WINDOW,
                  regular_powers: Sequence[float] = REGULAR_POWERS) -> ExponentFit:
    """
    u ~ C + A r^alpha + sum_p B_p r^p on the window.

    alpha starts from the log-log slope of |u - C0| and is polished by least
    squares with the linear coefficients projected out. Regular powers within
    REGULAR_SEPARATION of that slope are left out of the model.
    """
    mask = (r >= window[0] * (1 - 1e-12)) & (r <= window[1] * (1 + 1e-12))
    rw, uw = r[mask], u[mask]
    dev = np.abs(uw - constant_guess)
    keep = dev > 0
    if keep.sum() < 3:
        return ExponentFit(constant_guess, float("nan"), 0.0, float("inf"), window)
    slope, _ = np.polyfit(np.log(rw[keep]), np.log(dev[keep]), 1)
    slope = float(np.clip(slope, *ALPHA_BOUNDS))
    powers = [p for p in regular_powers if abs(p - slope) >= REGULAR_SEPARATION]
    if rw.size < 3 + len(powers):
        powers = []

    def basis(alpha):
        return np.column_stack([np.ones_like(rw), np.power(rw, alpha)] + [np.power(rw, p) for p in powers])

    def coefficients(alpha):
        return np.linalg.lstsq(basis(alpha), uw, rcond=None)[0]

    def misfit(p):
        return basis(p[0]) @ coefficients(p[0]) - uw

    polished = least_squares(misfit, [slope], bounds=ALPHA_BOUNDS, xtol=1e-14, ftol=1e-14, gtol=1e-14)
    alpha = float(polished.x[0])
    coef = coefficients(alpha)
    signal = max(float(np.abs(coef[1] * np.power(rw, alpha)).max()), 1e-300)
    residual = float(np.abs(misfit(polished.x)).max() / signal)
    regular = {float(p): float(b) for p, b in zip(powers, coef[2:])}
    return ExponentFit(float(coef[0]), alpha, float(coef[1]), residual, window, regular)


def fit_singularity_exponent(sol: DiscreteSolution, omega_star: float = 0.0, j: int = 0,
                             window: Tuple[float, float] = FIT_WINDOW) -> ExponentFit:
    """
    Fit u(r, omega*) ~ C + A r^alpha + B1 r + B2 r^2 on the window.

    C0, the starting constant, is the mean over the deepest dyadic level of
    the ray.

    Raises:
        FitWindowError: fewer than 6 dyadic levels between the inner edge and the window
    """
    grid = sol.grid
    r_min = math.exp(-grid.T)
    if r_min * 2.0 ** FIT_CLEAR_LEVELS > window[0]:
        needed = math.log(window[0] / 2.0 ** FIT_CLEAR_LEVELS) * -1
        raise FitWindowError(
            f"Fit window starting at r={window[0]:.3g} is polluted by the inner edge r={r_min:.3g} "
            f"(need T >= {needed:.2f}); use T >= 12"
        )
    r, u = sol.ray(omega_star, j)
    deepest = r <= 2 * r_min
    fit = fit_power_law(r, u, float(np.mean(u[deepest])), window)
    sol.fit = fit
    logger.info(f"[fit] C={fit.constant:.6g} alpha={fit.alpha:.6g} A={fit.amplitude:.6g} residual={fit.residual:.3e}")
    return fit


# ---------------------------------------------------------------------------
# Discrete W^2 surrogate
# ---------------------------------------------------------------------------

def _w2_rows(sol: DiscreteSolution) -> Tuple[np.ndarray, np.ndarray]:
    """
    Interior t values and the squared W^2 density integrated over omega on
    each of those rows, summed over angles:
    e^(-2t)[(u_tt - u_t)^2 + 2(u_tw - u_w)^2 + (u_ww + u_t)^2] dt dw.
    """
    grid = sol.grid
    dt, dw = grid.dt, grid.domega
    t = grid.t[1:-1]
    rows = np.zeros(t.size)
    for j in range(len(grid.n_omega)):
        u = sol.field(j)
        u_t = (u[2:, 1:-1] - u[:-2, 1:-1]) / (2 * dt)
        u_w = (u[1:-1, 2:] - u[1:-1, :-2]) / (2 * dw)
        u_tt = (u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / dt ** 2
        u_ww = (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / dw ** 2
        u_tw = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4 * dt * dw)
        density = np.exp(-2 * t)[:, None] * ((u_tt - u_t) ** 2 + 2 * (u_tw - u_w) ** 2 + (u_ww + u_t) ** 2)
        rows += density.sum(axis=1) * dt * dw
    return t, rows


def discrete_w2(sol: DiscreteSolution, rho: float) -> float:
    """Squared discrete W^2 seminorm over r > rho"""
    t, rows = _w2_rows(sol)
    return float(rows[t > math.log(rho)].sum())


def dyadic_w2_levels(sol: DiscreteSolution) -> List[float]:
    """Squared W^2 contributions of the levels 2^-(m+1) < r <= 2^-m, m = 0, 1, ... down to the inner edge"""
    t, rows = _w2_rows(sol)
    levels = []
    for m in range(int(sol.grid.T / math.log(2))):
        band = (t > -(m + 1) * math.log(2)) & (t <= -m * math.log(2))
        levels.append(float(rows[band].sum()))
    return levels


@dataclass
class W2Trend:
    values: List[float]
    growth: List[float]
    trend: str
    regions: List[float]

    def to_dict(self) -> Dict[str, object]:
        return {"values": self.values, "growth": self.growth, "trend": self.trend, "regions": self.regions,
                "surrogate": "discrete W2 seminorm; numerical surrogate for W2 membership"}


def w2_blowup_diagnostic(solutions: Sequence[DiscreteSolution]) -> W2Trend:
    """
    Growth of the discrete W^2 seminorm under nested refinement.

    The region is not fixed at r > 2^-8: refinement k (k = 0 for the coarsest
    grid) measures r > 2^-(8+k), one dyadic level deeper per refinement, and
    regions[k] records it. Divergent when the seminorm grows by at least 25%
    twice in a row, bounded when every change stays below 5%.

    Raises:
        GridConstructionError: fewer than three solutions or non-nested grids
    """
    if len(solutions) < 3:
        raise GridConstructionError("W2 diagnostic needs solutions on at least three nested grids")
    for coarse, fine in zip(solutions, solutions[1:]):
        if not fine.grid.is_refinement_of(coarse.grid):
            raise GridConstructionError(
                f"Grids are not nested: n_t {coarse.grid.n_t} -> {fine.grid.n_t}, "
                f"n_omega {coarse.grid.n_omega} -> {fine.grid.n_omega}, T {coarse.grid.T} -> {fine.grid.T}"
            )
    regions = [2.0 ** -(W2_REGION_EXPONENT + k) for k in range(len(solutions))]
    values = [discrete_w2(s, rho) for s, rho in zip(solutions, regions)]
    growth = [(b - a) / a if a > 0 else float("inf") for a, b in zip(values, values[1:])]
    if any(g >= GROWTH_DIVERGENT and h >= GROWTH_DIVERGENT for g, h in zip(growth, growth[1:])):
        trend = "divergent"
    elif all(abs(g) < GROWTH_BOUNDED for g in growth):
        trend = "bounded"
    else:
        trend = "inconclusive"
    logger.info(f"[w2] values {', '.join(f'{v:.4g}' for v in values)} -> {trend}")
    return W2Trend(values, growth, trend, regions)


# ---------------------------------------------------------------------------
# Data builders
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianBumpField:
    """U(y) = l1 y1 + l2 y2 + exp(-|y - c|^2 / w^2), the same in every angle's frame"""
    centre: Tuple[float, float] = (0.5, 0.1)
    width: float = 0.35
    linear: Tuple[float, float] = (1.0, 0.0)

    def _polar(self, r, omega):
        y1, y2 = r * np.cos(omega), r * np.sin(omega)
        d1, d2 = y1 - self.centre[0], y2 - self.centre[1]
        g = np.exp(-(d1 ** 2 + d2 ** 2) / self.width ** 2)
        return y1, y2, d1, d2, g

    def value(self, r, omega):
        y1, y2, _, _, g = self._polar(np.asarray(r, dtype=float), np.asarray(omega, dtype=float))
        return self.linear[0] * y1 + self.linear[1] * y2 + g

    def radial_derivative(self, r, omega):
        omega = np.asarray(omega, dtype=float)
        _, _, d1, d2, g = self._polar(np.asarray(r, dtype=float), omega)
        w2 = self.width ** 2
        g1, g2 = self.linear[0] - 2 * d1 / w2 * g, self.linear[1] - 2 * d2 / w2 * g
        return g1 * np.cos(omega) + g2 * np.sin(omega)

    def laplacian(self, r, omega):
        _, _, d1, d2, g = self._polar(np.asarray(r, dtype=float), np.asarray(omega, dtype=float))
        w2 = self.width ** 2
        return g * (4 * (d1 ** 2 + d2 ** 2) / w2 ** 2 - 4 / w2)


def manufactured_data(model: OrbitModel, exact, T: float) -> BoundaryData:
    """
    Data for which the smooth field `exact` (value, radial_derivative,
    laplacian in (r, omega)) solves the model problem on the truncated angles.
    """
    model = freeze_model(model)

    def psi(j, sigma, r):
        theta = model.side_angle(j, sigma)
        total = np.zeros_like(r)
        for term in model.terms_for(j, sigma):
            total = total + term.weight(r, theta) * exact.value(term.homothety * r, model.image_angle(term))
        return total

    r_min = math.exp(-T)
    return BoundaryData(
        psi=psi,
        outer=lambda j, omega: exact.value(1.0, omega),
        volume=lambda j, r, omega: exact.laplacian(r, omega),
        inner=lambda j, omega: r_min * exact.radial_derivative(r_min, omega),
    )


def witness_data(witness, T: float) -> BoundaryData:
    """Forcing P(xi W) with homogeneous side and outer data; inner data from xi W"""
    r_min = math.exp(-T)

    def inner(j, omega):
        d = witness.derivatives(np.full_like(omega, r_min), omega, j)
        return np.real(r_min * d["W_r"])

    return BoundaryData(
        volume=lambda j, r, omega: np.real(witness.induced_forcing(r, omega, j)),
        inner=inner,
    )


def spec_data(spec: ProblemSpec, orbit_id: int) -> BoundaryData:
    """
    Data of a problem spec near one orbit: Psi = f - a v(Omega) on every side,
    f0 from the volume profile, zero outer data and homogeneous inner data.
    Exterior terms without an exterior trace contribute nothing.
    """
    model = spec.orbit(orbit_id)
    exterior = spec.exterior_for(orbit_id)

    def psi(j, sigma, r):
        theta = model.side_angle(j, sigma)
        total = np.asarray(spec.trace(orbit_id, j, sigma).value(r, theta), dtype=float)
        for e in exterior:
            if (e.j, e.sigma) == (j, sigma) and e.exterior_trace is not None:
                total = total - e.coefficient.value(r, theta) * e.exterior_trace.value(r, theta)
        return total

    def volume(j, r, omega):
        r, omega = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(omega, dtype=float))
        out = np.empty(r.shape)
        # profiles take one polar angle per call
        for w in np.unique(omega):
            mask = omega == w
            out[mask] = spec.rhs.volume.value(r[mask], float(w))
        return out

    return BoundaryData(psi=psi, volume=volume)


def exact_error(sol: DiscreteSolution, exact: Callable[[int, np.ndarray, np.ndarray], np.ndarray]) -> float:
    """L2 error sqrt(sum (u - U)^2 r^2 dt dw) over all nodes"""
    grid = sol.grid
    total = 0.0
    for j in range(len(grid.n_omega)):
        tt, ww = np.meshgrid(grid.t, grid.omegas(j), indexing="ij")
        rr = np.exp(tt)
        diff = sol.field(j) - exact(j, rr, ww)
        total += float(np.sum(diff ** 2 * rr ** 2) * grid.dt * grid.domega)
    return math.sqrt(total)


def convergence_orders(errors: Sequence[float]) -> List[float]:
    return [math.log2(a / b) for a, b in zip(errors, errors[1:])]


def constant_relation_residual(model: OrbitModel, constants: Union[float, Sequence[float]],
                               psi_at_vertex: Dict[Tuple[int, int], float]) -> float:
    """
    Relative mismatch of (B C)(0) = Psi(0) on every side.

    constants holds the vertex value C_k of every angle of the orbit; a
    scalar is shared by all angles.

    Raises:
        ValidationError: the vector does not have one entry per angle
    """
    model = freeze_model(model)
    c = np.asarray(constants, dtype=float)
    if c.ndim == 0:
        c = np.full(model.n_angles, float(c))
    if c.shape != (model.n_angles,):
        raise ValidationError(f"[orbit {model.orbit_id}] expected {model.n_angles} vertex constant(s), got {c.size}")
    worst = 0.0
    for j in range(model.n_angles):
        for sigma in (1, 2):
            bc = sum(t.weight_at_vertex * c[t.k] for t in model.terms_for(j, sigma))
            target = psi_at_vertex.get((j, sigma), 0.0)
            worst = max(worst, abs(bc - target) / max(abs(target), abs(bc), 1e-300))
    return worst
