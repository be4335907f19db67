"""
Smoothness verdicts for nonlocal problems.

The verdict depends only on the band spectra of the frozen orbit models:
    Preserves  no orbit has a band eigenvalue
    Border     every band spectrum is empty or exactly {-i proper}, at least one is not empty
    Violates   some orbit has an improper band eigenvalue

Border verdicts carry the consistency obligations; Violates carries an
explicit singular power solution cut off near the vertex.
"""
import logging
import math
from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from services.lib.consistency import (
    BetaTable, check_admissible, check_boundary_data, check_coefficient_condition, dependency_betas,
    exterior_vertex_values, hat_operators, null_vector_from_proper_eigenvector,
)
from services.lib.errors import AmbiguousSpectrum, WitnessRefused
from services.lib.geometry import OrbitModel, ProblemSpec, freeze, freeze_model, landing_case
from services.lib.pencil import (
    BAND, PencilEigenvalue, SpectralReport, eigenvalue_or_raise, fundamental_system,
    homogeneous_polynomial_residual, second_derivatives, spectral_report,
)

logger = logging.getLogger("classifier")

PRESERVES = "Preserves"
BORDER = "Border"
VIOLATES = "Violates"

RESIDUAL_SAMPLES = 200
PROFILE_TAYLOR_RADIUS = 1e-2
PROFILE_TAYLOR_POINTS = 32
MINUS_I = complex(0.0, -1.0)


# ---------------------------------------------------------------------------
# Singular witness
# ---------------------------------------------------------------------------

def smoothstep_cutoff(r, cutoff_radius: float):
    """
    Radial cutoff xi with xi = 1 on r <= eps'/4 and xi = 0 on r >= eps'/2,
    joined by a quintic smoothstep (C2).

    Returns:
        (xi, dxi/dr, d2xi/dr2)
    """
    r = np.asarray(r, dtype=float)
    a = cutoff_radius / 4.0
    x = np.clip((r - a) / a, 0.0, 1.0)
    inside = (x > 0.0) & (x < 1.0)
    xi = 1.0 - (6 * x ** 5 - 15 * x ** 4 + 10 * x ** 3)
    dxi = np.where(inside, -(30 * x ** 4 - 60 * x ** 3 + 30 * x ** 2) / a, 0.0)
    ddxi = np.where(inside, -(120 * x ** 3 - 180 * x ** 2 + 60 * x) / a ** 2, 0.0)
    return xi, dxi, ddxi


def _basis_taylor(model: OrbitModel, j: int, lam0: complex, order: int, omegas: np.ndarray) -> np.ndarray:
    """
    Taylor coefficients in lambda of (u_beta, u_beta', u_beta'') on angle j.

    Returns:
        array [q, beta, derivative, omega]
    """
    def sample(lam):
        u0, u1, du0, du1 = fundamental_system(model, j, lam, omegas)
        dd0 = second_derivatives(model, j, lam, omegas, u0, du0)
        dd1 = second_derivatives(model, j, lam, omegas, u1, du1)
        return np.array([[u0, du0, dd0], [u1, du1, dd1]])

    if order == 0:
        return sample(lam0)[None]
    angles = 2 * np.pi * np.arange(PROFILE_TAYLOR_POINTS) / PROFILE_TAYLOR_POINTS
    samples = np.array([sample(lam0 + PROFILE_TAYLOR_RADIUS * np.exp(1j * a)) for a in angles])
    coeffs = np.fft.fft(samples, axis=0) / PROFILE_TAYLOR_POINTS
    out = [sample(lam0)]
    for q in range(1, order + 1):
        out.append(coeffs[q] / PROFILE_TAYLOR_RADIUS ** q)
    return np.array(out)


@dataclass
class SingularWitness:
    """
    W = r^(i lambda0) sum_{l<=m} (i ln r)^l / l! phi^(m-l)(omega), cut off by xi.

    The angular functions phi^(p) are the Taylor coefficients of U(lambda) c(lambda)
    along the Jordan chain c.
    """
    model: OrbitModel = field(repr=False)
    lambda0: complex
    log_power: int
    chain: Tuple[np.ndarray, ...] = field(repr=False)
    cutoff_radius: float
    real_part: bool = True

    @property
    def orbit_id(self) -> int:
        return self.model.orbit_id

    @property
    def mu(self) -> complex:
        return 1j * self.lambda0

    def angular_derivatives(self, j: int, omegas) -> np.ndarray:
        """phi^(p), d phi^(p)/d omega and d2 phi^(p)/d omega2 as array [p, derivative, omega]"""
        omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
        m = self.log_power
        basis = _basis_taylor(self.model, j, self.lambda0, m, omegas)
        out = np.zeros((m + 1, 3, omegas.size), dtype=complex)
        for p in range(m + 1):
            for q in range(p + 1):
                c = self.chain[p - q]
                out[p] += c[2 * j] * basis[q, 0] + c[2 * j + 1] * basis[q, 1]
        return out

    def angular_profiles(self, j: int, omegas) -> np.ndarray:
        return self.angular_derivatives(j, omegas)[:, 0, :]

    def _log_polynomial(self, t: np.ndarray, phis: np.ndarray):
        """F(t, omega) = sum_l (i t)^l / l! phi^(m-l) and its t- and omega-derivatives"""
        m = self.log_power
        shape = np.broadcast(t, phis[0, 0]).shape
        F = {key: np.zeros(shape, dtype=complex) for key in ("F", "Ft", "Ftt", "Fw", "Ftw", "Fww")}
        for l in range(m + 1):
            phi, dphi, ddphi = phis[m - l]
            g = (1j * t) ** l / factorial(l)
            gt = 1j * (1j * t) ** (l - 1) / factorial(l - 1) if l >= 1 else 0.0
            gtt = -((1j * t) ** (l - 2)) / factorial(l - 2) if l >= 2 else 0.0
            F["F"] = F["F"] + g * phi
            F["Ft"] = F["Ft"] + gt * phi
            F["Ftt"] = F["Ftt"] + gtt * phi
            F["Fw"] = F["Fw"] + g * dphi
            F["Ftw"] = F["Ftw"] + gt * dphi
            F["Fww"] = F["Fww"] + g * ddphi
        return F

    def derivatives(self, r, omega, j: int) -> Dict[str, np.ndarray]:
        """W and its polar derivatives W_r, W_w, W_rr, W_rw, W_ww at matching (r, omega) samples"""
        r = np.asarray(r, dtype=float)
        omega = np.broadcast_to(np.asarray(omega, dtype=float), r.shape)
        flat_w = omega.ravel()
        phis = self.angular_derivatives(j, flat_w).reshape((self.log_power + 1, 3) + omega.shape)
        t = np.log(r)
        F = self._log_polynomial(t, phis)
        mu = self.mu
        p0, p1, p2 = r ** mu, r ** (mu - 1), r ** (mu - 2)
        out = {
            "W": p0 * F["F"],
            "W_w": p0 * F["Fw"],
            "W_ww": p0 * F["Fww"],
            "W_r": p1 * (mu * F["F"] + F["Ft"]),
            "W_rw": p1 * (mu * F["Fw"] + F["Ftw"]),
            "W_rr": p2 * (mu * (mu - 1) * F["F"] + (2 * mu - 1) * F["Ft"] + F["Ftt"]),
        }
        if self.real_part:
            out = {k: np.real(v) for k, v in out.items()}
        return out

    def value(self, r, omega, j: int = 0):
        return self.derivatives(r, omega, j)["W"]

    def _operator_terms(self, r, omega, j: int, d: Dict[str, np.ndarray]):
        a, s, rr = self.model.principal_part(j).polar_coefficients(np.asarray(omega, dtype=float))
        h_rr = d["W_rr"]
        h_rw = d["W_rw"] / r - d["W_w"] / r ** 2
        h_ww = d["W_ww"] / r ** 2 + d["W_r"] / r
        return rr * h_rr, 2 * s * h_rw, a * h_ww

    def hessian_norm_squared(self, r, omega, j: int = 0):
        """|D^2 W|^2 in the polar frame"""
        d = self.derivatives(r, omega, j)
        h_rr = d["W_rr"]
        h_rw = d["W_rw"] / r - d["W_w"] / r ** 2
        h_ww = d["W_ww"] / r ** 2 + d["W_r"] / r
        return np.abs(h_rr) ** 2 + 2 * np.abs(h_rw) ** 2 + np.abs(h_ww) ** 2

    def induced_forcing(self, r, omega, j: int = 0):
        """f0 = P(xi W) = xi PW + 2 xi' (R W_r + S W_w / r) + W (xi'' R + xi' A / r)"""
        r = np.asarray(r, dtype=float)
        omega = np.broadcast_to(np.asarray(omega, dtype=float), r.shape)
        d = self.derivatives(r, omega, j)
        a, s, rr = self.model.principal_part(j).polar_coefficients(omega)
        xi, dxi, ddxi = smoothstep_cutoff(r, self.cutoff_radius)
        pw = sum(self._operator_terms(r, omega, j, d))
        return xi * pw + 2 * dxi * (rr * d["W_r"] + s * d["W_w"] / r) + d["W"] * (ddxi * rr + dxi * a / r)

    def cut_off_value(self, r, omega, j: int = 0):
        return smoothstep_cutoff(r, self.cutoff_radius)[0] * self.value(r, omega, j)

    def _sample_points(self, samples: int):
        rng = np.random.default_rng(20240613)
        return np.exp(rng.uniform(math.log(1e-6), math.log(1.0), samples))

    def interior_residual(self, samples: int = RESIDUAL_SAMPLES) -> float:
        """max |PW| relative to max(|R W_rr| + 2|S H_rw| + |A H_ww|) at random interior points"""
        r = self._sample_points(samples)
        worst = 0.0
        rng = np.random.default_rng(7)
        for j in range(self.model.n_angles):
            w = self.model.angles[j] * rng.uniform(-0.999, 0.999, samples)
            terms = self._operator_terms(r, w, j, self.derivatives(r, w, j))
            scale = sum(np.abs(x) for x in terms)
            worst = max(worst, float(np.max(np.abs(sum(terms))) / max(float(np.max(scale)), 1e-300)))
        return worst

    def boundary_residual(self, samples: int = RESIDUAL_SAMPLES) -> float:
        """max |W_j + sum b(0) W_k(G y)| relative to the largest summand, frozen weights"""
        r = self._sample_points(samples)
        worst = 0.0
        for j in range(self.model.n_angles):
            for sigma in (1, 2):
                total = np.zeros_like(r, dtype=complex)
                scale = np.zeros_like(r)
                for term in self.model.terms_for(j, sigma):
                    w = np.full_like(r, self.model.image_angle(term))
                    v = term.weight_at_vertex * self.value(term.homothety * r, w, term.k)
                    total = total + v
                    scale = scale + np.abs(v)
                worst = max(worst, float(np.max(np.abs(total)) / max(float(np.max(scale)), 1e-300)))
        return worst

    def forcing_samples(self, n_r: int = 64, n_omega: int = 33) -> List[Tuple[float, float, int, float]]:
        """(r, omega, j, f0) on the annulus eps'/4 <= r <= eps'/2"""
        rows = []
        radii = np.linspace(self.cutoff_radius / 4, self.cutoff_radius / 2, n_r)
        for j in range(self.model.n_angles):
            omegas = np.linspace(-self.model.angles[j], self.model.angles[j], n_omega)
            rr, ww = np.meshgrid(radii, omegas, indexing="ij")
            f0 = np.real(self.induced_forcing(rr, ww, j))
            rows.extend((float(a), float(b), j, float(c)) for a, b, c in zip(rr.ravel(), ww.ravel(), f0.ravel()))
        return rows

    def dyadic_w2(self, levels: int = 16, nodes: int = 24) -> List[float]:
        """W^2 seminorm squared of W (no cutoff) on the annuli 2^-(m+1) <= r <= 2^-m"""
        x, wx = leggauss(nodes)
        out = []
        for m in range(levels):
            lo, hi = 2.0 ** -(m + 1), 2.0 ** -m
            r = lo + (hi - lo) * (x + 1) / 2
            wr = wx * (hi - lo) / 2
            total = 0.0
            for j in range(self.model.n_angles):
                om = self.model.angles[j] * x
                wo = wx * self.model.angles[j]
                rr, ww = np.meshgrid(r, om, indexing="ij")
                density = self.hessian_norm_squared(rr, ww, j) * rr
                total += float(np.einsum("i,j,ij->", wr, wo, density))
            out.append(total)
        return out

    def to_dict(self) -> Dict[str, object]:
        return {
            "orbit_id": self.orbit_id,
            "lambda0": {"re": self.lambda0.real, "im": self.lambda0.imag},
            "log_power": self.log_power,
            "cutoff_radius": self.cutoff_radius,
            "interior_residual": self.interior_residual(),
            "boundary_residual": self.boundary_residual(),
        }


def _needs_log_power(model: OrbitModel, eig: PencilEigenvalue) -> bool:
    """True when the plain power solution at lambda = -i is already a polynomial"""
    if abs(eig.lam - MINUS_I) > 1e-8:
        return False
    vec = eig.eigenvectors[0]
    worst = 0.0
    for j in range(model.n_angles):
        omegas = np.linspace(-model.angles[j], model.angles[j], 64)
        u0, u1, _, _ = fundamental_system(model, j, MINUS_I, omegas)
        worst = max(worst, homogeneous_polynomial_residual(vec[2 * j] * u0 + vec[2 * j + 1] * u1, omegas, 1))
    return worst < 1e-6


def witness_singular_function(model: OrbitModel, eig: PencilEigenvalue, cutoff_radius: float) -> SingularWitness:
    """
    Singular power solution for an improper band eigenvalue.

    m = 0 unless lambda = -i with a polynomial eigenvector, in which case the
    first associated vector supplies the log term.

    Raises:
        WitnessRefused: eig is proper or carries no usable chain
    """
    if eig.proper:
        raise WitnessRefused(f"[orbit {model.orbit_id}] lambda={eig.lam} is proper; no singular witness exists")
    model = freeze_model(model)
    chain_index = 0
    m = 0
    if _needs_log_power(model, eig):
        with_chain = [n for n, c in enumerate(eig.chains) if len(c) > 1]
        if not with_chain:
            raise WitnessRefused(f"[orbit {model.orbit_id}] lambda=-i has a polynomial eigenvector and no associated vector")
        chain_index, m = with_chain[0], 1
    chain = tuple(eig.chains[chain_index][:m + 1])
    witness = SingularWitness(model=model, lambda0=complex(eig.lam), log_power=m, chain=chain,
                              cutoff_radius=cutoff_radius, real_part=abs(eig.lam.real) < 1e-12)
    logger.info(f"[orbit {model.orbit_id}] witness at lambda={eig.lam:.6g} with log power {m}, cutoff {cutoff_radius:.6g}")
    return witness


# ---------------------------------------------------------------------------
# Border obligations
# ---------------------------------------------------------------------------

HOLDS = "holds"
FAILED = "FAILED"
INCONCLUSIVE = "inconclusive"


def _status(flag: Optional[bool]) -> str:
    return {True: HOLDS, False: FAILED}.get(flag, INCONCLUSIVE)


@dataclass
class Obligation:
    orbit_id: int
    name: str
    condition: str
    status: str
    necessary: bool = False
    details: Dict[str, object] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        return {"orbit_id": self.orbit_id, "name": self.name, "condition": self.condition,
                "status": self.status, "necessary": self.necessary, "details": self.details}


def _is_flat_vertex(model: OrbitModel) -> bool:
    return model.n_angles == 1 and abs(model.angles[0] - math.pi / 2) < 1e-12


def _data_condition_text(model: OrbitModel, betas: BetaTable) -> str:
    if _is_flat_vertex(model):
        return "int_0^eps r^-1 |df1/dy2(0,-r) - df2/dy2(0,r)|^2 dr < inf"
    parts = []
    for side, coeffs in betas.dependent_rows.items():
        combo = " ".join(f"{-b:+.6g} f{s}" for s, b in coeffs.items())
        parts.append(f"int_0^eps r^-1 |d/dr(f{side} {combo})|^2 dr < inf")
    return "; ".join(parts)


def border_requirements(spec: ProblemSpec, models: Sequence[OrbitModel],
                        reports: Sequence[SpectralReport]) -> List[Obligation]:
    """
    Consistency obligations for every orbit whose band spectrum is {-i proper}.

    General data: boundary data in S^3/2, a(0) = 0, da/dtau(0) = 0 and a
    finite b-derivative integral. Regular or homogeneous data: admissibility
    of the exterior couplings and da/dtau(0) = 0. With a landing case for every
    exterior term, the conditions are also necessary for homogeneous data.
    """
    kind = spec.rhs.kind
    obligations: List[Obligation] = []
    for model, report in zip(models, reports):
        if not report.eigenvalues:
            continue
        eig = report.eigenvalues[0]
        hat = hat_operators(model)
        null = null_vector_from_proper_eigenvector(model, eig, hat)
        betas = dependency_betas(hat)
        oid = model.orbit_id
        exterior = spec.exterior_for(oid)
        landings = [landing_case(e) for e in exterior]
        landed = bool(exterior) and all(x is not None for x in landings)
        necessary = kind == "homogeneous" and landed
        common = {"betas": betas.to_dict(), "null_vector": [[z.real, z.imag] for z in null],
                  "landing_cases": landings}

        coeff = check_coefficient_condition(spec, model, betas)
        if kind == "general":
            data = check_boundary_data(spec, [model], {oid: betas})[oid]
            obligations.append(Obligation(oid, "boundary data in S^3/2", _data_condition_text(model, betas),
                                          _status({"finite": True, "divergent": False}.get(data.verdict)),
                                          necessary=True, details={**common, "report": data.to_dict()}))
            obligations.append(Obligation(oid, "a(0)=0", "a(0) = 0 for every exterior coefficient",
                                          _status(coeff.holds_a_value), necessary,
                                          {"a_at_vertex": coeff.a_at_vertex}))
            obligations.append(Obligation(oid, "∂a/∂y₂(0)=0", "tangential derivative of a vanishes at the vertex",
                                          _status(coeff.holds_a_derivative), necessary,
                                          {"a_tangential_derivative": coeff.a_tangential_derivative}))
            obligations.append(Obligation(oid, "b-derivative integral finite",
                                          "int_0^eps r^-1 |d/dr(B C combination)|^2 dr < inf for constant C",
                                          _status(coeff.holds_b_integral), necessary,
                                          {"method": coeff.method, "check": coeff.to_dict()}))
        else:
            v_landing = {n: 1.0 for n in range(len(exterior))}
            adm = check_admissible(model, exterior_vertex_values(spec, model, v_landing))
            obligations.append(Obligation(oid, "admissible couplings",
                                          "B^v(0) + (B C)(0) = 0 solvable for the generator v = 1",
                                          _status(adm.admissible), necessary,
                                          {**common, "admissibility": adm.to_dict()}))
            obligations.append(Obligation(oid, "∂a/∂y₂(0)=0", "tangential derivative of a vanishes at the vertex",
                                          _status(coeff.holds_a_derivative), necessary,
                                          {"a_tangential_derivative": coeff.a_tangential_derivative,
                                           "method": coeff.method}))
    return obligations


# ---------------------------------------------------------------------------
# Verdict
# ---------------------------------------------------------------------------

@dataclass
class Verdict:
    kind: str
    per_orbit: List[SpectralReport]
    obligations: List[Obligation] = field(default_factory=list)
    witness: Optional[SingularWitness] = None
    spec_name: str = ""

    def to_dict(self) -> Dict[str, object]:
        return {
            "kind": self.kind,
            "spec": self.spec_name,
            "orbits": [r.to_dict() for r in self.per_orbit],
            "obligations": [o.to_dict() for o in self.obligations],
            "witness": self.witness.to_dict() if self.witness is not None else None,
        }


def _is_border_spectrum(report: SpectralReport) -> bool:
    return (len(report.eigenvalues) == 1 and report.eigenvalues[0].proper is True
            and abs(report.eigenvalues[0].lam - MINUS_I) < 1e-8)


def spectral_kind(reports: Iterable[SpectralReport]) -> str:
    reports = list(reports)
    if any(e.proper is False for r in reports for e in r.eigenvalues):
        return VIOLATES
    if any(r.eigenvalues for r in reports):
        if all(not r.eigenvalues or _is_border_spectrum(r) for r in reports):
            return BORDER
        return VIOLATES
    return PRESERVES


def orbit_report(args) -> SpectralReport:
    """Picklable single-orbit job: (model, band, re_window)"""
    model, band, re_window = args
    return spectral_report(model, band, re_window)


def classify(spec: ProblemSpec, band: Tuple[float, float] = BAND, re_window: Tuple[float, float] = (-8.0, 8.0),
             mapper: Callable = map, with_witness: bool = True) -> Verdict:
    """
    Verdict for a problem spec.

    Args:
        mapper: map-like callable used for the per-orbit analyses

    Raises:
        AmbiguousSpectrum: a rank or proper decision is ambiguous, or the
                           enumerated multiplicity disagrees with the winding count
    """
    models = freeze(spec)
    reports = list(mapper(orbit_report, [(m, band, re_window) for m in models]))
    for report in reports:
        eigenvalue_or_raise(report)
        if not report.closed:
            raise AmbiguousSpectrum(
                f"[orbit {report.orbit_id}] argument-principle count {report.argument_principle_count} "
                f"does not match the enumerated eigenvalues"
            )

    kind = spectral_kind(reports)
    verdict = Verdict(kind=kind, per_orbit=reports, spec_name=spec.name)
    if kind == BORDER:
        verdict.obligations = border_requirements(spec, models, reports)
    elif kind == VIOLATES and with_witness:
        candidates = [(e, m) for m, r in zip(models, reports) for e in r.eigenvalues if e.proper is False]
        eig, model = max(candidates, key=lambda c: (c[0].lam.imag, -c[1].orbit_id))
        verdict.witness = witness_singular_function(model, eig, spec.cutoff_radius())
    logger.info(f"[{spec.name or 'spec'}] verdict {kind}")
    return verdict
