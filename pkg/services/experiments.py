"""
Solver experiments.

An experiment manifest (JSON) names a kind and the problem it solves:

    kind        exponent | manufactured | blowup | witness-roundtrip
    spec        example id, path or inline document of a problem spec, or
    halfpi      {"b1": .., "b2": ..} for the flat-boundary vertex
    grid        {"n_omega": .., "n_t": .., "T": ..}        (exponent)
    grids       [[n_omega, n_t], ...] with "T"              (refinement kinds)
    data        "manufactured" | "spec" | "forcing", plus kind-specific keys
    expect      acceptance window reported as passed/failed
"""
import json
import logging
import math
import os
import sys
from typing import Any, Dict, List, Optional

import numpy as np

from services.lib.classifier import witness_singular_function
from services.lib.errors import SpecFormatError, WitnessRefused
from services.lib.geometry import OrbitModel, ProblemSpec, freeze
from services.lib.pencil import eigenvalue_or_raise, spectral_report
from services.lib.profiles import ScalarProfile
from services.lib.solver import (
    BoundaryData, DiscreteSolution, GaussianBumpField, LogPolarGrid, assemble, constant_relation_residual,
    convergence_orders, exact_error, fit_singularity_exponent, manufactured_data, solve, spec_data,
    w2_blowup_diagnostic, witness_data,
)
from services.lib.spec_io import EXAMPLE_IDS, REPO_ROOT, halfpi_spec, load_example, load_spec, parse_spec
from utils.report_writer import write_binary, write_csv, write_json
from utils.work_pool import pool_map

logger = logging.getLogger("experiments")

EXPERIMENTS_DIR = os.path.join(REPO_ROOT, "experiments")
KINDS = ("exponent", "manufactured", "blowup", "witness-roundtrip")


def list_experiments() -> List[str]:
    return sorted(name[:-5] for name in os.listdir(EXPERIMENTS_DIR) if name.endswith(".json"))


def load_manifest(ref: str) -> Dict[str, Any]:
    """Experiment manifest by shipped id or path"""
    path = ref if os.path.exists(ref) else os.path.join(EXPERIMENTS_DIR, f"{ref}.json")
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except FileNotFoundError:
        raise SpecFormatError(f"Experiment not found: {ref} (shipped: {', '.join(list_experiments())})")
    except json.JSONDecodeError as e:
        raise SpecFormatError(f"Experiment {path} is not valid JSON: {e}")
    if doc.get("kind") not in KINDS:
        raise SpecFormatError(f"Experiment kind must be one of {KINDS}, got {doc.get('kind')!r}")
    doc.setdefault("name", os.path.splitext(os.path.basename(path))[0])
    return doc


def experiment_spec(doc: Dict[str, Any]) -> ProblemSpec:
    if "halfpi" in doc:
        h = doc["halfpi"]
        return halfpi_spec(float(h.get("b1", 0.0)), float(h.get("b2", 0.0)), name=doc["name"])
    ref = doc.get("spec")
    if ref is None:
        raise SpecFormatError(f"Experiment '{doc['name']}' needs 'halfpi' or 'spec'")
    if isinstance(ref, dict):
        return parse_spec({"name": doc["name"], **ref})
    if ref in EXAMPLE_IDS:
        return load_example(ref)
    return load_spec(ref if os.path.isabs(ref) else os.path.join(REPO_ROOT, ref))


def _field(doc: Dict[str, Any]) -> GaussianBumpField:
    f = doc.get("field", {})
    return GaussianBumpField(centre=tuple(f.get("centre", (0.5, 0.1))), width=float(f.get("width", 0.35)),
                             linear=tuple(f.get("linear", (1.0, 0.0))))


def _volume_data(doc: Dict[str, Any]) -> BoundaryData:
    """Volume forcing given as a profile, homogeneous boundary data"""
    profile = ScalarProfile.parse(doc.get("forcing", "poly_y1:1,1"))

    def volume(j, r, omega):
        r, omega = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(omega, dtype=float))
        out = np.empty(r.shape)
        for w in np.unique(omega):
            mask = omega == w
            out[mask] = profile.value(r[mask], float(w))
        return out
    return BoundaryData(volume=volume)


def _data(doc: Dict[str, Any], spec: ProblemSpec, model: OrbitModel, T: float) -> BoundaryData:
    source = doc.get("data", "forcing")
    if source == "manufactured":
        return manufactured_data(model, _field(doc), T)
    if source == "spec":
        return spec_data(spec, model.orbit_id)
    if source == "forcing":
        return _volume_data(doc)
    raise SpecFormatError(f"Unknown experiment data source '{source}'")


def _solve_on(model: OrbitModel, data: BoundaryData, n_omega: int, n_t: int, T: float) -> DiscreteSolution:
    grid = LogPolarGrid.build(model, T, n_t, n_omega)
    return solve(assemble(model, grid, data))


def _export_solution(sol: DiscreteSolution, out_dir: str, stem: str) -> Dict[str, str]:
    rows = []
    grid = sol.grid
    for j in range(len(grid.n_omega)):
        u = sol.field(j)
        omegas = grid.omegas(j)
        for i, t in enumerate(grid.t):
            for l, w in enumerate(omegas):
                rows.append((j, t, w, u[i, l]))
    csv_path = write_csv(os.path.join(out_dir, f"{stem}.csv"), ("angle", "t", "omega", "value"), rows)
    bin_path = write_binary(os.path.join(out_dir, f"{stem}.f64"), sol.values,
                            {"grid": grid.describe(), "method": sol.method, "residual": sol.residual})
    return {"csv": csv_path, "binary": bin_path}


def _window_check(value: float, expect: Dict[str, Any], key: str) -> Optional[bool]:
    window = expect.get(key)
    if window is None or value is None or not math.isfinite(value):
        return None
    return bool(window[0] <= value <= window[1])


def _model(spec: ProblemSpec, doc: Dict[str, Any]) -> OrbitModel:
    return spec.orbit(int(doc.get("orbit_id", spec.orbits[0].orbit_id)))


def run_exponent(doc: Dict[str, Any], out_dir: str, defaults: Dict[str, Any]) -> Dict[str, Any]:
    spec = experiment_spec(doc)
    model = _model(spec, doc)
    g = {**defaults, **doc.get("grid", {})}
    T, n_t, n_omega = float(g["T"]), int(g["n_t"]), int(g["n_omega"])
    sol = _solve_on(model, _data(doc, spec, model, T), n_omega, n_t, T)
    fit = fit_singularity_exponent(sol, float(doc.get("omega_star", 0.0)))
    result: Dict[str, Any] = {"grid": sol.grid.describe(), "method": sol.method, "residual": sol.residual,
                              "fit": fit.to_dict(), "w2_dyadic": sol.w2_dyadic}
    result["files"] = _export_solution(sol, out_dir, "solution")

    if doc.get("double_T", False):
        deep = _solve_on(model, _data(doc, spec, model, 2 * T), n_omega, 2 * n_t, 2 * T)
        deep_fit = fit_singularity_exponent(deep, float(doc.get("omega_star", 0.0)))
        change = abs(deep_fit.alpha - fit.alpha) / abs(fit.alpha)
        result["double_T"] = {"fit": deep_fit.to_dict(), "relative_alpha_change": change}

    expect = doc.get("expect", {})
    result["passed"] = _window_check(fit.alpha, expect, "alpha")
    if "double_T" in result and "max_alpha_change" in expect:
        result["passed"] = bool(result["passed"]) and result["double_T"]["relative_alpha_change"] < expect["max_alpha_change"]
    logger.info(f"[{doc['name']}] alpha={fit.alpha:.6f} (residual {fit.residual:.2e}) passed={result['passed']}")
    return result


def _refinements(doc: Dict[str, Any]) -> List[List[int]]:
    grids = doc.get("grids")
    if not grids or len(grids) < 2:
        raise SpecFormatError(f"Experiment '{doc['name']}' needs at least two 'grids'")
    return [[int(a), int(b)] for a, b in grids]


def run_manufactured(doc: Dict[str, Any], out_dir: str, defaults: Dict[str, Any]) -> Dict[str, Any]:
    T = float(doc.get("T", 6.0))
    exact = _field(doc)
    configurations = doc.get("configurations") or [{"label": doc["name"], "halfpi": doc.get("halfpi", {})}]
    results = {}
    rows = []
    for conf in configurations:
        sub = {**doc, **conf, "name": conf.get("label", doc["name"])}
        spec = experiment_spec(sub)
        model = _model(spec, sub)
        data = manufactured_data(model, exact, T)
        errors = []
        for n_omega, n_t in _refinements(doc):
            sol = _solve_on(model, data, n_omega, n_t, T)
            errors.append(exact_error(sol, lambda j, r, w: exact.value(r, w)))
            rows.append((sub["name"], n_omega, n_t, errors[-1]))
        orders = convergence_orders(errors)
        results[sub["name"]] = {"errors": errors, "orders": orders, "min_order": min(orders)}
        logger.info(f"[{sub['name']}] L2 errors {errors} orders {orders}")
    write_csv(os.path.join(out_dir, "convergence.csv"), ("configuration", "n_omega", "n_t", "l2_error"), rows)
    min_order = min(r["min_order"] for r in results.values())
    threshold = doc.get("expect", {}).get("min_order")
    return {"configurations": results, "min_order": min_order,
            "passed": None if threshold is None else bool(min_order >= threshold)}


def run_blowup(doc: Dict[str, Any], out_dir: str, defaults: Dict[str, Any]) -> Dict[str, Any]:
    spec = experiment_spec(doc)
    model = _model(spec, doc)
    T = float(doc.get("T", 12.0))
    data = _data(doc, spec, model, T)
    solutions = [_solve_on(model, data, n_omega, n_t, T) for n_omega, n_t in _refinements(doc)]
    trend = w2_blowup_diagnostic(solutions)
    result: Dict[str, Any] = {"w2": trend.to_dict(), "w2_dyadic": solutions[-1].w2_dyadic}
    write_csv(os.path.join(out_dir, "w2.csv"), ("n_omega", "n_t", "region_r_min", "w2_squared"),
              [(s.grid.n_omega[0], s.grid.n_t, rho, v) for s, rho, v in zip(solutions, trend.regions, trend.values)])

    if doc.get("check_constant", False):
        finest = solutions[-1]
        fits = [fit_singularity_exponent(finest, float(doc.get("omega_star", 0.0)), j) for j in range(model.n_angles)]
        psi0 = {(j, sigma): float(data.psi(j, sigma, np.array([0.0]))[0])
                for j in range(model.n_angles) for sigma in (1, 2)}
        mismatch = constant_relation_residual(model, [fit.constant for fit in fits], psi0)
        result["constant"] = {"fit": fits[0].to_dict(), "per_angle": [fit.to_dict() for fit in fits],
                              "relation_residual": mismatch}

    expect = doc.get("expect", {})
    passed = None
    if "trend" in expect:
        passed = trend.trend == expect["trend"]
    if "max_constant_mismatch" in expect and "constant" in result:
        passed = bool(passed is not False and result["constant"]["relation_residual"] < expect["max_constant_mismatch"])
    result["passed"] = passed
    result["files"] = _export_solution(solutions[-1], out_dir, "solution")
    return result


def run_witness_roundtrip(doc: Dict[str, Any], out_dir: str, defaults: Dict[str, Any]) -> Dict[str, Any]:
    spec = experiment_spec(doc)
    model = freeze(spec)[0]
    report = spectral_report(model)
    eigenvalue_or_raise(report)
    improper = [e for e in report.eigenvalues if e.proper is False]
    if not improper:
        raise WitnessRefused(f"[{doc['name']}] no improper band eigenvalue to build a witness from")
    eig = max(improper, key=lambda e: e.lam.imag)
    witness = witness_singular_function(model, eig, spec.cutoff_radius())
    T = float(doc.get("T", 12.0))
    data = witness_data(witness, T)
    errors = []
    for n_omega, n_t in _refinements(doc):
        sol = _solve_on(model, data, n_omega, n_t, T)
        errors.append(exact_error(sol, lambda j, r, w: np.real(witness.cut_off_value(r, w, j))))
    decreasing = all(b < a for a, b in zip(errors, errors[1:]))
    write_csv(os.path.join(out_dir, "roundtrip.csv"), ("n_omega", "n_t", "l2_error"),
              [(a, b, e) for (a, b), e in zip(_refinements(doc), errors)])
    return {"lambda0": {"re": eig.lam.real, "im": eig.lam.imag}, "errors": errors,
            "orders": convergence_orders(errors), "decreasing": decreasing, "passed": decreasing}


RUNNERS = {
    "exponent": run_exponent,
    "manufactured": run_manufactured,
    "blowup": run_blowup,
    "witness-roundtrip": run_witness_roundtrip,
}


def _run_job(args) -> Dict[str, Any]:
    doc, out_dir, defaults = args
    target = os.path.join(out_dir, doc["name"])
    os.makedirs(target, exist_ok=True)
    result = RUNNERS[doc["kind"]](doc, target, defaults)
    result.update({"name": doc["name"], "kind": doc["kind"], "manifest": doc})
    write_json(os.path.join(target, "result.json"), result)
    return result


def run_solve(refs: List[str], out_dir: str, threads: int = 1,
              defaults: Optional[Dict[str, Any]] = None) -> List[Dict[str, Any]]:
    """Run experiments by id or path; experiments run in the work pool"""
    defaults = defaults or {"n_omega": 256, "n_t": 512, "T": 12.0}
    docs = [load_manifest(ref) for ref in refs]
    results = pool_map(_run_job, [(doc, out_dir, defaults) for doc in docs], threads)
    for result in results:
        status = {True: "passed", False: "FAILED", None: "no expectation"}[result.get("passed")]
        print(f"  {result['name']} ({result['kind']}): {status}")
    return results


def main(argv: Optional[List[str]] = None):
    from main import cli_main
    sys.exit(cli_main(["solve"] + list(sys.argv[1:] if argv is None else argv)))


if __name__ == "__main__":
    main()
