"""
Classify, consistency and witness commands.
"""
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from services.lib.classifier import Verdict, classify, witness_singular_function
from services.lib.consistency import (
    ConsistencyReport, check_boundary_data, dependency_betas, hat_operators, side_label,
)
from services.lib.errors import WitnessRefused
from services.lib.geometry import ProblemSpec, freeze
from services.lib.pencil import BAND, eigenvalue_or_raise, spectral_report
from utils.report_writer import write_csv, write_json
from utils.work_pool import make_mapper

logger = logging.getLogger("classify")


def _write_witness(witness, out_dir: str, prefix: str = "witness") -> Dict[str, str]:
    profiles_path = os.path.join(out_dir, f"{prefix}_profiles.csv")
    rows = []
    for j in range(witness.model.n_angles):
        omegas = np.linspace(-witness.model.angles[j], witness.model.angles[j], 201)
        profiles = witness.angular_profiles(j, omegas)
        for n, w in enumerate(omegas):
            for p in range(profiles.shape[0]):
                rows.append((j, p, w, profiles[p, n].real, profiles[p, n].imag))
    write_csv(profiles_path, ("angle", "chain_index", "omega", "re_phi", "im_phi"), rows)

    forcing_path = os.path.join(out_dir, f"{prefix}_forcing.csv")
    write_csv(forcing_path, ("r", "omega", "angle", "f0"),
              [(r, w, j, f) for r, w, j, f in witness.forcing_samples()])

    growth = witness.dyadic_w2()
    growth_path = os.path.join(out_dir, f"{prefix}_w2_levels.csv")
    write_csv(growth_path, ("m", "r_outer", "w2_squared"), [(m, 2.0 ** -m, g) for m, g in enumerate(growth)])
    return {"profiles_csv_path": profiles_path, "forcing_csv_path": forcing_path, "w2_levels_csv_path": growth_path}


def _print_verdict(verdict: Verdict) -> None:
    print(f"\nVerdict for '{verdict.spec_name or 'spec'}': {verdict.kind}")
    for report in verdict.per_orbit:
        eig = ", ".join(
            f"({e.lam.real:.6f}, {e.lam.imag:.6f}) {'proper' if e.proper else 'improper'}" for e in report.eigenvalues
        ) or "none"
        print(f"  orbit {report.orbit_id}: band eigenvalues {eig}")
    for o in verdict.obligations:
        flag = " (necessary)" if o.necessary else ""
        print(f"  [{o.status}] orbit {o.orbit_id}: {o.name}{flag}")
    if verdict.witness is not None:
        w = verdict.witness
        print(f"  witness: orbit {w.orbit_id}, lambda0 = ({w.lambda0.real:.6f}, {w.lambda0.imag:.6f}), "
              f"log power {w.log_power}")


def run_classify(spec: ProblemSpec, out_dir: str, band: Tuple[float, float] = BAND,
                 re_window: Tuple[float, float] = (-8.0, 8.0), threads: int = 1) -> Verdict:
    verdict = classify(spec, band, re_window, mapper=make_mapper(threads))
    payload = verdict.to_dict()
    if verdict.witness is not None:
        payload["witness"].update(_write_witness(verdict.witness, out_dir))
        payload["witness"]["lambda0"] = {"re": verdict.witness.lambda0.real, "im": verdict.witness.lambda0.imag}
    write_json(os.path.join(out_dir, "verdict.json"), payload)
    _print_verdict(verdict)
    return verdict


def run_consistency(spec: ProblemSpec, out_dir: str) -> Dict[int, Dict[str, object]]:
    """
    Hat matrix, beta table and per-dependent-row diagnostics of every orbit.

    Raises:
        NoDependence: an orbit's hat-operator matrix has full rank
    """
    models = freeze(spec)
    results: Dict[int, Dict[str, object]] = {}
    tables = {}
    for model in models:
        hat = hat_operators(model)
        tables[model.orbit_id] = dependency_betas(hat)
        results[model.orbit_id] = {"hat_matrix": hat.rows, "rank": hat.rank(),
                                   "betas": tables[model.orbit_id].to_dict()}

    reports: Dict[int, ConsistencyReport] = check_boundary_data(spec, models, tables)
    tr = spec.truncation
    radii = tr.epsilon * np.power(2.0, -np.arange(tr.levels, dtype=float))
    for oid, report in reports.items():
        results[oid]["report"] = report.to_dict()
        for side, diag in report.rows.items():
            label = side_label(side).strip("()").replace(",", "_")
            write_csv(os.path.join(out_dir, f"consistency_orbit{oid}_row{label}.csv"), ("m", "r_m", "I_m"),
                      [(m, radii[m], value) for m, value in enumerate(diag.integrals)])
        print(f"  orbit {oid}: boundary data {report.verdict}")
    write_json(os.path.join(out_dir, "consistency.json"), {"spec": spec.name, "orbits": results})
    return results


def run_witness(spec: ProblemSpec, out_dir: str, band: Tuple[float, float] = BAND,
                re_window: Tuple[float, float] = (-8.0, 8.0)):
    """
    Witness for the most singular improper band eigenvalue of the problem.

    Raises:
        WitnessRefused: no orbit has an improper band eigenvalue
    """
    candidates = []
    for model in freeze(spec):
        report = spectral_report(model, band, re_window)
        eigenvalue_or_raise(report)
        candidates.extend((e, model) for e in report.eigenvalues if e.proper is False)
    if not candidates:
        raise WitnessRefused(f"[{spec.name or 'spec'}] no improper band eigenvalue; no singular witness exists")
    eig, model = max(candidates, key=lambda c: (c[0].lam.imag, -c[1].orbit_id))
    witness = witness_singular_function(model, eig, spec.cutoff_radius())
    payload = witness.to_dict()
    payload.update(_write_witness(witness, out_dir))
    payload["w2_levels"] = witness.dyadic_w2()
    write_json(os.path.join(out_dir, "witness.json"), payload)
    print(f"\nWitness at lambda0 = ({witness.lambda0.real:.6f}, {witness.lambda0.imag:.6f}), "
          f"interior residual {payload['interior_residual']:.3e}, boundary residual {payload['boundary_residual']:.3e}")
    return witness


def main(argv: Optional[List[str]] = None):
    from main import cli_main
    sys.exit(cli_main(["classify"] + list(sys.argv[1:] if argv is None else argv)))


if __name__ == "__main__":
    main()
