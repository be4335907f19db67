"""
Spectrum and sweep commands.

spectrum: band eigenvalues of every orbit of a spec (JSON + CSV).
sweep:    case labels of the flat-boundary family over s = b1(0) + b2(0) (CSV).
"""
import logging
import math
import os
import sys
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from services.lib.geometry import ProblemSpec, freeze
from services.lib.pencil import BAND, SpectralReport, laplace_halfpi_oracle, spectral_report
from services.lib.spec_io import halfpi_model
from utils.report_writer import write_csv, write_json
from utils.work_pool import pool_map

logger = logging.getLogger("spectrum")

SWEEP_HEADER = ("s", "n_eigenvalues", "im_lambda_min", "case_label")


def _orbit_job(args) -> SpectralReport:
    model, band, re_window = args
    return spectral_report(model, band, re_window, check_window=True)


def run_spectrum(spec: ProblemSpec, out_dir: str, band: Tuple[float, float] = BAND,
                 re_window: Tuple[float, float] = (-8.0, 8.0), threads: int = 1) -> List[SpectralReport]:
    models = freeze(spec)
    reports = pool_map(_orbit_job, [(m, band, re_window) for m in models], threads)
    for report in reports:
        logger.info(f"[orbit {report.orbit_id}] {len(report.eigenvalues)} eigenvalue(s), "
                    f"count {report.argument_principle_count}, closed={report.closed}")

    write_json(os.path.join(out_dir, "spectrum.json"),
               {"spec": spec.name, "band": list(band), "orbits": [r.to_dict() for r in reports]})
    rows = []
    for report in reports:
        for e in report.eigenvalues:
            rows.append((report.orbit_id, e.lam.real, e.lam.imag, e.algebraic_multiplicity,
                         {True: "proper", False: "improper"}.get(e.proper, "ambiguous")))
    write_csv(os.path.join(out_dir, "spectrum.csv"), ("orbit_id", "re", "im", "mult", "kind"), rows)

    print(f"\nSpectrum of '{spec.name or 'spec'}' in the band {band[0]} <= Im lambda < {band[1]}")
    for report in reports:
        if not report.eigenvalues:
            print(f"  orbit {report.orbit_id}: no eigenvalues")
        for e in report.eigenvalues:
            kind = {True: "proper", False: "improper"}.get(e.proper, "ambiguous")
            print(f"  orbit {report.orbit_id}: ({e.lam.real:.6f}, {e.lam.imag:.6f})  mult {e.algebraic_multiplicity}  {kind}")
    return reports


def case_label(report: SpectralReport) -> str:
    """Case 1 (empty band), Case 2 ({-i proper}) or Case 3 (improper eigenvalue)"""
    if not report.eigenvalues:
        return "Case 1"
    if any(e.proper is False for e in report.eigenvalues):
        return "Case 3"
    if all(e.proper for e in report.eigenvalues):
        return "Case 2"
    return "ambiguous"


def _sweep_row(args) -> Dict[str, object]:
    s, band, re_window = args
    report = spectral_report(halfpi_model(s / 2, s / 2), band, re_window)
    im_min = min((e.lam.imag for e in report.eigenvalues), default=float("nan"))
    label = case_label(report)
    oracle = laplace_halfpi_oracle(s).label
    if label != oracle:
        logger.warning(f"[s={s}] computed {label} differs from the closed form {oracle}")
    return {"s": s, "n_eigenvalues": len(report.eigenvalues), "im_lambda_min": im_min, "case_label": label}


def sweep_values(s_min: float, s_max: float, step: float) -> np.ndarray:
    count = int(math.floor((s_max - s_min) / step + 1e-9)) + 1
    return np.round(s_min + step * np.arange(count), 12)


def run_sweep(s_values: Sequence[float], out_dir: str, band: Tuple[float, float] = BAND,
              re_window: Tuple[float, float] = (-8.0, 8.0), threads: int = 1) -> List[Dict[str, object]]:
    rows = pool_map(_sweep_row, [(float(s), band, re_window) for s in s_values], threads)
    write_csv(os.path.join(out_dir, "sweep.csv"), SWEEP_HEADER, [[row[k] for k in SWEEP_HEADER] for row in rows])
    logger.info(f"Sweep over {len(rows)} value(s) of s written to {out_dir}")
    return rows


def main(argv: Optional[List[str]] = None):
    from main import cli_main
    sys.exit(cli_main(["spectrum"] + list(sys.argv[1:] if argv is None else argv)))


if __name__ == "__main__":
    main()
