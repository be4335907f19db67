"""
Report files for lab runs.

JSON uses sorted keys, two-space indent and Python's shortest round-trip
float repr; CSV floats use 17 significant digits; binary dumps are
little-endian float64, row-major, with a JSON sidecar. Every file is written
to a temporary name in the target directory and renamed into place.
"""
import csv
import io
import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np

logger = logging.getLogger("report_writer")


@dataclass
class RunManifest:
    command: str
    spec_path: Optional[str]
    overrides: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0
    tool_version: str = "unknown"
    tool_version_source: str = "fallback"


def _plain(obj: Any) -> Any:
    """JSON-ready copy: numpy scalars and arrays, complex numbers and tuples converted"""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def _atomic_write(path: str, data: bytes) -> str:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.debug(f"Wrote {path}")
    return path


def json_text(payload: Any) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"


def write_json(path: str, payload: Any) -> str:
    return _atomic_write(path, json_text(payload).encode("utf-8"))


def format_cell(value: Any) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "%.17g" % value
    if value is None:
        return ""
    return str(value)


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    return _atomic_write(path, buf.getvalue().encode("utf-8"))


def write_binary(path: str, values: np.ndarray, sidecar: Dict[str, Any]) -> str:
    """float64 little-endian row-major dump plus <path>.json describing it"""
    array = np.ascontiguousarray(values, dtype="<f8")
    _atomic_write(path, array.tobytes(order="C"))
    meta = dict(sidecar)
    meta.update({"dtype": "float64", "byte_order": "little", "order": "row-major", "shape": list(array.shape)})
    write_json(path + ".json", meta)
    return path


def write_manifest(output_dir: str, manifest: RunManifest) -> str:
    return write_json(os.path.join(output_dir, "manifest.json"), asdict(manifest))
