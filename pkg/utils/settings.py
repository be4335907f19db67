"""
Effective lab settings from the LAB_* environment variables.

Values are assumed to have passed ConfigValidator; CLI flags override them
in main.py.
"""
import os
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class LabSettings:
    output_dir: str = "out"
    threads: int = 1
    seed: int = 0
    re_window: float = 8.0
    grid_n_omega: int = 256
    grid_n_t: int = 512
    truncation_t: float = 12.0
    log_level: str = "INFO"

    def with_overrides(self, **overrides) -> "LabSettings":
        """Copy with every non-None override applied"""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_settings() -> LabSettings:
    get = os.environ.get
    return LabSettings(
        output_dir=get("LAB_OUTPUT_DIR", "out"),
        threads=int(get("LAB_THREADS", "1")),
        seed=int(get("LAB_SEED", "0")),
        re_window=float(get("LAB_RE_WINDOW", "8.0")),
        grid_n_omega=int(get("LAB_GRID_N_OMEGA", "256")),
        grid_n_t=int(get("LAB_GRID_N_T", "512")),
        truncation_t=float(get("LAB_TRUNCATION_T", "12.0")),
        log_level=get("LAB_LOG_LEVEL", "INFO").upper(),
    )
