from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional


@dataclass(frozen=True)
class RunPaths:
    run_id: str
    run_dir: Path
    paths_dir: Path

    @property
    def value_csv(self) -> Path:
        return self.run_dir / "value_function.csv"

    @property
    def summary_json(self) -> Path:
        return self.run_dir / "summary.json"

    @property
    def report_json(self) -> Path:
        return self.run_dir / "report.json"

    @property
    def payoffs_csv(self) -> Path:
        return self.run_dir / "payoffs.csv"

    def path_csv(self, index: int) -> Path:
        return self.paths_dir / f"path_{index:03d}.csv"


def project_root() -> Path:
    # From contract-solver/scripts/, go up to project root
    return Path(__file__).resolve().parent.parent.parent


def runs_dir() -> Path:
    return project_root() / "runs"


def run_paths(run_id: str, base: Optional[Path] = None) -> RunPaths:
    """Artifact layout for one run; `base` replaces runs/<run_id> when given."""
    rd = Path(base) if base is not None else runs_dir() / run_id
    return RunPaths(run_id=run_id, run_dir=rd, paths_dir=rd / "paths")


def run_id_from_config(config_path: Optional[Path]) -> str:
    """Derive run_id from the config filename stem."""
    return Path(config_path).stem if config_path else "default"
