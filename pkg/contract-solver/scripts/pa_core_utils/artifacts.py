"""
Artifact writers.

CSV files are RFC 4180 (csv module, CRLF line endings) with a header row and
floats printed with 17 significant digits. JSON files are sorted and
indented so identical inputs produce identical bytes.
"""

import csv
import json
import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from pa_common import to_builtin

logger = logging.getLogger(__name__)


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.17g" % float(value)
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    """Write rows under a header; returns the number of data rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    logger.debug(f"wrote {count} rows to {path}")
    return count


def write_json(path: Path, data: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(to_builtin(data), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_path_csv(path: Path, sample) -> int:
    """One simulated path: t, x, y, discount, flags."""
    flags = [""] * len(sample.times)
    flags[0] = "start"
    flags[sample.stopped_at] = "stop" if sample.stopped_at else "start|stop"
    rows = zip(sample.times, sample.x, sample.y, sample.discount, flags)
    return write_csv(path, ("t", "x", "y", "discount", "flags"), rows)


def write_payoffs_csv(path: Path, batch) -> int:
    rows = zip(range(batch.n_paths), batch.stop_times, batch.terminal_y,
               batch.agent_payoffs, batch.principal_payoffs)
    return write_csv(path, ("path", "stop_time", "terminal_y", "agent_payoff", "principal_payoff"), rows)
