"""
Result files
CSV error tables, gnuplot columns, fitted orders and per-step logs
"""

from pathlib import Path
from typing import Dict, Iterable, List, Tuple, Union
import json
import logging
import re

import pandas as pd

from experiments.fitting import ConvergenceFit
from experiments.montecarlo import ErrorRecord
from integrator.solver import StepRecord

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["strategy", "param", "h", "rel_error", "std_err", "reps", "seconds"]

STEP_COLUMNS = [
    "strategy", "param", "h", "realization", "step", "t", "batch", "active",
    "iters", "residual", "slack", "tol_diag",
]

PathLike = Union[str, Path]


def records_frame(records: Iterable[ErrorRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.csv_row() for r in records], columns=CSV_COLUMNS)


def write_records(records: List[ErrorRecord], path: PathLike) -> Path:
    """Write the error table with a header row and '.' decimals"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records_frame(records).to_csv(path, index=False)
    logger.info(f"Wrote {len(records)} records to {path}")
    return path


def read_records(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"strategy": str, "param": str})


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def write_gnuplot(records: List[ErrorRecord], path: PathLike) -> List[Path]:
    """One two-column (h, rel_error) file per strategy next to the CSV"""
    path = Path(path)
    groups: Dict[Tuple[str, str], List[ErrorRecord]] = {}
    for record in records:
        groups.setdefault((record.strategy, record.param), []).append(record)
    written = []
    for (strategy, param), group in groups.items():
        target = path.with_name(f"{path.stem}.{_slug(strategy)}_{_slug(param)}.dat")
        lines = [f"# h rel_error ({strategy} {param})"]
        lines += [f"{r.h!r} {r.rel_error!r}" for r in sorted(group, key=lambda r: r.h)]
        target.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(target)
    return written


def fit_path(path: PathLike) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".fit.json")


def write_fits(fits: Dict[str, ConvergenceFit], path: PathLike) -> Path:
    """Fitted orders per strategy label, as a sidecar <csv>.fit.json"""
    target = fit_path(path)
    target.write_text(
        json.dumps({label: fit.model_dump() for label, fit in fits.items()}, indent=2),
        encoding="utf-8",
    )
    return target


def write_step_log(
    entries: List[Tuple[int, StepRecord]],
    path: PathLike,
    strategy: str,
    param: str,
    h: float,
) -> Path:
    """Append per-step diagnostics; the header is written once"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [
        {
            "strategy": strategy,
            "param": param,
            "h": h,
            "realization": realization,
            "step": step.step,
            "t": step.t,
            "batch": " ".join(str(l) for l in step.batch),
            "active": " ".join(str(l) for l in step.active) if step.active is not None else "",
            "iters": step.newton_iters,
            "residual": step.final_residual,
            "slack": step.energy_slack,
            "tol_diag": step.tol_diag,
        }
        for realization, step in entries
    ]
    frame = pd.DataFrame(rows, columns=STEP_COLUMNS)
    frame.to_csv(path, index=False, mode="a", header=not path.exists())
    return path
