import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

import numpy as np
import pandas as pd

from Multiplexing.analytic import ProtocolRate
from Multiplexing.errors import ModelError
from Multiplexing.simkernel import RateEstimate, TraceRecord
from Multiplexing.transformations import to_long_format

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class OutputError(ModelError, OSError):
    """A result file could not be written."""


## Column descriptions for the schema sidecar (matched on column suffix)
_COLUMN_DOCS = {
    "d_km": "node separation (km)",
    "n_qubits": "qubits per node",
    "t_c_us": "communication time d/c (us)",
    "eta": "single-photon transmission efficiency",
    "n_max_mbk": "largest useful qubit count for mBK",
    "n_max_mepl": "largest useful qubit count for mEPL",
    "_analytic": "closed-form rate (Hz)",
    "_n_eff": "qubits per node actually used",
    "_mc": "Monte Carlo rate, total successes / total simulated time (Hz)",
    "_stderr": "standard error of the Monte Carlo rate over replications (Hz)",
    "_seed": "base seed of the curve's replications",
    "_replications": "replications behind the Monte Carlo rate",
    "_n_max": "largest useful qubit count at this distance",
    "_saturated": "qubit count at or beyond N_max",
    "_rel_error": "(mc - analytic) / analytic",
    "_z": "(mc - analytic) / stderr",
    "_within_5pct": "|rel_error| <= 0.05",
    "_within_3se": "|z| <= 3",
    "_error": "error raised while evaluating this cell (empty when none)",
}


def describe_column(column: str) -> str:
    if column in _COLUMN_DOCS:
        return _COLUMN_DOCS[column]
    for suffix, text in _COLUMN_DOCS.items():
        if suffix.startswith("_") and column.endswith(suffix):
            return text
    if column.startswith("n_p"):
        return "expected successful local BSMs per node per t_c"
    return ""


def config_hash(config_text: str) -> str:
    return hashlib.sha256(config_text.encode("utf-8")).hexdigest()


def _json_default(value: Any):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"not JSON serialisable: {type(value).__name__}")


def _prepare_parent(path: Path) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"cannot create directory {path.parent}: {e}") from e


## -------------------------------------------------------------------------------------------------------------- ##
## Summaries

def summarize_agreement(df: pd.DataFrame) -> pd.DataFrame:
    """
    Per-curve Monte Carlo agreement over a prepared sweep table: points
    compared, worst relative error, worst |z| and how many points sit inside
    each tolerance.
    """
    long = to_long_format(df)
    long["rel_error"] = (long["mc"] - long["analytic"]) / long["analytic"]
    long["abs_rel_error"] = long["rel_error"].abs()
    long["abs_z"] = ((long["mc"] - long["analytic"]) / long["stderr"]).abs().replace([np.inf], np.nan)
    long["within_5pct"] = long["abs_rel_error"] <= 0.05
    long["within_3se"] = long["abs_z"] <= 3

    summary = long.groupby("label").agg(
        protocol=("protocol", "first"),
        points=("analytic", "count"),
        mc_points=("mc", "count"),
        worst_rel_error=("abs_rel_error", "max"),
        worst_abs_z=("abs_z", "max"),
        within_5pct=("within_5pct", "sum"),
        within_3se=("within_3se", "sum"),
    ).reset_index()

    ## Choose columns to display, in order
    display_columns = ["label", "protocol", "points", "mc_points", "worst_rel_error", "worst_abs_z", "within_5pct", "within_3se"]
    return summary[display_columns]


def rate_table(rates: Iterable[ProtocolRate], labels: Iterable[str]) -> pd.DataFrame:
    """One row per protocol configuration for a single parameter point."""
    records = [
        {"label": label, "protocol": r.protocol.value, "rate_hz": r.rate, "attempt_rate_hz": r.attempt_rate, "n_eff": r.n_effective}
        for label, r in zip(labels, rates)
    ]
    return pd.DataFrame(records, columns=["label", "protocol", "rate_hz", "attempt_rate_hz", "n_eff"])


def per_replication_table(estimate: RateEstimate) -> pd.DataFrame:
    """One row per replication with its rate, event count, trace digest and raw tallies."""
    records = []
    for index, run in enumerate(estimate.runs):
        record = {
            "replication": index,
            "seed": run.seed,
            "stream_id": run.stream_id,
            "successes": run.successes,
            "sim_time_s": run.sim_time,
            "rate_hz": run.rate,
            "events": run.events,
            "digest": run.digest,
        }
        record.update(run.tallies)
        records.append(record)
    return pd.DataFrame(records)


def trace_table(records: Iterable[TraceRecord], replication: Optional[int] = None, label: Optional[str] = None) -> pd.DataFrame:
    """`time,node,event_kind,detail` records; label and replication, when given, follow as extra columns."""
    df = pd.DataFrame([r.as_row() for r in records], columns=["time", "node", "event_kind", "detail"])
    if label is not None:
        df["label"] = label
    if replication is not None:
        df["replication"] = replication
    return df


## -------------------------------------------------------------------------------------------------------------- ##
## Writers

def write_csv(df: pd.DataFrame, path: PathLike, header_lines: Iterable[str] = (), schema: bool = True) -> Path:
    """
    CSV with optional '# ...' header lines (seed, config hash) and a
    `<name>.schema.json` sidecar documenting each column.
    """
    path = Path(path)
    _prepare_parent(path)

    try:
        with path.open("w", encoding="utf-8", newline="") as handle:
            for line in header_lines:
                handle.write(f"# {line}\n")
            df.to_csv(handle, index=False, float_format="%.10g")

        if schema:
            sidecar = path.with_suffix(".schema.json")
            columns = [{"name": col, "dtype": str(df[col].dtype), "description": describe_column(col)} for col in df.columns]
            sidecar.write_text(json.dumps({"file": path.name, "columns": columns}, indent=2), encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e

    logger.info("wrote %d rows to %s", len(df), path)
    return path


def write_json(df: pd.DataFrame, path: PathLike, provenance: Mapping[str, Any]) -> Path:
    """Records plus provenance (seeds, config hash, table attributes)."""
    path = Path(path)
    _prepare_parent(path)

    payload = {
        "provenance": dict(provenance),
        "attrs": dict(df.attrs),
        "rows": json.loads(df.to_json(orient="records", double_precision=15)),
    }

    try:
        path.write_text(json.dumps(payload, indent=2, default=_json_default), encoding="utf-8")
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e

    logger.info("wrote %d rows to %s", len(df), path)
    return path


def write_workbook(tables: Mapping[str, pd.DataFrame], path: PathLike) -> Path:
    """Every table on its own sheet (sheet names trimmed to Excel's 31 characters)."""
    path = Path(path)
    _prepare_parent(path)

    try:
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            for name, df in tables.items():
                df.to_excel(writer, sheet_name=name[:31], index=False)
    except OSError as e:
        raise OutputError(f"cannot write {path}: {e}") from e

    logger.info("wrote %d sheets to %s", len(tables), path)
    return path


def write_table(df: pd.DataFrame, path: PathLike, fmt: str, header_lines: Iterable[str] = (), provenance: Optional[Dict[str, Any]] = None) -> Path:
    fmt = fmt.lower()
    if fmt == "csv":
        return write_csv(df, path, header_lines)
    if fmt == "json":
        return write_json(df, path, provenance or {})
    if fmt == "xlsx":
        return write_workbook({"results": df}, path)
    raise ValueError(f"unknown output format {fmt!r}")
