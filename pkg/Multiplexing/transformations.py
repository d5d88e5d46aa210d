import logging
from typing import Iterable, List, Optional

import numpy as np
import pandas as pd
from scipy import stats

from Multiplexing.analytic import Protocol
from Multiplexing.netparams import NetworkParams

logger = logging.getLogger(__name__)

## Agreement tolerances between Monte Carlo and closed form
REL_TOLERANCE = 0.05
Z_TOLERANCE = 3.0

QUANTITIES = ("analytic", "mc", "stderr")


def _labels(df: pd.DataFrame, labels: Optional[Iterable[str]] = None) -> List[str]:
    if labels is not None:
        return list(labels)
    if "labels" in df.attrs:
        return list(df.attrs["labels"])
    return [col[: -len("_analytic")] for col in df.columns if col.endswith("_analytic")]


def protocol_of(label: str) -> Protocol:
    """'mepl_n2' -> Protocol.MEPL, 'mps_p0.1' -> Protocol.MPS."""
    return Protocol.parse(label.split("_", 1)[0])


def add_agreement_metrics(df: pd.DataFrame, labels: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """
    Per curve: relative error and z-score of the Monte Carlo rate against the
    closed form, plus the two tolerance flags. Rows without a Monte Carlo
    value keep NaN metrics and False flags.
    """
    df = df.copy()

    for label in _labels(df, labels):
        analytic = df[f"{label}_analytic"]
        mc = df.get(f"{label}_mc", pd.Series(np.nan, index=df.index))
        stderr = df.get(f"{label}_stderr", pd.Series(np.nan, index=df.index))

        diff = mc - analytic
        df[f"{label}_rel_error"] = diff / analytic
        # stderr of 0 (deterministic runs) leaves z undefined
        df[f"{label}_z"] = (diff / stderr).replace([np.inf, -np.inf], np.nan)
        df[f"{label}_within_5pct"] = df[f"{label}_rel_error"].abs() <= REL_TOLERANCE
        df[f"{label}_within_3se"] = df[f"{label}_z"].abs() <= Z_TOLERANCE

    return df


def add_rate_ratios(df: pd.DataFrame, labels: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """Analytic rate of every curve relative to the first one (handy for crossover reading)."""
    df = df.copy()
    labels = _labels(df, labels)
    if not labels:
        return df

    reference = df[f"{labels[0]}_analytic"]
    for label in labels[1:]:
        df[f"{label}_vs_{labels[0]}"] = df[f"{label}_analytic"] / reference

    return df


def order_columns(df: pd.DataFrame) -> pd.DataFrame:
    """Axis and derived columns first, then each curve's columns grouped together."""
    labels = _labels(df)
    leading = [col for col in ("d_km", "n_qubits", "t_c_us", "eta", "n_max_mbk", "n_max_mepl") if col in df.columns]
    grouped = [col for label in labels for col in df.columns if col.startswith(f"{label}_")]

    ## Reorder columns
    return df.reindex(columns=leading + grouped + [col for col in df.columns if col not in leading + grouped])


## MAIN FUNCTION TO PREPARE A SWEEP TABLE ##
def prepare_rate_table(df: pd.DataFrame) -> pd.DataFrame:
    """
    Derived-column pipeline applied to every sweep table before it is written.
    """
    return (
        df
        .pipe(add_agreement_metrics)
        .pipe(add_rate_ratios)
        .pipe(order_columns)
    )


def to_long_format(df: pd.DataFrame, labels: Optional[Iterable[str]] = None) -> pd.DataFrame:
    """
    One row per (axis value, curve) with analytic / mc / stderr columns.
    """
    labels = _labels(df, labels)
    axis = "d_km" if "d_km" in df.columns and "n_qubits" not in df.columns else "n_qubits"

    value_columns = [f"{label}_{q}" for label in labels for q in QUANTITIES if f"{label}_{q}" in df.columns]
    long = df.melt(id_vars=[axis], value_vars=value_columns, var_name="column", value_name="value")

    split = long["column"].str.rsplit("_", n=1, expand=True)
    long["label"] = split[0]
    long["quantity"] = split[1]

    wide = (
        long
        .pivot_table(index=[axis, "label"], columns="quantity", values="value", aggfunc="first", dropna=False)
        .reset_index()
    )
    wide.columns.name = None

    for quantity in QUANTITIES:
        if quantity not in wide.columns:
            wide[quantity] = np.nan

    wide["protocol"] = wide["label"].map(lambda label: protocol_of(label).value)
    return wide[[axis, "label", "protocol", *QUANTITIES]].sort_values(["label", axis]).reset_index(drop=True)


def expected_log_slope(protocol: Protocol, params: NetworkParams) -> float:
    """Slope of log10(rate) per km after removing the 1/d factor: -alpha/10 for eta^2 protocols, -alpha/20 for mEPL."""
    if protocol is Protocol.MEPL:
        return -params.alpha_db_per_km / 20
    return -params.alpha_db_per_km / 10


def fit_scaling_laws(df: pd.DataFrame, params: NetworkParams, column: str = "analytic") -> pd.DataFrame:
    """
    Straight-line fit of log10 rate against distance for each curve of a
    distance sweep. mBK and mEPL rates are first multiplied by d / n_eff so the
    1/d communication-time factor and the qubit count drop out.
    """
    labels = _labels(df)
    records = []

    for label in labels:
        protocol = protocol_of(label)
        rate = df[f"{label}_{column}"]
        mask = rate.notna() & (rate > 0)
        if mask.sum() < 3:
            logger.info("skipping fit for %s_%s: fewer than three points", label, column)
            continue

        d_km = df.loc[mask, "d_km"].to_numpy(dtype=float)
        y = rate[mask].to_numpy(dtype=float)
        if protocol is not Protocol.MPS:
            y = y * d_km / df.loc[mask, f"{label}_n_eff"].to_numpy(dtype=float)

        fit = stats.linregress(d_km, np.log10(y))
        records.append({
            "label": label,
            "protocol": protocol.value,
            "column": column,
            "slope_per_km": fit.slope,
            "expected_slope_per_km": expected_log_slope(protocol, params),
            "intercept": fit.intercept,
            "r_squared": fit.rvalue ** 2,
            "points": int(mask.sum()),
        })

    return pd.DataFrame(
        records,
        columns=["label", "protocol", "column", "slope_per_km", "expected_slope_per_km", "intercept", "r_squared", "points"],
    )
