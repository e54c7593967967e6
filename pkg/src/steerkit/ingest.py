"""Load a price/demand style CSV into a :class:`TimeSeries`."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError
from .evaluation import TimeSeries

log = logging.getLogger(__name__)

COMBINE_MODES = ("concatenate", "mean")


def _numeric(df: pd.DataFrame, col: str) -> np.ndarray:
    values = pd.to_numeric(df[col], errors="coerce")
    bad = values.isna()
    if bad.any():
        pos = int(np.argmax(bad.to_numpy()))
        line = int(df["_line"].iloc[pos])
        raise DataError(f"column {col!r}: cannot parse {df[col].iloc[pos]!r} as a number", line)
    return values.to_numpy(dtype=float)


def _sort_key(series: pd.Series) -> pd.Series:
    numeric = pd.to_numeric(series, errors="coerce")
    if not numeric.isna().any():
        return numeric
    return pd.to_datetime(series, errors="raise")


def _ordered(df: pd.DataFrame, time: str | None) -> pd.DataFrame:
    if time is None:
        return df
    key = _sort_key(df[time])
    if key.is_monotonic_increasing:
        return df
    if key.duplicated().any():
        raise DataError(f"time column {time!r} is unsorted and has duplicate values; order is ambiguous")
    return df.iloc[np.argsort(key.to_numpy(), kind="stable")]


def ingest_csv(path: str | Path, action: Sequence[str] | str, state: Sequence[str] | str,
               time: str | None = None, log_transform: bool = False, group: str | None = None,
               groups: Sequence[str] | None = None, combine: str = "concatenate") -> TimeSeries:
    """Read action and state columns, ordered by ``time``.

    With ``group`` set, rows are split by that column (restricted to
    ``groups`` if given) and either concatenated group after group or averaged
    per time stamp before any log transform.
    """
    action = [action] if isinstance(action, str) else list(action)
    state = [state] if isinstance(state, str) else list(state)
    if combine not in COMBINE_MODES:
        raise ValueError(f"combine must be one of {COMBINE_MODES}")
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    df["_line"] = np.arange(len(df)) + 2
    needed = action + state + [c for c in (time, group) if c is not None]
    for col in needed:
        if col not in df.columns:
            raise SchemaError(f"column {col!r} not found in {path} (have {list(df.columns[:-1])})")
    for col in action + state:
        empty = df[col].str.strip() == ""
        if empty.any():
            raise DataError(f"column {col!r} has a missing value", int(df["_line"][empty].iloc[0]))

    if group is not None:
        names = list(groups) if groups else list(dict.fromkeys(df[group]))
        parts = [_ordered(df[df[group] == g], time) for g in names]
        if any(len(p) == 0 for p in parts):
            missing = [g for g, p in zip(names, parts) if len(p) == 0]
            raise DataError(f"no rows for groups {missing}")
        if combine == "concatenate":
            df = pd.concat(parts)
        else:
            if time is None:
                raise ValueError("combine='mean' needs a time column")
            stacked = pd.concat(parts)
            for col in action + state:
                stacked[col] = _numeric(stacked, col)
            stacked["_t"] = _sort_key(stacked[time])
            df = stacked.groupby("_t", sort=True)[action + state + ["_line"]].agg(
                {**{c: "mean" for c in action + state}, "_line": "min"}
            )
            df = df.reset_index(drop=True).astype({"_line": int})
    else:
        df = _ordered(df, time)

    u = np.column_stack([_numeric(df, c) for c in action])
    x = np.column_stack([_numeric(df, c) for c in state])
    if log_transform:
        if (u <= 0).any() or (x <= 0).any():
            raise DataError("log transform needs strictly positive values")
        u, x = np.log(u), np.log(x)
    audit = {
        "rows": len(df),
        "action_range": [[float(c.min()), float(c.max())] for c in u.T],
        "state_range": [[float(c.min()), float(c.max())] for c in x.T],
        "log_transform": log_transform,
    }
    log.info("ingested %s: %d rows, action range %s, state range %s",
             path, audit["rows"], audit["action_range"], audit["state_range"])
    labels = {"action": action, "state": state, "time": time, "path": str(path),
              "group": group, "groups": list(groups) if groups else None, "combine": combine}
    return TimeSeries(u, x, labels=labels, audit=audit)
