"""Rollout batch files: a long-format CSV plus a JSON sidecar."""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import numpy as np

from .dynamics import RolloutBatch
from .errors import DataError, SchemaError

SCHEMA_VERSION = 1
BATCH_HEADER = ["rollout", "t", "kind", "dim", "value"]


def sidecar_path(csv_path: str | Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def write_json(path: str | Path, payload: dict[str, Any]) -> None:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_batch(batch: RolloutBatch, csv_path: str | Path, extra: dict[str, Any] | None = None) -> None:
    """Write ``batch`` as ``rollout,t,kind,dim,value`` rows; floats use ``repr`` (round-trippable)."""
    csv_path = Path(csv_path)
    times = batch.times
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BATCH_HEADER)
        for k in range(batch.n):
            for i, t in enumerate(times):
                for j, v in enumerate(batch.states[k, i]):
                    w.writerow([k, t, "x", j, repr(float(v))])
                if i < batch.K:
                    for j, v in enumerate(batch.actions[k, i]):
                        w.writerow([k, t, "u", j, repr(float(v))])
                if batch.noise is not None:
                    for j, v in enumerate(batch.noise[k, i]):
                        w.writerow([k, t, "xi", j, repr(float(v))])
    meta = {
        "d": batch.d,
        "p": batch.p,
        "T": batch.T,
        "K": batch.K,
        "n": batch.n,
        "seed": batch.seed,
        "spec": batch.meta.get("spec"),
    }
    write_json(sidecar_path(csv_path), {**meta, **(extra or {})})


def read_batch(csv_path: str | Path) -> RolloutBatch:
    csv_path = Path(csv_path)
    side = sidecar_path(csv_path)
    if not side.exists():
        raise SchemaError(f"missing JSON sidecar {side}")
    meta = json.loads(side.read_text())
    n, d, p, T, K = (int(meta[key]) for key in ("n", "d", "p", "T", "K"))
    states = np.full((n, K + 1, d), np.nan)
    actions = np.full((n, K, p), np.nan)
    noise = np.full((n, K + 1, d), np.nan)
    seen_noise = False
    lo = T - K
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != BATCH_HEADER:
            raise SchemaError(f"expected header {','.join(BATCH_HEADER)}, got {header}")
        for line, row in enumerate(reader, start=2):
            try:
                k, t, kind, j, value = int(row[0]), int(row[1]), row[2], int(row[3]), float(row[4])
            except (ValueError, IndexError):
                raise DataError(f"malformed batch row {row}", line) from None
            i = t - lo
            if kind == "x":
                states[k, i, j] = value
            elif kind == "u":
                actions[k, i, j] = value
            elif kind == "xi":
                noise[k, i, j] = value
                seen_noise = True
            else:
                raise DataError(f"unknown kind {kind!r}", line)
    if np.isnan(states).any() or np.isnan(actions).any():
        raise DataError("batch file is missing state or action entries")
    return RolloutBatch(
        states, actions, T, K, meta.get("seed"), noise if seen_noise else None, {"spec": meta.get("spec")}
    )
