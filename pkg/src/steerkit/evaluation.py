"""Sliding-window datasets, bootstrap bias/variance, and overlap sweeps."""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dynamics import RolloutBatch
from .errors import InsufficientSamplesError, SteerkitError
from .estimators import (
    Discretization,
    LinearResidualizer,
    adjustment_estimate,
    dml_estimate,
    ped_from_adjustment,
)

DEFAULT_REPLICATES = 40


@dataclass(frozen=True, eq=False)
class TimeSeries:
    u: np.ndarray  # (N, p)
    x: np.ndarray  # (N, d)
    labels: dict[str, Any] = field(default_factory=dict)
    audit: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        x = np.asarray(self.x, dtype=float)
        u = u[:, None] if u.ndim == 1 else u
        x = x[:, None] if x.ndim == 1 else x
        if len(u) != len(x):
            raise ValueError(f"action and state series differ in length ({len(u)} vs {len(x)})")
        if len(u) < 2:
            raise ValueError("a time series needs at least 2 observations")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(x))):
            raise ValueError("time series has non-finite entries")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return len(self.u)


def sliding_window(series: TimeSeries, K: int) -> RolloutBatch:
    """Windows ``(x_{t-K..t}, u_{t-K..t-1})`` for every end index ``t >= K``.

    Overlapping windows are returned as if they were independent rollouts.
    """
    N = len(series)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if N < K + 1:
        raise InsufficientSamplesError(f"series of length {N} has no window of length K={K}")
    # sliding_window_view puts the window axis last
    states = sliding_window_view(series.x, K + 1, axis=0).transpose(0, 2, 1)
    actions = sliding_window_view(series.u[:-1], K, axis=0).transpose(0, 2, 1)
    return RolloutBatch(
        states=np.ascontiguousarray(states),
        actions=np.ascontiguousarray(actions),
        T=K,
        K=K,
        meta={"window_end": list(range(K, N)), "source": dict(series.labels)},
    )


# --------------------------------------------------------------------------- estimators for bootstrap

Estimator = Callable[[RolloutBatch], float]


class AdjustmentPED:
    def __init__(self, disc: Discretization, mode: str = "zero-fill"):
        self.disc, self.mode = disc, mode
        self.id = "adjustment" if mode == "strict" else f"adjustment-{mode}"

    def __call__(self, batch: RolloutBatch) -> float:
        return ped_from_adjustment(batch, self.disc, self.mode)


class DmlPED:
    def __init__(self, residualizer: Any = None, split_seed: int = 0, id: str = "lr-dml"):
        self.residualizer = LinearResidualizer() if residualizer is None else residualizer
        self.split_seed = split_seed
        self.id = id

    def __call__(self, batch: RolloutBatch) -> float:
        return dml_estimate(batch, self.residualizer, self.split_seed).ped


def make_estimator(name: str, disc: Discretization | None = None, mode: str = "zero-fill",
                   split_seed: int = 0) -> Estimator:
    """Named PED estimators: ``adjustment``, ``lr-dml``, ``rf-dml``."""
    if name == "adjustment":
        if disc is None:
            raise ValueError("the adjustment estimator needs a discretization")
        return AdjustmentPED(disc, mode)
    if name == "lr-dml":
        return DmlPED(split_seed=split_seed)
    if name == "rf-dml":
        from sklearn.ensemble import RandomForestRegressor

        forest = RandomForestRegressor(n_estimators=100, min_samples_leaf=5, random_state=split_seed, n_jobs=1)
        return DmlPED(forest, split_seed, id="rf-dml")
    raise ValueError(f"unknown estimator {name!r}")


# --------------------------------------------------------------------------- bootstrap


@dataclass(frozen=True)
class BootstrapReport:
    estimator_id: str
    K: int
    point_estimate: float | None
    bias_vs_reference: float | None
    bias_vs_self: float | None
    std_dev: float | None
    ci_low: float | None
    ci_high: float | None
    replicates: int
    seed: int
    failures: int = 0
    unreliable: bool = False
    reference_estimate: float | None = None
    values: list[float | None] = field(default_factory=list)
    bins_fixed_from_original: bool = True

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def tidy_rows(self) -> list[tuple]:
        return [(self.estimator_id, self.K, b, v) for b, v in enumerate(self.values)]


_FAILURES = (SteerkitError, ValueError, ArithmeticError, np.linalg.LinAlgError)


def _safe(estimator: Estimator, batch: RolloutBatch) -> float | None:
    try:
        value = float(estimator(batch))
    except _FAILURES:
        return None
    return value if np.isfinite(value) else None


def bootstrap(estimator: Estimator, series: TimeSeries | RolloutBatch, K: int | None = None,
              replicates: int = DEFAULT_REPLICATES, seed: int = 0, *,
              reference: Estimator | None = None, disc: Discretization | None = None,
              workers: int = 1) -> BootstrapReport:
    """Resample windows with replacement and summarise the estimator's spread.

    ``reference`` plays the role of the baseline in the bias statistic; it
    defaults to the zero-fill adjustment PED on ``disc``.  Replicate ``b``
    draws its indices from ``SeedSequence([seed, b])``.
    """
    if replicates < 2:
        raise ValueError("need at least 2 bootstrap replicates")
    if isinstance(series, RolloutBatch):
        batch = series
        if K is not None and K != batch.K:
            raise ValueError(f"batch has K={batch.K}, requested K={K}")
    else:
        if K is None:
            raise ValueError("K is required when bootstrapping a time series")
        batch = sliding_window(series, K)
    if reference is None:
        if disc is None:
            raise ValueError("pass either a reference estimator or a discretization")
        reference = AdjustmentPED(disc, "zero-fill")

    n = batch.n

    def replicate(b: int) -> float | None:
        rng = np.random.default_rng(np.random.SeedSequence([seed, b]))
        return _safe(estimator, batch.take(rng.integers(0, n, size=n)))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(replicate, range(replicates)))
    else:
        values = [replicate(b) for b in range(replicates)]

    point = _safe(estimator, batch)
    ref = _safe(reference, batch)
    ok = np.array([v for v in values if v is not None])
    failures = replicates - len(ok)
    est_id = getattr(estimator, "id", getattr(estimator, "__name__", type(estimator).__name__))

    def bias(against: float | None) -> float | None:
        if against is None or len(ok) == 0:
            return None
        return float(np.mean(ok - against))

    std = ci_lo = ci_hi = None
    if len(ok) >= 2:
        # shifting by one replicate keeps a constant estimator at exactly zero spread
        std = float(np.std(ok - ok[0], ddof=1))
        ci_lo, ci_hi = (float(v) for v in np.percentile(ok, [2.5, 97.5]))
    return BootstrapReport(
        estimator_id=str(est_id),
        K=batch.K,
        point_estimate=point,
        bias_vs_reference=bias(ref),
        bias_vs_self=bias(point),
        std_dev=std,
        ci_low=ci_lo,
        ci_high=ci_hi,
        replicates=replicates,
        seed=seed,
        failures=failures,
        unreliable=failures > replicates / 2,
        reference_estimate=ref,
        values=values,
    )


def write_tidy_csv(reports: Sequence[BootstrapReport], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["estimator", "K", "replicate", "value"])
        for rep in reports:
            for est, K, b, v in rep.tidy_rows():
                w.writerow([est, K, b, "" if v is None else repr(v)])


# --------------------------------------------------------------------------- overlap sweep


@dataclass(frozen=True)
class OverlapRow:
    K: int
    treatment: str
    estimate: float | None
    n_undefined: int
    n_strata: int
    undefined_fraction: float
    undefined_mass: float

    @property
    def undefined_terms(self) -> str:
        return f"{self.n_undefined} / {self.n_strata}"


def _bin_labels(disc: Discretization, u_bins) -> list[tuple[str, int]]:
    if u_bins is None:
        return [(f"({lo:g}, {hi:g}]", i) for i, (lo, hi) in enumerate(disc.action_bins[0])]
    if isinstance(u_bins, Mapping):
        return [(str(k), int(v)) for k, v in u_bins.items()]
    return [(f"bin{int(i)}", int(i)) for i in u_bins]


def overlap_sweep(series: TimeSeries, K_list: Sequence[int], disc: Discretization, u_bins=None,
                  outcome: int = 0) -> list[OverlapRow]:
    """Strict-mode adjustment diagnostics per ``(K, action bin)``.

    ``u_bins`` is a mapping ``label -> bin index`` of the (scalar) action, a
    list of bin indices, or ``None`` for every bin.
    """
    rows = []
    labels = _bin_labels(disc, u_bins)
    for K in K_list:
        batch = sliding_window(series, K)
        for label, b in labels:
            est = adjustment_estimate(batch, disc, disc.action_bin_midpoint([b]), mode="strict")
            rows.append(
                OverlapRow(
                    K=K,
                    treatment=label,
                    estimate=None if est.x_hat is None else float(est.x_hat[outcome]),
                    n_undefined=est.n_undefined,
                    n_strata=est.n_strata,
                    undefined_fraction=est.undefined_fraction,
                    undefined_mass=est.undefined_mass,
                )
            )
    return rows


OVERLAP_COLUMNS = ["K", "treatment", "estimate", "undefined_terms", "undefined_fraction", "undefined_mass"]


def write_overlap_csv(rows: Sequence[OverlapRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(OVERLAP_COLUMNS)
        for r in rows:
            w.writerow([
                r.K,
                r.treatment,
                "N/A" if r.estimate is None else repr(r.estimate),
                r.undefined_terms,
                repr(r.undefined_fraction),
                repr(r.undefined_mass),
            ])
