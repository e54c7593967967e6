"""Finite-sample steerability estimators.

* two-stage regression for linear systems observed over windows of length 2,
* the discretised adjustment formula (and the PED slope built on it),
* split-sample double machine learning with a pluggable residualiser.

Every least-squares step goes through :func:`ols`, a pivoted-QR solve that
raises on rank-deficient designs instead of regularising.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
import scipy.linalg

from .dynamics import LinearSystem, RolloutBatch
from .errors import (
    DegenerateDesignError,
    DegenerateTreatmentError,
    EmptyTreatmentBinError,
    GramEventError,
    SingularDesignError,
    UnboundedRhoError,
    UndefinedEstimateError,
)

LSTSQ_TOL = 1e-10


def ols(X: np.ndarray, Y: np.ndarray, rel_tol: float = LSTSQ_TOL) -> np.ndarray:
    """Least-squares coefficients ``W`` minimising ``||Y - X W||_F``.

    Raises :class:`SingularDesignError` when ``X`` is column-rank deficient,
    judged by the pivoted R diagonal relative to its largest entry.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    squeeze = Y.ndim == 1
    if squeeze:
        Y = Y[:, None]
    n, k = X.shape
    if n < k:
        raise SingularDesignError(f"design has {n} rows for {k} unknowns")
    Q, R, piv = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0 or np.any(diag <= rel_tol * diag[0]):
        rank = 0 if diag.size == 0 or diag[0] == 0.0 else int(np.sum(diag > rel_tol * diag[0]))
        raise SingularDesignError(f"design has numerical rank {rank} < {k}")
    W = np.empty((k, Y.shape[1]))
    W[piv] = scipy.linalg.solve_triangular(R, Q.T @ Y)
    return W[:, 0] if squeeze else W


# --------------------------------------------------------------------------- two-stage


@dataclass(frozen=True, eq=False)
class TwoStageEstimate:
    B_hat: np.ndarray
    C_hat: np.ndarray
    H_hat: np.ndarray
    n: int
    gram_min_sv: float
    design_min_sv: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": "two-stage",
            "B_hat": _matrix(self.B_hat),
            "C_hat": _matrix(self.C_hat),
            "H_hat": _matrix(self.H_hat),
            "n": self.n,
            "gram_min_sv": self.gram_min_sv,
            "design_min_sv": self.design_min_sv,
        }


def _matrix(M: np.ndarray) -> dict[str, Any]:
    M = np.atleast_2d(M)
    return {"dims": list(M.shape), "data": M.tolist()}


def _min_sv(G: np.ndarray) -> float:
    return float(np.linalg.svd(G, compute_uv=False)[-1])


def two_stage_estimate(batch: RolloutBatch, rel_tol: float = LSTSQ_TOL) -> TwoStageEstimate:
    """Estimate ``B`` from windows ``(x_1, u_1, x_2, u_2, x_3)``.

    Fits ``C`` from ``u_1 ~ x_1``, ``H = A + BC`` from ``x_2 ~ x_1``, then
    regresses ``x_3 - H x_2`` on ``u_2 - C x_2``.
    """
    if batch.K != 2:
        raise ValueError(f"two-stage regression needs windows of length K=2, got K={batch.K}")
    if batch.n < batch.d:
        raise ValueError(f"need n >= d={batch.d} rollouts, got {batch.n}")
    X1, X2, X3 = batch.states[:, 0], batch.states[:, 1], batch.states[:, 2]
    U1, U2 = batch.actions[:, 0], batch.actions[:, 1]
    gram_min = _min_sv(X1.T @ X1)
    try:
        C_hat = ols(X1, U1, rel_tol).T
        H_hat = ols(X1, X2, rel_tol).T
    except SingularDesignError as exc:
        raise GramEventError(f"first-step Gram matrix is singular ({exc})") from None
    V = U2 - X2 @ C_hat.T
    design_min = _min_sv(V.T @ V)
    try:
        B_hat = ols(V, X3 - X2 @ H_hat.T, rel_tol).T
    except SingularDesignError as exc:
        raise DegenerateDesignError(f"residualised action design is singular ({exc})") from None
    return TwoStageEstimate(B_hat, C_hat, H_hat, batch.n, gram_min, design_min)


def compute_rho(sys: LinearSystem, rel_tol: float = LSTSQ_TOL) -> float:
    """Smallest ``rho`` with ``||A + BC||_op <= rho * sigma_min(DC)``."""
    DC = sys.D @ sys.C
    s = np.linalg.svd(DC, compute_uv=False)
    s_min = s[-1]
    if s[0] == 0.0 or s_min <= rel_tol * s[0]:
        raise UnboundedRhoError("sigma_min(DC) is zero at tolerance")
    return float(np.linalg.norm(sys.H, 2) / s_min)


def gaussian_error_bound(d: int, n: int, sigma1: float, sigma2: float, rho: float) -> float:
    """Mean squared Frobenius error bound ``d^2 s2^2 rho^2 / ((n-d-1) s1^2)``."""
    if n <= d + 1:
        raise ValueError(f"bound needs n > d+1, got n={n}, d={d}")
    return d * d * sigma2**2 * rho**2 / ((n - d - 1) * sigma1**2)


def steerability(B_hat, u, u_prime) -> np.ndarray:
    """``B (u' - u)``."""
    B_hat = np.atleast_2d(np.asarray(B_hat, dtype=float))
    delta = np.asarray(u_prime, dtype=float).ravel() - np.asarray(u, dtype=float).ravel()
    if B_hat.shape[1] != delta.size:
        raise ValueError(f"B has {B_hat.shape[1]} columns but actions have {delta.size} entries")
    return B_hat @ delta


# --------------------------------------------------------------------------- adjustment formula


Interval = tuple[float, float]


def _check_bins(bins: Sequence[Sequence[Interval]], what: str) -> tuple[tuple[Interval, ...], ...]:
    out = []
    for j, coord in enumerate(bins):
        coord = tuple((float(lo), float(hi)) for lo, hi in coord)
        if not coord:
            raise ValueError(f"{what} coordinate {j} has no bins")
        for i, (lo, hi) in enumerate(coord):
            if not hi > lo:
                raise ValueError(f"{what} coordinate {j} bin {i} has non-positive width ({lo}, {hi}]")
            if i and lo < coord[i - 1][1]:
                raise ValueError(f"{what} coordinate {j} bins overlap or are out of order at bin {i}")
        out.append(coord)
    return tuple(out)


@dataclass(frozen=True)
class Discretization:
    """Half-open ``(lo, hi]`` bins per state and per action coordinate.

    Values outside every bin of a coordinate map to the overflow index -1.
    """

    state_bins: tuple[tuple[Interval, ...], ...]
    action_bins: tuple[tuple[Interval, ...], ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "state_bins", _check_bins(self.state_bins, "state"))
        object.__setattr__(self, "action_bins", _check_bins(self.action_bins, "action"))

    @classmethod
    def from_edges(cls, state_edges: Sequence[Sequence[float]], action_edges: Sequence[Sequence[float]]) -> "Discretization":
        """Contiguous bins ``(e_0, e_1], (e_1, e_2], ...`` per coordinate."""

        def pairs(edges):
            return [list(zip(e[:-1], e[1:])) for e in edges]

        return cls(pairs(state_edges), pairs(action_edges))

    @staticmethod
    def _index(values: np.ndarray, bins: tuple[tuple[Interval, ...], ...], what: str) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape[-1] != len(bins):
            raise ValueError(f"{what} values have {values.shape[-1]} coordinates, bins cover {len(bins)}")
        out = np.full(values.shape, -1, dtype=np.int64)
        for j, coord in enumerate(bins):
            lo = np.array([b[0] for b in coord])
            hi = np.array([b[1] for b in coord])
            v = values[..., j]
            idx = np.searchsorted(hi, v, side="left")
            inside = idx < len(coord)
            safe = np.where(inside, idx, 0)
            inside &= v > lo[safe]
            out[..., j] = np.where(inside, safe, -1)
        return out

    def state_index(self, x) -> np.ndarray:
        return self._index(x, self.state_bins, "state")

    def action_index(self, u) -> np.ndarray:
        return self._index(u, self.action_bins, "action")

    def action_bin_midpoint(self, codes: Sequence[int]) -> np.ndarray:
        return np.array([(self.action_bins[j][c][0] + self.action_bins[j][c][1]) / 2 for j, c in enumerate(codes)])

    def to_dict(self) -> dict[str, Any]:
        return {
            "state_bins": [[list(b) for b in coord] for coord in self.state_bins],
            "action_bins": [[list(b) for b in coord] for coord in self.action_bins],
        }


@dataclass(frozen=True, eq=False)
class AdjustmentEstimate:
    """Adjustment-formula estimate for one queried action bin.

    ``x_hat`` is ``None`` when strict mode meets a stratum with no treated
    samples (reported as N/A).
    """

    x_hat: np.ndarray | None
    undefined_fraction: float
    undefined_mass: float
    mode: str
    n_undefined: int
    n_strata: int
    action_bin: tuple[int, ...]
    n: int

    @property
    def defined(self) -> bool:
        return self.x_hat is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": "adjustment",
            "x_hat": None if self.x_hat is None else self.x_hat.tolist(),
            "undefined_fraction": self.undefined_fraction,
            "undefined_mass": self.undefined_mass,
            "undefined_terms": f"{self.n_undefined} / {self.n_strata}",
            "mode": self.mode,
            "action_bin": list(self.action_bin),
            "n": self.n,
        }


MODES = ("strict", "zero-fill")


def _strata(batch: RolloutBatch, disc: Discretization) -> np.ndarray:
    codes = disc.state_index(batch.states[:, :-1, :]).reshape(batch.n, -1)
    _, inverse = np.unique(codes, axis=0, return_inverse=True)
    return inverse.ravel()


def adjustment_estimate(batch: RolloutBatch, disc: Discretization, u, mode: str = "strict") -> AdjustmentEstimate:
    """Adjust for the K lagged states ``(x_{T-K}, ..., x_{T-1})`` to estimate ``E[x_T | do(u_{T-1} = u)]``.

    Each confounder stratum contributes the mean outcome among its rows whose
    action lands in the bin of ``u``, weighted by the stratum frequency.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    u = np.asarray(u, dtype=float).ravel()
    query = disc.action_index(u[None, :])[0]
    if np.any(query < 0):
        raise ValueError(f"queried action {u.tolist()} lies outside every action bin")
    treated = np.all(disc.action_index(batch.treatment()) == query, axis=1)
    if not treated.any():
        raise EmptyTreatmentBinError(f"no sample has its action in bin {query.tolist()}")
    gamma = _strata(batch, disc)
    n_strata = int(gamma.max()) + 1
    count_z = np.bincount(gamma, minlength=n_strata)
    count_zu = np.bincount(gamma[treated], minlength=n_strata)
    y = batch.outcome()
    sums = np.stack(
        [np.bincount(gamma[treated], weights=y[treated, j], minlength=n_strata) for j in range(batch.d)], axis=1
    )
    undefined = count_zu == 0
    n_undefined = int(undefined.sum())
    cond_mean = np.zeros_like(sums)
    ok = ~undefined
    cond_mean[ok] = sums[ok] / count_zu[ok, None]
    x_hat = (cond_mean * (count_z / batch.n)[:, None]).sum(axis=0)
    if mode == "strict" and n_undefined:
        x_hat = None
    return AdjustmentEstimate(
        x_hat=x_hat,
        undefined_fraction=n_undefined / n_strata,
        undefined_mass=float(count_z[undefined].sum() / batch.n),
        mode=mode,
        n_undefined=n_undefined,
        n_strata=n_strata,
        action_bin=tuple(int(c) for c in query),
        n=batch.n,
    )


def _slope(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if np.ptp(x) == 0:
        raise DegenerateTreatmentError("observed actions do not vary; slope is undefined")
    design = np.column_stack([np.ones_like(x), x])
    return float(ols(design, y)[1])


def ped_from_adjustment(batch: RolloutBatch, disc: Discretization, mode: str = "strict", outcome: int = 0) -> float:
    """OLS slope of the adjusted prediction ``x_hat(u_t)`` against the raw observed ``u_t``.

    Each observed scalar action receives the estimate of its own bin; bins are
    not replaced by a representative price.
    """
    if batch.p != 1:
        raise ValueError("PED needs a scalar action")
    u = batch.treatment()
    codes = disc.action_index(u)[:, 0]
    if np.any(codes < 0):
        raise ValueError("some observed actions fall outside every action bin")
    predicted = np.empty(batch.n)
    for c in np.unique(codes):
        est = adjustment_estimate(batch, disc, disc.action_bin_midpoint([c]), mode)
        if not est.defined:
            raise UndefinedEstimateError(
                f"adjustment estimate undefined for action bin {int(c)} "
                f"({est.n_undefined} / {est.n_strata} strata lack treated samples)"
            )
        predicted[codes == c] = est.x_hat[outcome]
    return _slope(u[:, 0], predicted)


# --------------------------------------------------------------------------- double ML


class LinearResidualizer:
    """OLS with intercept; the residualiser behind LR-DML."""

    name = "ols"

    def fit(self, Z: np.ndarray, Y: np.ndarray) -> "LinearResidualizer":
        Z1 = np.column_stack([np.ones(len(Z)), Z])
        self.coef_ = ols(Z1, Y)
        return self

    def predict(self, Z: np.ndarray) -> np.ndarray:
        return np.column_stack([np.ones(len(Z)), Z]) @ self.coef_


def _residualizer_id(residualizer: Any) -> str:
    return getattr(residualizer, "name", None) or type(residualizer).__name__


def _fit_predict(residualizer: Any, Z_fit, Y_fit, Z_eval) -> np.ndarray:
    model = copy.deepcopy(residualizer)
    if Y_fit.shape[1] == 1 and not isinstance(model, LinearResidualizer):
        model.fit(Z_fit, Y_fit[:, 0])
        return np.asarray(model.predict(Z_eval)).reshape(-1, 1)
    model.fit(Z_fit, Y_fit)
    return np.asarray(model.predict(Z_eval)).reshape(len(Z_eval), -1)


@dataclass(frozen=True, eq=False)
class DmlEstimate:
    theta: np.ndarray  # (d, p)
    split_seed: int
    residualizer_id: str
    n_fit: int
    n_final: int

    @property
    def ped(self) -> float:
        if self.theta.size != 1:
            raise ValueError("effect is not scalar")
        return float(self.theta.ravel()[0])

    def to_dict(self) -> dict[str, Any]:
        return {
            "method": "dml",
            "theta": _matrix(self.theta),
            "split_seed": self.split_seed,
            "residualizer_id": self.residualizer_id,
            "n_fit": self.n_fit,
            "n_final": self.n_final,
        }


def dml_fit(z, u, x, residualizer: Any = None, split_seed: int = 0) -> DmlEstimate:
    """Residualise ``u`` and ``x`` on ``z`` using one half, regress residuals on the other.

    ``residualizer`` is any object with ``fit(Z, Y)`` / ``predict(Z)``; it is
    deep-copied for each of the two nuisance fits.
    """
    z = np.asarray(z, dtype=float).reshape(len(z), -1)
    u = np.asarray(u, dtype=float).reshape(len(u), -1)
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    n = len(z)
    if n < 4:
        raise ValueError(f"DML needs n >= 4, got {n}")
    residualizer = LinearResidualizer() if residualizer is None else residualizer
    perm = np.random.default_rng(split_seed).permutation(n)
    fit_idx, final_idx = perm[: n // 2], perm[n // 2 :]
    ru = u[final_idx] - _fit_predict(residualizer, z[fit_idx], u[fit_idx], z[final_idx])
    rx = x[final_idx] - _fit_predict(residualizer, z[fit_idx], x[fit_idx], z[final_idx])
    scale = np.linalg.norm(u[final_idx] - u[final_idx].mean(axis=0), axis=0)
    if np.any(np.linalg.norm(ru, axis=0) <= LSTSQ_TOL * scale):
        raise DegenerateTreatmentError("residualised treatment has zero variance")
    try:
        theta = ols(ru, rx).T
    except SingularDesignError as exc:
        raise DegenerateTreatmentError(f"residualised treatment is degenerate ({exc})") from None
    return DmlEstimate(theta, split_seed, _residualizer_id(residualizer), len(fit_idx), len(final_idx))


def dml_estimate(batch: RolloutBatch, residualizer: Any = None, split_seed: int = 0) -> DmlEstimate:
    """DML with confounders ``(x_{T-K}, ..., x_{T-1})``, treatment ``u_{T-1}``, outcome ``x_T``."""
    return dml_fit(batch.confounders(), batch.treatment(), batch.outcome(), residualizer, split_seed)
