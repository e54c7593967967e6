"""Rank and support checks deciding whether steerability can be identified.

Also builds the unidentifiable twin of a system: a second set of maps that
produces the same observational law of ``(x_1, u_1, x_2)`` from a zero start
while moving the action-to-state map by ``Delta``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .dynamics import DynamicsSpec, JointCovariance, LinearSystem
from .errors import InsufficientSamplesError, SpecError

RANK_TOL = 1e-10

NECESSITY_NOTE = (
    "rank check failed: the sufficient condition does not hold; necessity is only "
    "guaranteed from a zero start with no shocks after the first observed step"
)


@dataclass(frozen=True)
class IdentifiabilityReport:
    M: int
    rank_observed: int
    rank_required: int
    singular_values: list[float]
    verdict: str
    rank_tolerance: float
    note: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ShockReport:
    t: int | None
    min_eigenvalue: float
    max_eigenvalue: float
    verdict: str
    rank_tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class SpectrumReport:
    t: int
    eigenvalues: list[float]
    num_zero: int
    full_rank: bool
    rank_tolerance: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ResponsivenessProbe:
    state: list[float]
    prev_action: list[float]
    jacobian_rank: int
    rank_required: int
    responsive: bool
    singular_values: list[float]


@dataclass(frozen=True)
class ResponsivenessReport:
    probes: list[ResponsivenessProbe]
    rank_tolerance: float
    note: str = "sampled Jacobian-rank test: necessary-condition check only, surjectivity is not verified"

    @property
    def all_responsive(self) -> bool:
        return all(p.responsive for p in self.probes)

    def to_dict(self) -> dict:
        return asdict(self)


def action_span_matrix(sys: LinearSystem, M: int) -> np.ndarray:
    """``[DC | D^2 C | ... | D^{M-1} C]`` of shape ``(p, d (M-1))``."""
    if M < 2:
        raise ValueError(f"span length M must be >= 2, got {M}")
    blocks = []
    block = sys.C
    for _ in range(M - 1):
        block = sys.D @ block
        blocks.append(block)
    return np.hstack(blocks)


def _numerical_rank(s: np.ndarray, rel_tol: float) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rel_tol * s[0]))


def check_full_row_rank_action(sys: LinearSystem, M: int, rel_tol: float = RANK_TOL) -> IdentifiabilityReport:
    Q = action_span_matrix(sys, M)
    s = np.linalg.svd(Q, compute_uv=False)
    rank = _numerical_rank(s, rel_tol)
    ok = rank == Q.shape[0]
    return IdentifiabilityReport(
        M=M,
        rank_observed=rank,
        rank_required=Q.shape[0],
        singular_values=[float(v) for v in s],
        verdict="identifiable" if ok else "not-identifiable",
        rank_tolerance=rel_tol,
        note="" if ok else NECESSITY_NOTE,
    )


def check_fully_spanning_shock(noise_samples, rel_tol: float = RANK_TOL, t: int | None = None) -> ShockReport:
    """Eigenvalue floor of the centred sample covariance (1/n normalisation)."""
    X = np.asarray(noise_samples, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n <= d:
        raise InsufficientSamplesError(f"need more than d={d} noise samples, got {n}")
    Xc = X - X.mean(axis=0)
    w = np.linalg.eigvalsh(Xc.T @ Xc / n)
    lo, hi = float(w[0]), float(w[-1])
    spanning = hi > 0 and lo > rel_tol * hi
    return ShockReport(t, lo, hi, "fully-spanning" if spanning else "degenerate", rel_tol)


def spectrum(sigma: JointCovariance, rel_tol: float = RANK_TOL) -> SpectrumReport:
    S = sigma.Sigma
    if np.max(np.abs(S - S.T), initial=0.0) > 1e-10 * max(np.linalg.norm(S), 1e-300):
        raise ValueError("covariance is not symmetric within tolerance")
    w = np.linalg.eigvalsh(S)
    top = max(float(w[-1]), 0.0)
    num_zero = int(np.sum(w <= rel_tol * top)) if top > 0 else len(w)
    return SpectrumReport(sigma.t, [float(v) for v in w], num_zero, num_zero == 0, rel_tol)


def construct_twin(spec: DynamicsSpec, Delta: Callable[[np.ndarray], np.ndarray]) -> DynamicsSpec:
    """Twin with ``f'(a) = f(a) + Delta(h(a))`` and ``g'(b) = g(b) - Delta(b)``; h and r unchanged."""
    f, g, h = spec.f, spec.g, spec.h
    probe = np.asarray(Delta(np.zeros((2, spec.p))))
    if probe.shape != (2, spec.d):
        raise SpecError(f"Delta must map actions (p={spec.p}) to states (d={spec.d}); got shape {probe.shape}")
    linear = None
    W = getattr(Delta, "W", None)
    if spec.linear is not None and W is not None:
        W = np.asarray(W, dtype=float)
        sys = spec.linear
        linear = LinearSystem(sys.A + W @ sys.C, sys.B - W, sys.C, sys.D)
    description = dict(spec.description)
    description["twin_of"] = spec.description.get("kind", "custom")
    if linear is not None:
        description.update(linear.to_dict())
    return DynamicsSpec(
        d=spec.d,
        p=spec.p,
        f=lambda a: f(a) + Delta(h(a)),
        g=lambda b: g(b) - Delta(b),
        h=h,
        r=spec.r,
        noise=spec.noise,
        init=spec.init,
        description=description,
        linear=linear,
    )


class LinearDelta:
    """``Delta(b) = W b``; lets ``construct_twin`` keep the linear form."""

    def __init__(self, W):
        self.W = np.atleast_2d(np.asarray(W, dtype=float))

    def __call__(self, b: np.ndarray) -> np.ndarray:
        return b @ self.W.T


def _fd_step(v: np.ndarray) -> np.ndarray:
    return 1e-6 * (1.0 + np.abs(v))


def check_responsive_action(spec: DynamicsSpec, probe_points: Sequence[tuple], rel_tol: float = 1e-6) -> ResponsivenessReport:
    """Central-difference Jacobian of ``q_c(y) = r(h(y) + c)`` at each ``(y, c)`` probe."""
    need = min(spec.p, spec.d)
    probes = []
    for y, c in probe_points:
        y = np.asarray(y, dtype=float).ravel()
        c = np.asarray(c, dtype=float).ravel()

        def q(v: np.ndarray) -> np.ndarray:
            return spec.r(spec.h(v[None, :]) + c[None, :])[0]

        steps = _fd_step(y)
        J = np.empty((spec.p, spec.d))
        for j in range(spec.d):
            e = np.zeros(spec.d)
            e[j] = steps[j]
            J[:, j] = (q(y + e) - q(y - e)) / (2 * steps[j])
        if not np.all(np.isfinite(J)):
            raise FloatingPointError(f"non-finite finite-difference Jacobian at probe {y.tolist()}")
        s = np.linalg.svd(J, compute_uv=False)
        rank = _numerical_rank(s, rel_tol)
        probes.append(
            ResponsivenessProbe(y.tolist(), c.tolist(), rank, need, rank == need, [float(v) for v in s])
        )
    return ResponsivenessReport(probes, rel_tol)


def energy_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample energy statistic ``2E|a-b| - E|a-a'| - E|b-b'|`` (V-statistic)."""
    from scipy.spatial.distance import cdist

    a = np.asarray(a, dtype=float).reshape(len(a), -1)
    b = np.asarray(b, dtype=float).reshape(len(b), -1)
    return float(2 * cdist(a, b).mean() - cdist(a, a).mean() - cdist(b, b).mean())


def energy_permutation_test(a, b, permutations: int, seed: int) -> tuple[float, float]:
    """Permutation p-value for the energy statistic; returns ``(statistic, p_value)``."""
    from scipy.spatial.distance import cdist

    a = np.asarray(a, dtype=float).reshape(len(a), -1)
    b = np.asarray(b, dtype=float).reshape(len(b), -1)
    pooled = np.vstack([a, b])
    dist = cdist(pooled, pooled)
    na = len(a)

    def stat(idx: np.ndarray) -> float:
        ia, ib = idx[:na], idx[na:]
        return 2 * dist[np.ix_(ia, ib)].mean() - dist[np.ix_(ia, ia)].mean() - dist[np.ix_(ib, ib)].mean()

    rng = np.random.default_rng(seed)
    observed = stat(np.arange(len(pooled)))
    hits = sum(stat(rng.permutation(len(pooled))) >= observed for _ in range(permutations))
    return float(observed), (hits + 1) / (permutations + 1)
