"""Platform/consumer dynamics: system types, rollout simulation, interventions.

The state evolves as ``x_t = f(x_{t-1}) + g(u_{t-1}) + xi_t`` and the platform
responds with ``u_t = h(x_t) + r(u_{t-1})``.  The four maps act row-wise on
2-D arrays, so one call advances a whole block of rollouts at once.

Noise is drawn in blocks of ``CHUNK`` rollouts.  Block ``c`` at time ``t`` uses
a generator seeded from ``(seed, c, t)``, which makes every draw a fixed
function of ``(seed, k, t)`` no matter how many rollouts are requested or how
many worker threads share the work.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Sequence

import numpy as np

from .errors import NumericOverflowError, SpecError

Map = Callable[[np.ndarray], np.ndarray]

CHUNK = 1024
DIVERGENCE_LIMIT = 1e12

_INIT_STREAM = 0
_NOISE_STREAM = 1


def _frozen(a: Any, name: str) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if arr.ndim != 2:
        raise SpecError(f"{name} must be a matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise SpecError(f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearSystem:
    """Linear instance ``f=A x, g=B u, h=C x, r=D u``."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self) -> None:
        for name in "ABCD":
            object.__setattr__(self, name, _frozen(getattr(self, name), name))
        d, p = self.B.shape
        expected = {"A": (d, d), "B": (d, p), "C": (p, d), "D": (p, p)}
        for name, shape in expected.items():
            if getattr(self, name).shape != shape:
                raise SpecError(
                    f"{name} has shape {getattr(self, name).shape}, expected {shape} for d={d}, p={p}"
                )

    @property
    def d(self) -> int:
        return self.B.shape[0]

    @property
    def p(self) -> int:
        return self.B.shape[1]

    @property
    def H(self) -> np.ndarray:
        """One-step state map ``A + BC`` seen when ``u_{t-1} = C x_{t-1}``."""
        return self.A + self.B @ self.C

    def transition(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint transition ``(J, M)`` with ``[x_t; u_t] = J [x_{t-1}; u_{t-1}] + M xi_t``."""
        A, B, C, D = self.A, self.B, self.C, self.D
        J = np.block([[A, B], [C @ A, C @ B + D]])
        M = np.vstack([np.eye(self.d), C])
        return J, M

    def to_spec(self, noise: "NoiseModel | None" = None, init: "InitModel | None" = None) -> "DynamicsSpec":
        A, B, C, D = self.A, self.B, self.C, self.D
        return DynamicsSpec(
            d=self.d,
            p=self.p,
            f=lambda x: x @ A.T,
            g=lambda u: u @ B.T,
            h=lambda x: x @ C.T,
            r=lambda u: u @ D.T,
            noise=noise if noise is not None else GaussianNoise(self.d),
            init=init if init is not None else PointMass(np.zeros(self.d), np.zeros(self.p)),
            description={"kind": "linear", **self.to_dict()},
            linear=self,
        )

    def to_dict(self) -> dict[str, list]:
        return {name: getattr(self, name).tolist() for name in "ABCD"}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LinearSystem":
        try:
            return cls(*(data[name] for name in "ABCD"))
        except KeyError as exc:
            raise SpecError(f"linear system is missing matrix {exc.args[0]}") from None

    @classmethod
    def random(cls, d: int, p: int, seed: int, scale: float | None = None) -> "LinearSystem":
        """Gaussian entries with standard deviation ``scale`` (default ``1/sqrt(max(d, p))``)."""
        rng = np.random.default_rng(seed)
        s = 1.0 / np.sqrt(max(d, p)) if scale is None else scale
        return cls(
            s * rng.standard_normal((d, d)),
            s * rng.standard_normal((d, p)),
            s * rng.standard_normal((p, d)),
            s * rng.standard_normal((p, p)),
        )

    @classmethod
    def wishart(cls, d: int, rank_c: int, n_w: int, seed: int) -> "LinearSystem":
        """Square system with ``W W^T / n_w`` matrices; ``C`` uses ``rank_c`` columns of ``W``.

        Drawn in the order B, A, D, C from one generator.
        """
        rng = np.random.default_rng(seed)

        def draw(cols: int) -> np.ndarray:
            W = rng.standard_normal((d, cols))
            return W @ W.T / n_w

        B = draw(n_w)
        A = draw(n_w)
        D = draw(n_w)
        C = draw(rank_c)
        return cls(A, B, C, D)


class GaussianNoise:
    """Isotropic (or fixed-covariance) Gaussian shock with per-step scale.

    ``scale`` is a constant, a sequence ``(sigma_1, sigma_2, ...)`` with zero
    after its end, or a callable ``t -> sigma_t``.  A zero scale means no shock
    at that step.
    """

    def __init__(self, d: int, scale: float | Sequence[float] | Callable[[int], float] = 1.0, cov=None):
        self.d = d
        self.scale = scale
        if cov is None:
            self._factor = None
        else:
            cov = np.asarray(cov, dtype=float)
            if cov.shape != (d, d):
                raise SpecError(f"noise covariance has shape {cov.shape}, expected {(d, d)}")
            w, V = np.linalg.eigh((cov + cov.T) / 2)
            if w.min() < -1e-10 * max(w.max(), 1.0):
                raise SpecError("noise covariance is not positive semidefinite")
            self._factor = V * np.sqrt(np.clip(w, 0.0, None))
        self.cov = cov

    def scale_at(self, t: int) -> float:
        if callable(self.scale):
            return float(self.scale(t))
        if np.isscalar(self.scale):
            return float(self.scale)
        seq = list(self.scale)
        return float(seq[t - 1]) if 1 <= t <= len(seq) else 0.0

    def sample(self, t: int, rng: np.random.Generator, size: int) -> np.ndarray:
        sigma = self.scale_at(t)
        if sigma == 0.0:
            return np.zeros((size, self.d))
        z = rng.standard_normal((size, self.d))
        if self._factor is not None:
            z = z @ self._factor.T
        return sigma * z

    def describe(self) -> dict[str, Any]:
        scale = self.scale
        if callable(scale):
            scale = getattr(scale, "__name__", "callable")
        elif not np.isscalar(scale):
            scale = [float(s) for s in scale]
        out: dict[str, Any] = {"kind": "gaussian", "d": self.d, "scale": scale}
        if self.cov is not None:
            out["cov"] = self.cov.tolist()
        return out


class DiscreteNoise:
    """Shock drawn from a finite set of vectors; optionally only at some steps."""

    def __init__(self, values, probs=None, steps: Sequence[int] | None = None):
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.values.shape[0] == 1 and np.ndim(values) == 1:
            self.values = self.values.T
        m = self.values.shape[0]
        self.probs = np.full(m, 1.0 / m) if probs is None else np.asarray(probs, dtype=float)
        self.d = self.values.shape[1]
        self.steps = None if steps is None else frozenset(steps)

    def sample(self, t: int, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.steps is not None and t not in self.steps:
            return np.zeros((size, self.d))
        idx = rng.choice(len(self.probs), size=size, p=self.probs)
        return self.values[idx]

    def describe(self) -> dict[str, Any]:
        return {
            "kind": "discrete",
            "values": self.values.tolist(),
            "probs": self.probs.tolist(),
            "steps": None if self.steps is None else sorted(self.steps),
        }


class ZeroNoise(GaussianNoise):
    def __init__(self, d: int):
        super().__init__(d, scale=0.0)


class PointMass:
    """Initial condition concentrated at ``(x0, u0)``."""

    def __init__(self, x0, u0):
        self.x0 = np.asarray(x0, dtype=float).ravel()
        self.u0 = np.asarray(u0, dtype=float).ravel()

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        return np.tile(self.x0, (size, 1)), np.tile(self.u0, (size, 1))

    def describe(self) -> dict[str, Any]:
        return {"kind": "point", "x0": self.x0.tolist(), "u0": self.u0.tolist()}


class DiscreteInit:
    """Finite joint distribution over ``(x0, u0)`` pairs."""

    def __init__(self, x0s, u0s, probs=None):
        self.x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
        self.u0s = np.atleast_2d(np.asarray(u0s, dtype=float))
        if np.ndim(x0s) == 1:
            self.x0s = self.x0s.T
        if np.ndim(u0s) == 1:
            self.u0s = self.u0s.T
        m = self.x0s.shape[0]
        self.probs = np.full(m, 1.0 / m) if probs is None else np.asarray(probs, dtype=float)

    def sample(self, rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
        idx = rng.choice(len(self.probs), size=size, p=self.probs)
        return self.x0s[idx], self.u0s[idx]

    def describe(self) -> dict[str, Any]:
        return {"kind": "discrete", "x0": self.x0s.tolist(), "u0": self.u0s.tolist(), "probs": self.probs.tolist()}


NoiseModel = Any  # duck-typed: .sample(t, rng, size) -> (size, d)
InitModel = Any  # duck-typed: .sample(rng, size) -> ((size, d), (size, p))


@dataclass(frozen=True, eq=False)
class DynamicsSpec:
    """General additive dynamics; maps must be deterministic and act row-wise."""

    d: int
    p: int
    f: Map
    g: Map
    h: Map
    r: Map
    noise: NoiseModel
    init: InitModel = None
    description: dict[str, Any] = field(default_factory=dict)
    linear: LinearSystem | None = None

    def __post_init__(self) -> None:
        if self.init is None:
            object.__setattr__(self, "init", PointMass(np.zeros(self.d), np.zeros(self.p)))
        zx, zu = np.zeros((2, self.d)), np.zeros((2, self.p))
        for name, arg, dim in (("f", zx, self.d), ("g", zu, self.d), ("h", zx, self.p), ("r", zu, self.p)):
            try:
                out = np.asarray(getattr(self, name)(arg))
            except Exception as exc:
                raise SpecError(f"map {name} failed on a zero batch: {exc}") from exc
            if out.shape != (2, dim):
                raise SpecError(f"map {name} returned shape {out.shape}, expected {(2, dim)}")

    def describe(self) -> dict[str, Any]:
        out = dict(self.description) or {"kind": "custom"}
        out["d"], out["p"] = self.d, self.p
        if hasattr(self.noise, "describe"):
            out["noise"] = self.noise.describe()
        if hasattr(self.init, "describe"):
            out["init"] = self.init.describe()
        return out


@dataclass(frozen=True, eq=False)
class Rollout:
    states: np.ndarray  # (K+1, d): x_{T-K} .. x_T
    actions: np.ndarray  # (K, p): u_{T-K} .. u_{T-1}
    T: int
    K: int
    noise: np.ndarray | None = None  # (K+1, d), aligned with states

    def __post_init__(self) -> None:
        if self.K < 1:
            raise ValueError("rollout window K must be >= 1")
        if len(self.states) != self.K + 1 or len(self.actions) != self.K:
            raise ValueError(
                f"rollout needs {self.K + 1} states and {self.K} actions, "
                f"got {len(self.states)} and {len(self.actions)}"
            )


@dataclass(frozen=True, eq=False)
class RolloutBatch:
    """``n`` rollouts sharing ``(T, K)``, stored as stacked arrays."""

    states: np.ndarray  # (n, K+1, d)
    actions: np.ndarray  # (n, K, p)
    T: int
    K: int
    seed: int | None = None
    noise: np.ndarray | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        s, a = np.asarray(self.states, dtype=float), np.asarray(self.actions, dtype=float)
        if s.ndim != 3 or a.ndim != 3:
            raise ValueError("states and actions must be (n, steps, dim) arrays")
        if self.K < 1:
            raise ValueError("rollout window K must be >= 1")
        if s.shape[1] != self.K + 1 or a.shape[1] != self.K or s.shape[0] != a.shape[0]:
            raise ValueError(f"inconsistent batch shapes {s.shape} / {a.shape} for K={self.K}")
        if self.noise is not None and np.shape(self.noise) != s.shape:
            raise ValueError("noise must be aligned with states")
        for arr in (s, a) + ((self.noise,) if self.noise is not None else ()):
            if isinstance(arr, np.ndarray):
                arr.setflags(write=False)
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def d(self) -> int:
        return self.states.shape[2]

    @property
    def p(self) -> int:
        return self.actions.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.T - self.K, self.T + 1)

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, k: int) -> Rollout:
        noise = None if self.noise is None else self.noise[k]
        return Rollout(self.states[k], self.actions[k], self.T, self.K, noise)

    def __iter__(self) -> Iterator[Rollout]:
        return (self[k] for k in range(self.n))

    def take(self, idx) -> "RolloutBatch":
        idx = np.asarray(idx)
        noise = None if self.noise is None else self.noise[idx]
        return RolloutBatch(self.states[idx], self.actions[idx], self.T, self.K, self.seed, noise, dict(self.meta))

    def confounders(self) -> np.ndarray:
        """Lagged states ``(x_{T-K}, ..., x_{T-1})`` flattened to ``(n, K*d)``."""
        return self.states[:, :-1, :].reshape(self.n, -1)

    def treatment(self) -> np.ndarray:
        return self.actions[:, -1, :]

    def outcome(self) -> np.ndarray:
        return self.states[:, -1, :]


def _chunk_rng(seed: int, chunk: int, t: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, chunk, t, stream]))


def _check_seed(seed: int) -> int:
    if int(seed) != seed or seed < 0:
        raise ValueError(f"seed must be a non-negative integer, got {seed!r}")
    return int(seed)


def draw_noise(spec: DynamicsSpec, T: int, n: int, seed: int) -> np.ndarray:
    """Noise array ``(n, T+1, d)``; slot 0 is unused (zero)."""
    seed = _check_seed(seed)
    out = np.zeros((n, T + 1, spec.d))
    for c in range(-(-n // CHUNK)):
        lo, hi = c * CHUNK, min(n, (c + 1) * CHUNK)
        for t in range(1, T + 1):
            out[lo:hi, t] = _chunk_noise(spec, seed, c, t)[: hi - lo]
    return out


def _chunk_noise(spec: DynamicsSpec, seed: int, c: int, t: int) -> np.ndarray:
    xi = np.asarray(spec.noise.sample(t, _chunk_rng(seed, c, t, _NOISE_STREAM), CHUNK), dtype=float)
    if xi.shape != (CHUNK, spec.d):
        raise SpecError(f"noise sample has shape {xi.shape}, expected {(CHUNK, spec.d)}")
    return xi


def _chunk_init(spec: DynamicsSpec, seed: int, c: int) -> tuple[np.ndarray, np.ndarray]:
    x0, u0 = spec.init.sample(_chunk_rng(seed, c, 0, _INIT_STREAM), CHUNK)
    x0, u0 = np.asarray(x0, dtype=float), np.asarray(u0, dtype=float)
    if x0.shape != (CHUNK, spec.d) or u0.shape != (CHUNK, spec.p):
        raise SpecError(f"initial condition has shapes {x0.shape}, {u0.shape}")
    return x0, u0


class _Overflow(Exception):
    def __init__(self, k: int, t: int, value: float):
        self.k, self.t, self.value = k, t, value


def _guard(x: np.ndarray, offset: int, t: int) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
    if bad.any():
        row = int(np.argmax(bad.any(axis=1)))
        raise _Overflow(offset + row, t, float(np.max(np.abs(x[row]))))


def propagate(spec: DynamicsSpec, x0: np.ndarray, u0: np.ndarray, noise: np.ndarray,
              do: tuple[int, np.ndarray] | None = None, offset: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Iterate the dynamics from explicit initial conditions and noise.

    ``noise`` has shape ``(n, T+1, d)`` with ``noise[:, t]`` the shock at step t.
    ``do=(s, u)`` replaces the structural equation of ``u_s`` by the constant u.
    Returns states ``(n, T+1, d)`` and actions ``(n, T+1, p)``.
    """
    n, steps, _ = noise.shape
    T = steps - 1
    xs = np.empty((n, T + 1, spec.d))
    us = np.empty((n, T + 1, spec.p))
    x, u = np.asarray(x0, dtype=float), np.asarray(u0, dtype=float)
    if x.shape != (n, spec.d) or u.shape != (n, spec.p):
        raise SpecError(f"initial condition shapes {x.shape}, {u.shape} do not match d={spec.d}, p={spec.p}")
    if do is not None and do[0] == 0:
        u = np.broadcast_to(do[1], u.shape).copy()
    xs[:, 0], us[:, 0] = x, u
    for t in range(1, T + 1):
        x = spec.f(x) + spec.g(u) + noise[:, t]
        _guard(x, offset, t)
        if do is not None and do[0] == t:
            u = np.broadcast_to(do[1], (n, spec.p)).copy()
        else:
            u = spec.h(x) + spec.r(u)
            _guard(u, offset, t)
        xs[:, t], us[:, t] = x, u
    return xs, us


def _simulate_chunk(spec: DynamicsSpec, T: int, seed: int, c: int, size: int, do):
    x0, u0 = _chunk_init(spec, seed, c)
    noise = np.zeros((CHUNK, T + 1, spec.d))
    for t in range(1, T + 1):
        noise[:, t] = _chunk_noise(spec, seed, c, t)
    x0, u0, noise = x0[:size], u0[:size], noise[:size]
    xs, us = propagate(spec, x0, u0, noise, do=do, offset=c * CHUNK)
    return xs, us, noise


def _run_chunks(spec: DynamicsSpec, T: int, n: int, seed: int, do, workers: int):
    seed = _check_seed(seed)
    n_chunks = -(-n // CHUNK)
    sizes = [min(CHUNK, n - c * CHUNK) for c in range(n_chunks)]

    def job(c: int):
        try:
            return _simulate_chunk(spec, T, seed, c, sizes[c], do)
        except _Overflow as exc:
            return exc

    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, range(n_chunks)))
    else:
        results = [job(c) for c in range(n_chunks)]
    overflows = [res for res in results if isinstance(res, _Overflow)]
    if overflows:
        first = min(overflows, key=lambda e: (e.t, e.k))
        raise NumericOverflowError(first.k, first.t, first.value)
    xs = np.concatenate([res[0] for res in results])
    us = np.concatenate([res[1] for res in results])
    noise = np.concatenate([res[2] for res in results])
    return xs, us, noise


def simulate_rollouts(spec: DynamicsSpec, T: int, K: int, n: int, seed: int, workers: int = 1) -> RolloutBatch:
    """Draw ``n`` iid rollouts ``R_K`` ending at time ``T``."""
    if not (T >= K >= 1):
        raise ValueError(f"need T >= K >= 1, got T={T}, K={K}")
    if n < 1:
        raise ValueError("n must be >= 1")
    xs, us, noise = _run_chunks(spec, T, n, seed, None, workers)
    lo = T - K
    return RolloutBatch(
        states=xs[:, lo:],
        actions=us[:, lo:T],
        T=T,
        K=K,
        seed=seed,
        noise=noise[:, lo:],
        meta={"spec": spec.describe()},
    )


def simulate_do(spec: DynamicsSpec, T: int, u, n: int, seed: int, workers: int = 1) -> np.ndarray:
    """Draws of ``x_T`` under ``do(u_{T-1} := u)``; shares noise with ``simulate_rollouts``."""
    if T < 2:
        raise ValueError("interventional simulation needs T >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (spec.p,):
        raise SpecError(f"intervention has {u.size} entries, expected p={spec.p}")
    xs, _, _ = _run_chunks(spec, T, n, seed, (T - 1, u), workers)
    return xs[:, T]


@dataclass(frozen=True, eq=False)
class JointCovariance:
    t: int
    Sigma: np.ndarray

    def __post_init__(self) -> None:
        S = np.asarray(self.Sigma, dtype=float)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError(f"covariance must be square, got {S.shape}")
        scale = max(np.linalg.norm(S), 1e-300)
        if np.max(np.abs(S - S.T), initial=0.0) > 1e-10 * scale:
            raise ValueError("covariance is not symmetric within tolerance")
        S.setflags(write=False)
        object.__setattr__(self, "Sigma", S)


def covariance_recursion(sys: LinearSystem, t: int) -> JointCovariance:
    """``Sigma_t`` of ``(x_t, u_t)`` from zero initial state under unit isotropic shocks."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    J, M = sys.transition()
    MM = M @ M.T
    S = np.zeros_like(MM)
    for _ in range(t):
        S = J @ S @ J.T + MM
        S = (S + S.T) / 2
    return JointCovariance(t, S)


def covariance_closed_form(sys: LinearSystem, t: int) -> np.ndarray:
    """``sum_{k<t} J^k M M^T (J^k)^T`` by explicit powers."""
    if t < 1:
        raise ValueError(f"t must be >= 1, got {t}")
    J, M = sys.transition()
    out = np.zeros((J.shape[0], J.shape[0]))
    for k in range(t):
        JkM = np.linalg.matrix_power(J, k) @ M
        out += JkM @ JkM.T
    return out
