"""``steerkit`` command line.

Options come from built-in defaults, then an optional ``--config`` file (TOML,
or a previously written JSON artifact for replay), then flags.  Every artifact
embeds the merged config so it can be regenerated.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any

from . import __version__
from .dynamics import GaussianNoise, LinearSystem, covariance_recursion, simulate_rollouts
from .errors import SteerkitError
from .estimators import (
    Discretization,
    LinearResidualizer,
    adjustment_estimate,
    dml_estimate,
    ped_from_adjustment,
    two_stage_estimate,
)
from .evaluation import (
    bootstrap,
    make_estimator,
    overlap_sweep,
    sliding_window,
    write_overlap_csv,
    write_tidy_csv,
)
from .identifiability import check_full_row_rank_action, spectrum
from .ingest import ingest_csv
from .io import read_batch, write_batch, write_json

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("steerkit")

OUTPUT_DIR_ENV = "STEERKIT_OUTPUT_DIR"
COMMANDS = ("simulate", "identify", "spectrum", "estimate", "bootstrap", "overlap", "ped")

CASE_STUDY_STATE_EDGES = [[14.539, 15.014, 15.837]]
CASE_STUDY_ACTION_EDGES = [[-0.479, 0.131, 0.683]]

_SERIES_DEFAULTS = {
    "series": None,
    "action": "AveragePrice",
    "state": "Total Volume",
    "time": "Date",
    "group": None,
    "groups": None,
    "combine": "concatenate",
    "log_transform": True,
    "state_edges": CASE_STUDY_STATE_EDGES,
    "action_edges": CASE_STUDY_ACTION_EDGES,
}
_SYSTEM_DEFAULTS = {"system": None, "random_system": None, "wishart": None}

DEFAULTS: dict[str, dict[str, Any]] = {
    "simulate": {**_SYSTEM_DEFAULTS, "T": 3, "K": 2, "n": 1000, "seed": None,
                 "noise_scales": [1.0, 1.0, 0.0], "workers": 1, "out": "rollouts.csv"},
    "identify": {**_SYSTEM_DEFAULTS, "M": [2, 3], "rel_tol": 1e-10, "out": "identify.json"},
    "spectrum": {**_SYSTEM_DEFAULTS, "t_max": 6, "rel_tol": 1e-10, "out": "spectrum.csv"},
    "estimate": {**_SERIES_DEFAULTS, "method": "two-stage", "input": None, "K": 1, "u": None,
                 "mode": "strict", "split_seed": 0, "residualizer": "ols", "out": "estimate.json"},
    "bootstrap": {**_SERIES_DEFAULTS, "K_list": [1, 3, 5, 7, 9], "estimators": ["adjustment", "lr-dml"],
                  "replicates": 40, "seed": None, "mode": "zero-fill", "split_seed": 0, "workers": 1,
                  "out": "bootstrap.json"},
    "overlap": {**_SERIES_DEFAULTS, "K_list": [1, 3, 5, 7, 9], "u_bins": {"High": 1, "Low": 0},
                "out": "overlap.csv"},
    "ped": {**_SERIES_DEFAULTS, "K": 1, "mode": "strict", "split_seed": 0, "out": "ped.json"},
}

STOCHASTIC = {"simulate", "bootstrap"}
_NOT_EMBEDDED = {"out", "workers"}


class ConfigError(SteerkitError):
    code = "config_error"
    exit_status = 8


# --------------------------------------------------------------------------- parsing


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _add_system(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group()
    g.add_argument("--system", help="JSON file with matrices A, B, C, D")
    g.add_argument("--random-system", nargs=3, type=int, metavar=("D", "P", "SEED"))
    g.add_argument("--wishart", nargs=4, type=int, metavar=("D", "RANK_C", "N_W", "SEED"),
                   help="square system with Gram-type matrices and rank-deficient C")


def _add_series(p: argparse.ArgumentParser) -> None:
    p.add_argument("--series", help="time-series CSV")
    p.add_argument("--action", help="action column (comma separated for vectors)")
    p.add_argument("--state", help="state column (comma separated for vectors)")
    p.add_argument("--time", help="time column")
    p.add_argument("--group", help="column splitting the file into series (e.g. region)")
    p.add_argument("--groups", type=lambda s: s.split(","), help="groups to keep, in order")
    p.add_argument("--combine", choices=["concatenate", "mean"])
    p.add_argument("--log-transform", dest="log_transform", action="store_true", default=None)
    p.add_argument("--no-log-transform", dest="log_transform", action="store_false")
    p.add_argument("--state-edges", action="append", type=_floats, help="bin edges per state coordinate")
    p.add_argument("--action-edges", action="append", type=_floats, help="bin edges per action coordinate")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="steerkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"steerkit {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="TOML config, or a JSON artifact to replay")
        p.add_argument("--out", help=f"output path (relative paths resolve against ${OUTPUT_DIR_ENV})")
        return p

    p = command("simulate", "simulate linear-system rollouts to CSV + JSON")
    _add_system(p)
    p.add_argument("--T", type=int)
    p.add_argument("--K", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise-scales", type=_floats, help="sigma_1,sigma_2,... (zero after the list)")
    p.add_argument("--workers", type=int)

    p = command("identify", "rank test of [DC, ..., D^{M-1}C]")
    _add_system(p)
    p.add_argument("--M", type=_ints, help="span lengths, comma separated")
    p.add_argument("--rel-tol", type=float)

    p = command("spectrum", "eigenvalues of the joint covariance Sigma_t")
    _add_system(p)
    p.add_argument("--t-max", type=int)
    p.add_argument("--rel-tol", type=float)

    p = command("estimate", "estimate steerability with one method")
    p.add_argument("--method", choices=["two-stage", "adjustment", "dml"])
    p.add_argument("--input", help="rollout CSV written by `simulate`")
    _add_series(p)
    p.add_argument("--K", type=int)
    p.add_argument("--u", type=_floats, help="queried action for the adjustment method")
    p.add_argument("--mode", choices=["strict", "zero-fill"])
    p.add_argument("--split-seed", type=int)
    p.add_argument("--residualizer", choices=["ols", "rf"])

    p = command("bootstrap", "bootstrap PED estimators across window lengths")
    _add_series(p)
    p.add_argument("--K-list", type=_ints)
    p.add_argument("--estimators", type=lambda s: s.split(","))
    p.add_argument("--replicates", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=["strict", "zero-fill"])
    p.add_argument("--split-seed", type=int)
    p.add_argument("--workers", type=int)

    p = command("overlap", "undefined-strata table across window lengths")
    _add_series(p)
    p.add_argument("--K-list", type=_ints)

    p = command("ped", "price elasticity from the adjustment formula and LR-DML")
    _add_series(p)
    p.add_argument("--K", type=int)
    p.add_argument("--mode", choices=["strict", "zero-fill"])
    p.add_argument("--split-seed", type=int)
    return parser


def _load_config_file(path: str, command: str) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} is not readable")
    if p.suffix == ".json":
        data = json.loads(p.read_text())
        if data.get("command") != command:
            raise ConfigError(f"artifact {path} was written by {data.get('command')!r}, not {command!r}")
        return dict(data["config"])
    with open(p, "rb") as fh:
        data = tomllib.load(fh)
    return dict(data.get(command, data))


def resolve_config(command: str, args: argparse.Namespace | None = None, file_config: dict | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS[command]))
    if file_config:
        unknown = set(file_config) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown {command} options: {sorted(unknown)}")
        cfg.update(file_config)
    if args is not None:
        for key in cfg:
            value = getattr(args, key, None)
            if value is not None:
                cfg[key] = value
    for key in ("action", "state"):
        if isinstance(cfg.get(key), str) and "," in cfg[key]:
            cfg[key] = cfg[key].split(",")
    if command in STOCHASTIC and cfg.get("seed") is None:
        raise ConfigError(f"`{command}` needs an explicit --seed")
    return cfg


# --------------------------------------------------------------------------- helpers


def _out_path(cfg: dict) -> Path:
    out = Path(cfg["out"])
    if not out.is_absolute():
        out = Path(os.environ.get(OUTPUT_DIR_ENV, ".")) / out
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.exists() and not os.access(out, os.W_OK):
        raise ConfigError(f"cannot write {out}")
    return out


def _embedded(command: str, cfg: dict) -> dict:
    return {"command": command, "config": {k: v for k, v in cfg.items() if k not in _NOT_EMBEDDED}}


def _system(cfg: dict) -> LinearSystem:
    if cfg.get("system"):
        return LinearSystem.from_dict(json.loads(Path(cfg["system"]).read_text()))
    if cfg.get("random_system"):
        d, p, seed = cfg["random_system"]
        return LinearSystem.random(int(d), int(p), int(seed))
    if cfg.get("wishart"):
        d, rank_c, n_w, seed = cfg["wishart"]
        return LinearSystem.wishart(int(d), int(rank_c), int(n_w), int(seed))
    raise ConfigError("give one of --system, --random-system, --wishart")


def _series(cfg: dict):
    if not cfg.get("series"):
        raise ConfigError("--series is required")
    if not Path(cfg["series"]).is_file():
        raise ConfigError(f"series file {cfg['series']} is not readable")
    return ingest_csv(
        cfg["series"], cfg["action"], cfg["state"], time=cfg["time"], log_transform=cfg["log_transform"],
        group=cfg["group"], groups=cfg["groups"], combine=cfg["combine"],
    )


def _disc(cfg: dict) -> Discretization:
    return Discretization.from_edges(cfg["state_edges"], cfg["action_edges"])


def _emit(text: str) -> None:
    print(text)


# --------------------------------------------------------------------------- commands


def _simulate(cfg: dict, out: Path) -> None:
    sys_ = _system(cfg)
    noise = GaussianNoise(sys_.d, scale=list(cfg["noise_scales"]))
    batch = simulate_rollouts(sys_.to_spec(noise), cfg["T"], cfg["K"], cfg["n"], cfg["seed"],
                              workers=cfg.get("workers", 1))
    write_batch(batch, out, _embedded("simulate", cfg))
    _emit(f"wrote {batch.n} rollouts (d={batch.d}, p={batch.p}, T={batch.T}, K={batch.K}) to {out}")


def _identify(cfg: dict, out: Path) -> None:
    sys_ = _system(cfg)
    reports = [check_full_row_rank_action(sys_, M, cfg["rel_tol"]) for M in cfg["M"]]
    _emit(f"{'M':>3} {'rank':>6} {'needed':>6} {'sigma_min':>12}  verdict")
    for r in reports:
        smin = r.singular_values[-1] if r.singular_values else 0.0
        _emit(f"{r.M:>3} {r.rank_observed:>6} {r.rank_required:>6} {smin:>12.4g}  {r.verdict}")
    write_json(out, {**_embedded("identify", cfg), "reports": [r.to_dict() for r in reports]})


def _spectrum(cfg: dict, out: Path) -> None:
    sys_ = _system(cfg)
    reports = [spectrum(covariance_recursion(sys_, t), cfg["rel_tol"]) for t in range(1, cfg["t_max"] + 1)]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "index", "eigenvalue"])
        for r in reports:
            for i, v in enumerate(r.eigenvalues):
                w.writerow([r.t, i, repr(v)])
    summary = [{"t": r.t, "num_zero": r.num_zero, "full_rank": r.full_rank,
                "min_eigenvalue": r.eigenvalues[0], "max_eigenvalue": r.eigenvalues[-1]} for r in reports]
    write_json(out.with_suffix(".json"), {**_embedded("spectrum", cfg), "summary": summary})
    for s in summary:
        _emit(f"t={s['t']}: {s['num_zero']} zero eigenvalues, full_rank={s['full_rank']}")


def _residualizer(name: str, seed: int):
    if name == "ols":
        return LinearResidualizer()
    from sklearn.ensemble import RandomForestRegressor

    return RandomForestRegressor(n_estimators=100, min_samples_leaf=5, random_state=seed, n_jobs=1)


def _estimate(cfg: dict, out: Path) -> None:
    if cfg.get("input"):
        batch = read_batch(cfg["input"])
    else:
        batch = sliding_window(_series(cfg), cfg["K"])
    method = cfg["method"]
    if method == "two-stage":
        result = two_stage_estimate(batch).to_dict()
    elif method == "adjustment":
        if cfg.get("u") is None:
            raise ConfigError("--u is required for the adjustment method")
        result = adjustment_estimate(batch, _disc(cfg), cfg["u"], cfg["mode"]).to_dict()
    elif method == "dml":
        result = dml_estimate(batch, _residualizer(cfg["residualizer"], cfg["split_seed"]), cfg["split_seed"]).to_dict()
    else:
        raise ConfigError(f"unknown method {method!r}")
    write_json(out, {**_embedded("estimate", cfg), "estimate": result})
    _emit(json.dumps(result))


def _bootstrap(cfg: dict, out: Path) -> None:
    series = _series(cfg)
    disc = _disc(cfg)
    reports = []
    for K in cfg["K_list"]:
        for name in cfg["estimators"]:
            est = make_estimator(name, disc, cfg["mode"], cfg["split_seed"])
            rep = bootstrap(est, series, K, cfg["replicates"], cfg["seed"], disc=disc, workers=cfg.get("workers", 1))
            reports.append(rep)
            _emit(f"K={K} {rep.estimator_id}: estimate={rep.point_estimate} std={rep.std_dev} "
                  f"bias={rep.bias_vs_reference} failures={rep.failures}")
    write_json(out, {**_embedded("bootstrap", cfg), "reports": [r.to_dict() for r in reports]})
    write_tidy_csv(reports, out.with_suffix(".csv"))


def _overlap(cfg: dict, out: Path) -> None:
    rows = overlap_sweep(_series(cfg), cfg["K_list"], _disc(cfg), cfg["u_bins"])
    write_overlap_csv(rows, out)
    write_json(out.with_suffix(".json"), _embedded("overlap", cfg))
    for r in rows:
        est = "N/A" if r.estimate is None else f"{r.estimate:.2f}"
        _emit(f"K={r.K:<3} {r.treatment:<6} {est:>7}  {r.undefined_terms:>9}  {100 * r.undefined_mass:5.1f}%")


def _ped(cfg: dict, out: Path) -> None:
    batch = sliding_window(_series(cfg), cfg["K"])
    disc = _disc(cfg)
    result = {
        "adjustment": ped_from_adjustment(batch, disc, cfg["mode"]),
        "lr-dml": dml_estimate(batch, LinearResidualizer(), cfg["split_seed"]).ped,
        "n": batch.n,
    }
    write_json(out, {**_embedded("ped", cfg), "ped": result})
    _emit(json.dumps(result))


_HANDLERS = {
    "simulate": _simulate,
    "identify": _identify,
    "spectrum": _spectrum,
    "estimate": _estimate,
    "bootstrap": _bootstrap,
    "overlap": _overlap,
    "ped": _ped,
}


def run(command: str, config: dict, out: str | Path | None = None) -> int:
    """Run ``command`` with a resolved config; returns the exit status."""
    cfg = dict(config)
    if out is not None:
        cfg["out"] = str(out)
    cfg = resolve_config(command, file_config={k: v for k, v in cfg.items() if k in DEFAULTS[command]})
    _HANDLERS[command](cfg, _out_path(cfg))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        file_cfg = _load_config_file(args.config, args.command) if args.config else None
        cfg = resolve_config(args.command, args, file_cfg)
        _HANDLERS[args.command](cfg, _out_path(cfg))
    except SteerkitError as exc:
        print(json.dumps({"error": exc.code, "message": str(exc)}), file=sys.stderr)
        return exc.exit_status
    except (ValueError, OSError, KeyError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
