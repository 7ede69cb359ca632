"""Command-line harness: simulate, baselines, online, compare, tune.

Every command reads a JSON run configuration.  Outputs are first written
under a ``.partial`` suffix and only renamed into place once complete, so a
failed run leaves its partial files quarantined next to (never over) valid
results.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .auv_dynamics import (DOF_NAMES, ExcitationPlan, SimulationError, generate_dataset,
                           paper_configs, read_dataset, write_dataset)
from .evaluation import (DEFAULT_GRID, baseline_matrix, calibrate_kernel, compare_strategies,
                         online_run, stratified_split, SplitSpec, tune)
from .online_learner import STRATEGIES
from .svr_core import Hyperparams

log = logging.getLogger("auvsvr")

QUARANTINE_SUFFIX = ".partial"
EXIT_OK, EXIT_ERROR, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass
class SimulationSection:
    duration: float = 10_000.0
    sample_rate: float = 1.0
    noise: float = 0.02
    dt: float = 0.01
    amplitude: float = 15.0
    period_range: tuple[float, float] = (20.0, 70.0)


@dataclass
class SeedSection:
    simulation: int = 0
    split: int = 0
    validation: int = 0


@dataclass
class TuneSection:
    epsilon: tuple[float, ...] = DEFAULT_GRID["epsilon"]
    cost: tuple[float, ...] = DEFAULT_GRID["cost"]
    gamma: tuple[float, ...] = DEFAULT_GRID["gamma"]
    max_train: int = 2000
    max_val: int = 1000


@dataclass
class RunConfig:
    dataset: Path = Path("dataset.csv")
    output_dir: Path = Path("runs")
    strategy: str = "kde"
    capacity: int = 900
    eval_every: int = 10
    val_cap: int = 500
    train_fraction: float = 0.8
    hyperparams: dict[str, Hyperparams] = field(default_factory=dict)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    seeds: SeedSection = field(default_factory=SeedSection)
    tune: TuneSection = field(default_factory=TuneSection)

    def hps(self) -> list[Hyperparams]:
        return [replace(self.hyperparams[name], buffer_size=self.capacity) for name in DOF_NAMES]


def _section(cls, raw, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a mapping")
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def default_hyperparams() -> dict[str, Hyperparams]:
    """Values found by ``tune`` on the default simulated dataset (config 1)."""
    return {
        "surge": Hyperparams(epsilon=0.001, cost=1.0, gamma=1.0, k=10.0),
        "sway": Hyperparams(epsilon=0.001, cost=1.0, gamma=1.0, k=10.0),
        "yaw": Hyperparams(epsilon=0.001, cost=10.0, gamma=1.0, k=1.0),
    }


def _load_hyperparams(raw, base_dir: Path) -> dict[str, Hyperparams]:
    if isinstance(raw, str):
        # a path to a report written by `tune`
        path = (base_dir / raw).resolve()
        if not path.is_file():
            raise ConfigError(f"hyperparameter file not found: {path}")
        raw = json.loads(path.read_text())["hyperparams"]
    if not isinstance(raw, dict):
        raise ConfigError("hyperparams must be a mapping or a path")
    unknown = sorted(set(raw) - set(DOF_NAMES))
    if unknown:
        raise ConfigError(f"unknown key(s) in hyperparams: {', '.join(unknown)}")
    out = default_hyperparams()
    for name, values in raw.items():
        defaults = asdict(out[name])
        names = set(defaults)
        bad = sorted(set(values) - names)
        if bad:
            raise ConfigError(f"unknown key(s) in hyperparams.{name}: {', '.join(bad)}")
        try:
            out[name] = Hyperparams(**{**defaults, **values})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"hyperparams.{name}: {exc}") from exc
    return out


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    names = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {path}: {', '.join(unknown)}")
    base = path.resolve().parent
    cfg = RunConfig(
        dataset=base / raw.get("dataset", "dataset.csv"),
        output_dir=base / raw.get("output_dir", "runs"),
        hyperparams=_load_hyperparams(raw.get("hyperparams", {}), base),
        simulation=_section(SimulationSection, raw.get("simulation", {}), "simulation"),
        seeds=_section(SeedSection, raw.get("seeds", {}), "seeds"),
        tune=_section(TuneSection, raw.get("tune", {}), "tune"),
        **{k: raw[k] for k in ("strategy", "capacity", "eval_every", "val_cap", "train_fraction") if k in raw},
    )
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.strategy not in STRATEGIES:
        raise ConfigError(f"strategy must be one of {STRATEGIES}, got {cfg.strategy!r}")
    for name in ("capacity", "eval_every", "val_cap"):
        value = getattr(cfg, name)
        if not isinstance(value, int) or value < 1:
            raise ConfigError(f"{name} must be a positive integer, got {value!r}")
    if not 0 < cfg.train_fraction < 1:
        raise ConfigError("train_fraction must lie in (0, 1)")


@contextlib.contextmanager
def staged(path: Path):
    """Yield a quarantine path; promote it to ``path`` only if the block succeeds."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + QUARANTINE_SUFFIX)
    yield tmp
    os.replace(tmp, path)


def _write_json(path: Path, payload) -> None:
    with staged(path) as tmp:
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _load_split(cfg: RunConfig):
    if not cfg.dataset.is_file():
        raise FileNotFoundError(f"dataset not found: {cfg.dataset} (run `simulate` first)")
    ds = read_dataset(cfg.dataset)
    train, val = stratified_split(ds, SplitSpec(cfg.train_fraction, cfg.seeds.split))
    return train, val, calibrate_kernel(train)


# subcommands

def cmd_simulate(cfg: RunConfig, out: Path | None) -> dict:
    sim = cfg.simulation
    plan = ExcitationPlan(amplitude=sim.amplitude, rng_seed=cfg.seeds.simulation,
                          period_range=tuple(sim.period_range))
    ds = generate_dataset([(c, sim.duration) for c in paper_configs()], plan, sim.sample_rate,
                          sim.noise, cfg.seeds.simulation, sim.dt)
    target = out / "dataset.csv" if out is not None else cfg.dataset
    with staged(target) as tmp:
        write_dataset(ds, tmp)
    counts = ds.counts()
    for label, n in counts.items():
        print(f"config {label}: {n} rows")
    print(f"wrote {len(ds)} rows to {target}")
    return {"rows": len(ds), "counts": counts}


def cmd_baselines(cfg: RunConfig, out: Path) -> dict:
    train, val, kernel = _load_split(cfg)
    bm = baseline_matrix(train, val, cfg.hps(), kernel)
    report = bm.to_dict()
    _write_json(out / "baselines.json", report)
    print("mean R2 (rows: trained on, columns: tested on)")
    print("      " + "".join(f"{lab:>9d}" for lab in bm.labels))
    for i, lab in enumerate(bm.labels):
        flag = "" if bm.converged[i].all() else "  (solver did not converge)"
        print(f"{lab:>6d}" + "".join(f"{v:9.4f}" for v in bm.mean[i]) + flag)
    return report


def _checkpoint_writer(out: Path, strategy: str):
    def save(label, bank):
        for name, learner in zip(DOF_NAMES, bank):
            _write_json(out / "checkpoints" / f"{strategy}_config{label}_{name}.json", learner.to_dict())
    return save


def cmd_online(cfg: RunConfig, out: Path) -> dict:
    train, val, kernel = _load_split(cfg)
    trace = online_run(train, val, cfg.hps(), kernel, cfg.strategy, cfg.eval_every,
                       val_cap=cfg.val_cap, val_seed=cfg.seeds.validation,
                       on_segment_end=_checkpoint_writer(out, cfg.strategy))
    with staged(out / f"trace_{cfg.strategy}.csv") as tmp:
        trace.write_csv(tmp)
    report = {
        "strategy": cfg.strategy,
        "switch_steps": trace.switch_steps,
        "segment_scores": {str(k): dict(zip(DOF_NAMES, v)) | {"mean": float(np.mean(v))}
                           for k, v in trace.segment_scores.items()},
    }
    _write_json(out / f"online_{cfg.strategy}.json", report)
    for label, scores in trace.segment_scores.items():
        print(f"end of config {label}: " + " ".join(f"{n}={s:.4f}" for n, s in zip(DOF_NAMES, scores))
              + f" mean={np.mean(scores):.4f}")
    return report


def cmd_compare(cfg: RunConfig, out: Path) -> dict:
    train, val, kernel = _load_split(cfg)
    cmp = compare_strategies(train, val, cfg.hps(), kernel, cfg.eval_every,
                             val_cap=cfg.val_cap, val_seed=cfg.seeds.validation)
    for trace in (cmp.kde, cmp.fifo):
        with staged(out / f"trace_{trace.strategy}.csv") as tmp:
            trace.write_csv(tmp)
    _write_json(out / "compare_summary.json", cmp.summary)
    if cmp.summary["forgetting_inactive"]:
        print("forgetting inactive: capacity never exceeded, traces are identical")
    for label, s in cmp.summary["segments"].items():
        print(f"config {label}: kde {s['kde_mean']:.4f} +- {s['kde_std']:.4f}   "
              f"fifo {s['fifo_mean']:.4f} +- {s['fifo_std']:.4f}")
    return cmp.summary


def cmd_tune(cfg: RunConfig, out: Path) -> dict:
    train, val, kernel = _load_split(cfg)
    first = int(train.config[0])
    t = cfg.tune
    grid = {"epsilon": t.epsilon, "cost": t.cost, "gamma": t.gamma}
    best, table = tune(train.subset(train.config == first), val[first], kernel, grid,
                       base=[cfg.hyperparams[n] for n in DOF_NAMES], max_train=t.max_train,
                       max_val=t.max_val, seed=cfg.seeds.split)
    report = {
        "hyperparams": {n: asdict(hp) for n, hp in zip(DOF_NAMES, best)},
        "scores": {n: [{"epsilon": hp.epsilon, "cost": hp.cost, "gamma": hp.gamma, "r2": r2}
                       for hp, r2 in rows] for n, rows in zip(DOF_NAMES, table)},
    }
    _write_json(out / "tuned.json", report)
    print(f"{'':12s}{'surge':>10s}{'sway':>10s}{'yaw':>10s}")
    for key in ("epsilon", "cost", "gamma", "buffer_size", "k", "a", "b", "xi"):
        print(f"{key:12s}" + "".join(f"{getattr(hp, key):>10g}" for hp in best))
    return report


COMMANDS = {
    "simulate": cmd_simulate,
    "baselines": cmd_baselines,
    "online": cmd_online,
    "compare": cmd_compare,
    "tune": cmd_tune,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auvsvr", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed", type=int, help="override every seed in the configuration")
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--eval-every", type=int)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seeds = SeedSection(args.seed, args.seed, args.seed)
        if args.strategy is not None:
            cfg.strategy = args.strategy
        if args.eval_every is not None:
            cfg.eval_every = args.eval_every
        validate(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out) if args.out else None
    try:
        if args.command == "simulate":
            cmd_simulate(cfg, out)
        else:
            COMMANDS[args.command](cfg, out or cfg.output_dir)
    except (OSError, ValueError, SimulationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
