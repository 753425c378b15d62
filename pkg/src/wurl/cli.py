"""Command-line entry point: ``wurl {estimate,train,incremental,eval,hierarchy,gradcheck}``.

Settings come from a YAML run config. Command-line flags override the file,
and ``WURL_*`` environment variables sit between the two: a flag beats its
variable, which beats the file.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np
import yaml

from . import __version__
from .envs import ACT_DIM, OBS_DIM, EnvConfig, load_env_config, random_policy
from .errors import CheckpointError, ConfigError
from .estimate import EstimateConfig, format_report, run_study
from .evaluation import diversity_report, evaluation_archives, export_trajectories
from .gradcheck import format_results, run_gradchecks
from .hrl import PpoConfig, build_meta, evaluate_meta, meta_train, random_meta_returns
from .nn import load_checkpoint, save_checkpoint
from .ot_primal import load_batch, projected_wd, save_batch
from .sac import Actor
from .seeding import make_rng
from .train import (PolicySet, TrainConfig, Trainer, load_training_state, save_training_state,
                    train_incremental)

log = logging.getLogger("wurl")

KINDS = ("estimate", "train", "incremental", "eval", "hierarchy", "gradcheck")
ENV_PREFIX = "WURL_"
# flag name -> (environment variable, type)
OVERRIDES = {
    "config": ("CONFIG", str),
    "seed": ("SEED", int),
    "out": ("OUT", str),
    "policies": ("POLICIES", int),
    "mode": ("MODE", str),
    "projections": ("PROJECTIONS", int),
}

DEFAULTS = {
    "seed": 0,
    "out": "runs/latest",
    "env": "freerun",
    "checkpoint_every": 200,
    "train": {},
    "eval": {"source": "run", "run": None, "episodes": 10, "export_episodes": 3,
             "projections": 32, "discriminator_epochs": 30, "n_policies": 10},
    "incremental": {"parent": None, "stages": 7, "episodes_per_stage": 150},
    "hierarchy": {"env": "freerun_nav", "subpolicies": None, "H": 10, "iterations": 200,
                  "eval_episodes": 20, "ppo": {}},
    "estimate": {},
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    kind: str
    seed: int = 0
    out: str = "runs/latest"
    env: EnvConfig = field(default_factory=EnvConfig)
    checkpoint_every: int = 200
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: dict = field(default_factory=dict)
    incremental: dict = field(default_factory=dict)
    hierarchy: dict = field(default_factory=dict)
    estimate: EstimateConfig = field(default_factory=EstimateConfig)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "out": self.out, "env": self.env.to_dict(),
                "checkpoint_every": self.checkpoint_every, "train": self.train.to_dict(),
                "eval": self.eval, "incremental": self.incremental, "hierarchy": self.hierarchy,
                "estimate": self.estimate.to_dict()}


def build_config(kind: str, data: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve defaults, file contents and overrides into a validated ``RunConfig``."""
    if kind not in KINDS:
        raise ConfigError(f"unknown command {kind!r}")
    data = _merge(DEFAULTS, data or {})
    unknown = set(data) - set(DEFAULTS) - {"kind"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("seed", "out"):
            data[key] = value
        elif key == "policies":
            data["train"]["n_policies"] = value
            data["eval"]["n_policies"] = value
        elif key == "mode":
            data["train"]["mode"] = value
        elif key == "projections":
            data["train"]["projections"] = value
            data["eval"]["projections"] = value
            data["estimate"]["projections"] = value
    try:
        cfg = RunConfig(
            kind=kind,
            seed=int(data["seed"]),
            out=str(data["out"]),
            env=load_env_config(data["env"]),
            checkpoint_every=int(data["checkpoint_every"]),
            train=TrainConfig.from_dict(data["train"]),
            eval=data["eval"],
            incremental=data["incremental"],
            hierarchy=data["hierarchy"],
            estimate=EstimateConfig(**data["estimate"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError, FileNotFoundError) as exc:
        raise ConfigError(f"invalid run config: {exc}") from exc
    if kind == "train" and cfg.train.n_policies < 2:
        raise ConfigError("training needs at least two policies")
    if cfg.eval["source"] not in ("run", "random", "untrained"):
        raise ConfigError("eval.source must be 'run', 'random' or 'untrained'")
    return cfg


def load_config_file(path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


# ---------------------------------------------------------------- run directory


class RunDir:
    """Output directory of one command; tracks written files for the manifest."""

    def __init__(self, path, cfg: RunConfig):
        self.path = os.path.abspath(path)
        self.cfg = cfg
        self.timings: dict[str, float] = {}
        self.parent: str | None = None
        os.makedirs(self.path, exist_ok=True)

    def file(self, *parts) -> str:
        p = os.path.join(self.path, *parts)
        os.makedirs(os.path.dirname(p), exist_ok=True)
        return p

    def write_text(self, rel: str, text: str) -> str:
        p = self.file(rel)
        tmp = p + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, p)
        return p

    def write_config(self) -> None:
        self.write_text("config.yaml", yaml.safe_dump(self.cfg.to_dict(), sort_keys=True))

    def metrics_writer(self, name: str = "metrics.jsonl", keep: list[dict] | None = None):
        """Line-delimited record sink; ``keep`` rewrites already-logged records first (resume)."""
        fh = open(self.file(name), "w")
        for rec in keep or []:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
        fh.flush()

        def write(rec: dict) -> None:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
        write.close = fh.close  # type: ignore[attr-defined]
        return write

    def write_manifest(self) -> str:
        files = []
        for root, _, names in os.walk(self.path):
            for name in sorted(names):
                full = os.path.join(root, name)
                rel = os.path.relpath(full, self.path)
                if rel == "manifest.json" or rel.endswith(".tmp"):
                    continue
                with open(full, "rb") as fh:
                    digest = hashlib.sha256(fh.read()).hexdigest()
                files.append({"path": rel, "bytes": os.path.getsize(full), "sha256": digest})
        files.sort(key=lambda f: f["path"])
        manifest = {"version": __version__, "kind": self.cfg.kind, "config": self.cfg.to_dict(),
                    "parent": self.parent, "files": files, "timings": self.timings}
        return self.write_text("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- policy persistence


def save_actors(path, actors: list[Actor], frozen=None) -> None:
    save_checkpoint(path, {f"policy{i:02d}": a.net for i, a in enumerate(actors)},
                    meta={"a_max": actors[0].a_max, "frozen": list(frozen or [])})


def load_actors(path) -> list[Actor]:
    nets, _, meta = load_checkpoint(path)
    actors = []
    for name in sorted(nets):
        net = nets[name]
        actor = Actor(OBS_DIM, ACT_DIM, meta.get("a_max", 0.1), tuple(net.sizes[1:-1]), init="zeros")
        actor.net.load_from(net)
        actors.append(actor)
    if not actors:
        raise CheckpointError(f"{path}: no policies stored")
    return actors


def save_archives(rd: RunDir, archives) -> None:
    for i, a in enumerate(archives):
        save_batch(rd.file("archives", f"policy{i:02d}.txt"), a)


def load_archives(run_dir) -> list[np.ndarray]:
    d = os.path.join(run_dir, "archives")
    if not os.path.isdir(d):
        raise CheckpointError(f"{run_dir}: no archives directory")
    names = sorted(n for n in os.listdir(d) if n.endswith(".txt"))
    return [load_batch(os.path.join(d, n)) for n in names]


def deterministic_policies(actors):
    return [a.policy(deterministic=True) for a in actors]


def write_diversity(rd: RunDir, cfg: RunConfig, policies, label: str = "report.txt"):
    ev = cfg.eval
    t0 = time.perf_counter()
    archives = evaluation_archives(policies, cfg.env, ev["episodes"], seed=cfg.seed)
    save_archives(rd, archives)
    report = diversity_report(archives, ev["projections"], cfg.seed, ev["discriminator_epochs"])
    rd.write_text(label, report.to_text())
    if ev["export_episodes"]:
        export_trajectories(policies, cfg.env, ev["export_episodes"], rd.file("trajectories"), seed=cfg.seed)
    rd.timings["evaluate"] = time.perf_counter() - t0
    return report


# ---------------------------------------------------------------- commands


def cmd_estimate(cfg: RunConfig) -> RunDir:
    rd = RunDir(cfg.out, cfg)
    rd.write_config()
    write = rd.metrics_writer()
    t0 = time.perf_counter()
    records, timings = run_study(cfg.estimate, cfg.seed, on_record=write)
    write.close()
    rd.timings["estimate"] = time.perf_counter() - t0
    rd.write_text("report.txt", format_report(cfg.estimate, records))
    rd.write_text("timings.json", json.dumps(timings, indent=1) + "\n")
    rd.write_manifest()
    return rd


def run_training(cfg: RunConfig, rd: RunDir, resume: bool = False) -> Trainer:
    state_path = rd.file("checkpoints", "state.npz")
    if resume and os.path.exists(state_path):
        trainer = load_training_state(state_path)
        log.info("resuming from episode %d", trainer.episode)
    else:
        pset = PolicySet(cfg.train.n_policies, cfg.env, cfg.train, seed=cfg.seed)
        trainer = Trainer(pset)
    write = rd.metrics_writer(keep=trainer.records)
    trainer.on_record = write
    t0 = time.perf_counter()
    while trainer.episode < cfg.train.episodes:
        chunk = min(cfg.checkpoint_every, cfg.train.episodes - trainer.episode)
        trainer.run(chunk)
        save_training_state(state_path, trainer)
    write.close()
    rd.timings["train"] = time.perf_counter() - t0
    save_actors(rd.file("checkpoints", "actors.npz"), [a.actor for a in trainer.pset.agents])
    return trainer


def cmd_train(cfg: RunConfig, resume: bool = False) -> RunDir:
    rd = RunDir(cfg.out, cfg)
    rd.write_config()
    trainer = run_training(cfg, rd, resume)
    write_diversity(rd, cfg, deterministic_policies([a.actor for a in trainer.pset.agents]))
    rd.write_manifest()
    return rd


def _incremental_start(cfg: RunConfig) -> tuple[PolicySet, str | None]:
    tcfg = copy.deepcopy(cfg.train)
    tcfg.mode = "apwd"
    parent = cfg.incremental.get("parent")
    if parent is None:
        # no signal exists for a lone policy, so the seed policy is an untrained one
        pset = PolicySet(1, cfg.env, tcfg, seed=cfg.seed)
        pset.freeze(0)
        return pset, None
    parent = os.path.abspath(parent)
    actors = load_actors(os.path.join(parent, "checkpoints", "actors.npz"))
    archives = load_archives(parent)
    if len(archives) != len(actors):
        raise CheckpointError(f"{parent}: {len(actors)} policies but {len(archives)} archives")
    pset = PolicySet(len(actors), cfg.env, tcfg, seed=cfg.seed)
    for i, (agent, actor) in enumerate(zip(pset.agents, actors)):
        agent.actor.net.load_from(actor.net)
        pset.freeze(i, [archives[i]])
    return pset, parent


def cmd_incremental(cfg: RunConfig) -> RunDir:
    rd = RunDir(cfg.out, cfg)
    rd.write_config()
    pset, rd.parent = _incremental_start(cfg)
    write = rd.metrics_writer()
    stages = rd.metrics_writer("stages.jsonl")
    t0 = time.perf_counter()
    K = cfg.train.projections
    for _ in range(int(cfg.incremental["stages"])):
        before = pset.hashes()
        pset, _ = train_incremental(pset, int(cfg.incremental["episodes_per_stage"]), on_record=write)
        new = len(pset) - 1
        S = pset.features(pset.archive_states(new))
        dists = [projected_wd(S, pset.features(pset.archive_states(j)), K, make_rng(cfg.seed, "stage-eval", new, j))
                 for j in range(new)]
        stages({"stage": new, "min_wd_to_archive": float(min(dists)),
                "frozen_unchanged": pset.hashes()[:new] == before})
    write.close()
    stages.close()
    rd.timings["train"] = time.perf_counter() - t0
    save_actors(rd.file("checkpoints", "actors.npz"), [a.actor for a in pset.agents], pset.frozen)
    save_archives(rd, [pset.archive_states(i) for i in range(len(pset))])
    report = diversity_report([pset.archive_states(i) for i in range(len(pset))], cfg.eval["projections"],
                              cfg.seed, cfg.eval["discriminator_epochs"])
    rd.write_text("report.txt", report.to_text())
    rd.write_manifest()
    return rd


def eval_policies(cfg: RunConfig):
    ev = cfg.eval
    if ev["source"] == "random":
        return [random_policy(cfg.env.a_max) for _ in range(ev["n_policies"])]
    if ev["source"] == "untrained":
        rng = make_rng(cfg.seed, "untrained")
        return [Actor(OBS_DIM, ACT_DIM, cfg.env.a_max, cfg.train.sac.hidden, rng=rng).policy()
                for _ in range(ev["n_policies"])]
    if not ev.get("run"):
        raise ConfigError("eval.source 'run' needs eval.run to point at a run directory")
    return deterministic_policies(load_actors(os.path.join(ev["run"], "checkpoints", "actors.npz")))


def cmd_eval(cfg: RunConfig) -> RunDir:
    rd = RunDir(cfg.out, cfg)
    rd.write_config()
    policies = eval_policies(cfg)
    if cfg.eval["source"] == "run":
        rd.parent = os.path.abspath(cfg.eval["run"])
    write_diversity(rd, cfg, policies)
    rd.write_manifest()
    return rd


def cmd_hierarchy(cfg: RunConfig) -> RunDir:
    rd = RunDir(cfg.out, cfg)
    rd.write_config()
    hc = cfg.hierarchy
    if hc.get("subpolicies"):
        rd.parent = os.path.abspath(hc["subpolicies"])
        actors = load_actors(os.path.join(rd.parent, "checkpoints", "actors.npz"))
    else:
        sub = RunDir(rd.file("subpolicies"), cfg)
        actors = [a.actor for a in run_training(cfg, sub).pset.agents]
    nav = load_env_config(hc["env"])
    subs = deterministic_policies(actors)
    menv, policy = build_meta(nav, subs, int(hc["H"]), PpoConfig.from_dict(hc.get("ppo") or {}), cfg.seed)
    t0 = time.perf_counter()
    baseline = random_meta_returns(menv, int(hc["eval_episodes"]), make_rng(cfg.seed, "random-meta"))
    write = rd.metrics_writer()
    meta_train(policy, menv, int(hc["iterations"]), on_record=write)
    write.close()
    trained = evaluate_meta(policy, menv, int(hc["eval_episodes"]))
    rd.timings["hierarchy"] = time.perf_counter() - t0
    save_checkpoint(rd.file("checkpoints", "meta.npz"), {"pi": policy.pi, "value": policy.value})
    lines = [f"goals {json.dumps(nav.goals)}",
             f"random_meta_mean {float(baseline.mean())!r}",
             f"random_meta_std {float(baseline.std())!r}",
             f"trained_meta_mean {float(trained.mean())!r}",
             f"trained_meta_std {float(trained.std())!r}",
             f"improvement {float(trained.mean() - baseline.mean())!r}"]
    rd.write_text("report.txt", "\n".join(lines) + "\n")
    rd.write_manifest()
    return rd


def cmd_gradcheck(cfg: RunConfig, perturb: str | None = None) -> tuple[RunDir, bool]:
    rd = RunDir(cfg.out, cfg)
    results = run_gradchecks(perturb=perturb, seed=cfg.seed)
    text = format_results(results)
    rd.write_text("gradcheck.txt", text)
    sys.stdout.write(text)
    rd.write_manifest()
    return rd, all(r.passed for r in results)


# ---------------------------------------------------------------- argument parsing


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wurl", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output run directory")
        p.add_argument("--policies", type=int, help="number of policies")
        p.add_argument("--mode", choices=["tf1", "tf2", "pwd", "apwd"])
        p.add_argument("--projections", type=int, help="random directions K")
        p.add_argument("-v", "--verbose", action="store_true")
        if kind == "train":
            p.add_argument("--resume", action="store_true", help="continue from checkpoints/state.npz")
        if kind == "gradcheck":
            p.add_argument("--perturb", help="scale one check's analytic gradient (negative control)")
    return parser


def resolve_overrides(args: argparse.Namespace, environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out = {}
    for name, (var, typ) in OVERRIDES.items():
        value = getattr(args, name, None)
        if value is None and ENV_PREFIX + var in environ:
            raw = environ[ENV_PREFIX + var]
            try:
                value = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"{ENV_PREFIX + var}={raw!r} is not a valid {typ.__name__}") from exc
        out[name] = value
    return out


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = resolve_overrides(args)
        data = load_config_file(overrides.pop("config")) if overrides.get("config") else {}
        cfg = build_config(args.kind, data, overrides)
        if args.kind == "estimate":
            rd = cmd_estimate(cfg)
        elif args.kind == "train":
            rd = cmd_train(cfg, resume=args.resume)
        elif args.kind == "incremental":
            rd = cmd_incremental(cfg)
        elif args.kind == "eval":
            rd = cmd_eval(cfg)
        elif args.kind == "hierarchy":
            rd = cmd_hierarchy(cfg)
        else:
            rd, ok = cmd_gradcheck(cfg, args.perturb)
            if not ok:
                print(f"gradient check failed; see {rd.path}/gradcheck.txt", file=sys.stderr)
                return 1
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(rd.path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
