"""Experiment configs, run directories and the train/evaluate/analyze/report steps."""

from __future__ import annotations

import configparser
import dataclasses
import io
import json
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import __version__
from .agents.config import TrainConfig
from .agents.dqn import dqn_train
from .agents.evaluate import actor_critic_policy, episode_returns, q_policy
from .agents.ppo import ppo_train
from .agents.runlog import RunLog, read_runlog
from .autodiff import checkpoint, kernels
from .encoders import ActorCritic, EncoderSpec, EncoderSpecError, QNetwork
from .envs import GAMES, make_game, make_vector_env
from .envs.levels import LevelSet
from .metrics import load_constants, normalize_score

ENV_PREFIX = "ENCODERLAB_"
CONFIG_NAME = "config.ini"
CHECKPOINT_NAME = "checkpoint.impk"
RUNLOG_NAME = "runlog.jsonl"
MANIFEST_NAME = "manifest.json"
TRACKS = ("generalization", "efficiency")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    algo: str = "ppo"
    env: str = "shoal"
    encoder: str = "impoola"
    tau: int = 1
    base_channels: tuple[int, ...] = (16, 32, 32)
    track: str = "generalization"
    levels: int = 200
    level_seed: int = 0
    total_steps: int = 200_000
    seeds: tuple[int, ...] = (0, 1, 2)
    eval_every: int = 10_000
    eval_episodes: int = 100
    out_dir: str = "runs"
    kernels: str = "numpy"
    # dormant probe during training; 0 disables
    dormant_every: int = 0
    dormant_batch: int = 512
    # TrainConfig overrides from the [train] section, kept as strings until resolved
    train: dict = field(default_factory=dict)

    def validate(self) -> "ExperimentConfig":
        if self.algo not in ("ppo", "dqn"):
            raise ConfigError(f"algo must be ppo or dqn, got {self.algo!r}")
        if self.env not in GAMES:
            raise ConfigError(f"env must be one of {sorted(GAMES)}, got {self.env!r}")
        if self.track not in TRACKS:
            raise ConfigError(f"track must be one of {TRACKS}, got {self.track!r}")
        if self.kernels not in kernels.BACKENDS:
            raise ConfigError(f"kernels must be one of {kernels.BACKENDS}, got {self.kernels!r}")
        if self.track == "generalization" and self.levels < 1:
            raise ConfigError("the generalization track needs levels >= 1")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        try:
            self.encoder_spec()
        except EncoderSpecError as e:
            raise ConfigError(str(e)) from None
        self.train_config(self.seeds[0])
        return self

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec.parse(self.encoder, self.tau, base_channels=tuple(self.base_channels))

    def level_set(self) -> LevelSet:
        if self.track == "efficiency":
            return LevelSet.full(self.level_seed)
        return LevelSet.restricted(self.levels, self.level_seed)

    def train_config(self, seed: int) -> TrainConfig:
        kwargs = dict(algo=self.algo, total_steps=self.total_steps, seed=seed,
                      eval_every=self.eval_every, eval_episodes=self.eval_episodes)
        types = TrainConfig.fields()
        for key, raw in self.train.items():
            if key not in types or key in ("algo", "seed"):
                raise ConfigError(f"unknown [train] key {key!r}")
            kwargs[key] = _convert(raw, types[key], f"train.{key}")
        try:
            return TrainConfig(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"[train]: {e}") from None

    def run_name(self, seed: int) -> str:
        return f"{self.env}-{self.algo}-{self.encoder_spec().name}-{self.track}-s{seed}"

    def for_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seeds=(seed,), train=dict(self.train))

    # serialisation -------------------------------------------------------
    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        exp = {}
        for f in dataclasses.fields(self):
            if f.name == "train":
                continue
            value = getattr(self, f.name)
            exp[f.name] = ",".join(str(s) for s in value) if isinstance(value, tuple) else str(value)
        parser["experiment"] = exp
        parser["train"] = {k: str(v) for k, v in sorted(self.train.items())}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()


def _convert(raw, typ, where: str):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    typ = str(typ)
    try:
        if typ in ("bool", "<class 'bool'>"):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if "Optional" in typ and text.lower() in ("none", ""):
            return None
        if "int" in typ and "float" not in typ:
            return int(float(text)) if "e" in text.lower() else int(text)
        if "float" in typ:
            return float(text)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {typ}") from None
    return text


def load_config(path=None, overrides: Optional[Mapping[str, str]] = None,
                environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Read an INI file, then apply ``ENCODERLAB_<SECTION>_<KEY>`` variables, then ``overrides``.

    ``overrides`` keys are ``section.key`` (section defaults to experiment).
    """
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    for section in parser.sections():
        if section not in ("experiment", "train"):
            raise ConfigError(f"unknown config section [{section}]")
    values: dict[str, dict[str, str]] = {s: dict(parser[s]) if parser.has_section(s) else {}
                                         for s in ("experiment", "train")}
    environ = os.environ if environ is None else environ
    for name, value in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX) or name in (ENV_PREFIX + "KERNELS", ENV_PREFIX + "TORCH_THREADS"):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        section, _, key = rest.partition("_")
        if section in values and key:
            values[section][key] = value
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.rpartition(".")
        section = section or "experiment"
        if section not in values:
            raise ConfigError(f"unknown config section in override {dotted!r}")
        values[section][key] = value

    known = {f.name: f.type for f in dataclasses.fields(ExperimentConfig) if f.name != "train"}
    kwargs: dict = {}
    for key, raw in values["experiment"].items():
        if key not in known:
            raise ConfigError(f"unknown [experiment] key {key!r}")
        if key in ("seeds", "base_channels"):
            try:
                kwargs[key] = tuple(int(s) for s in str(raw).replace(" ", "").split(",") if s)
            except ValueError:
                raise ConfigError(f"experiment.{key}: cannot parse {raw!r}") from None
        else:
            kwargs[key] = _convert(raw, known[key], f"experiment.{key}")
    kwargs["train"] = values["train"]
    return ExperimentConfig(**kwargs).validate()


# ---------------------------------------------------------------------------
# building blocks


def build_network(cfg: ExperimentConfig, seed: int):
    num_actions = make_game(cfg.env).num_actions
    cls = ActorCritic if cfg.algo == "ppo" else QNetwork
    return cls(cfg.encoder_spec(), num_actions, seed=seed)


def eval_seed(seed: int, split: str) -> int:
    return 1_000_003 * (seed + 1) + (0 if split == "train" else 1)


def splits_for(cfg: ExperimentConfig) -> tuple[str, ...]:
    return ("train", "test") if cfg.track == "generalization" else ("test",)


def evaluate_network(net, cfg: ExperimentConfig, seed: int, step: int, splits: Sequence[str],
                     episodes: Optional[int] = None) -> list[dict]:
    """One eval record per split, scored on a fixed set of episodes."""
    episodes = cfg.eval_episodes if episodes is None else episodes
    act = actor_critic_policy(net) if cfg.algo == "ppo" else q_policy(net, 0.0)
    constants = load_constants()
    records = []
    for split in splits:
        rets = episode_returns(act, cfg.env, cfg.level_set(), split, episodes, eval_seed(seed, split))
        scores = [normalize_score(r, cfg.env, constants) for r in rets]
        records.append({"t": step, "kind": "eval", "env": cfg.env, "seed": seed, "split": split,
                        "algo": cfg.algo, "encoder": cfg.encoder_spec().name, "episodes": len(rets),
                        "return": float(np.mean(rets)), "norm_score": float(np.mean(scores))})
    return records


def collect_observations(net, cfg: ExperimentConfig, seed: int, n: int) -> np.ndarray:
    """``n`` frames visited by the current policy on training levels."""
    act = actor_critic_policy(net) if cfg.algo == "ppo" else q_policy(net, 0.0)
    venv = make_vector_env(cfg.env, 16, cfg.level_set(), base_seed=eval_seed(seed, "train") + 7)
    rng = np.random.default_rng([seed, 0x0B5])
    obs = venv.reset()
    frames = []
    while sum(len(f) for f in frames) < n:
        frames.append(obs)
        obs, _, _, _ = venv.step(act(obs, rng))
    return np.concatenate(frames)[:n]


def dormant_record(net, cfg: ExperimentConfig, seed: int, step: int) -> dict:
    from .probes import dormant_fractions

    report = dormant_fractions(net, collect_observations(net, cfg, seed, cfg.dormant_batch))
    return {"t": step, "kind": "dormant", "env": cfg.env, "seed": seed, "split": "train",
            "encoder": cfg.encoder_spec().name, **report.as_record()}


# ---------------------------------------------------------------------------
# commands


def train_run(cfg: ExperimentConfig, seed: int, out_dir=None, log_progress=None) -> Path:
    """Train one (env, encoder, seed) cell into its own run directory."""
    cfg = cfg.for_seed(seed).validate()
    tcfg = cfg.train_config(seed)
    run_dir = Path(out_dir or cfg.out_dir) / cfg.run_name(seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    for name in (RUNLOG_NAME, MANIFEST_NAME, CHECKPOINT_NAME):
        (run_dir / name).unlink(missing_ok=True)
    (run_dir / CONFIG_NAME).write_text(cfg.to_ini())
    kernels.set_backend(cfg.kernels)

    started = time.time()
    wall0 = time.perf_counter()
    net = build_network(cfg, seed)
    venv = make_vector_env(cfg.env, tcfg.num_envs, cfg.level_set(), base_seed=seed)
    splits = splits_for(cfg)

    def evaluate(network, step):
        return evaluate_network(network, cfg, seed, step, splits)

    with RunLog(run_dir / RUNLOG_NAME) as log:
        if cfg.algo == "ppo":
            next_probe = [cfg.dormant_every]

            def on_update(step):
                if log_progress:
                    log_progress(step, tcfg.total_steps)
                if cfg.dormant_every and step >= next_probe[0]:
                    log.write(dormant_record(net, cfg, seed, step))
                    while next_probe[0] <= step:
                        next_probe[0] += cfg.dormant_every

            ppo_train(venv, net, tcfg, log, evaluate, on_update)
        else:
            dqn_train(venv, net, tcfg, log, evaluate)
    checkpoint.save(run_dir / CHECKPOINT_NAME, net.state_dict())
    manifest = {"run": run_dir.name, "seeds": [seed], "env": cfg.env, "algo": cfg.algo,
                "encoder": cfg.encoder_spec().name, "track": cfg.track, "total_steps": tcfg.total_steps,
                "wall_clock_s": round(time.perf_counter() - wall0, 3), "started": started,
                "kernels": cfg.kernels, "version": __version__, "python": platform.python_version()}
    (run_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return run_dir


def load_run(run_dir) -> tuple[ExperimentConfig, object, int]:
    """(config, network with checkpoint weights, seed) for a finished run directory."""
    run_dir = Path(run_dir)
    if run_dir.is_file():
        run_dir = run_dir.parent
    cfg = load_config(run_dir / CONFIG_NAME, environ={})
    seed = cfg.seeds[0]
    net = build_network(cfg, seed)
    net.load_state_dict(checkpoint.load(run_dir / CHECKPOINT_NAME))
    return cfg, net, seed


def evaluate_run(run_dir, splits: Optional[Sequence[str]] = None, episodes: Optional[int] = None) -> list[dict]:
    cfg, net, seed = load_run(run_dir)
    kernels.set_backend(cfg.kernels)
    step = cfg.train_config(seed).total_steps
    records = read_runlog(Path(run_dir) / RUNLOG_NAME) if (Path(run_dir) / RUNLOG_NAME).exists() else []
    steps = [r["t"] for r in records if r.get("kind") == "train"]
    if steps:
        step = max(steps)
    return evaluate_network(net, cfg, seed, step, splits or splits_for(cfg), episodes)


def analyze_run(run_dir, probe: str, n_states: int = 64, batch: Optional[int] = None,
                out: Optional[Path] = None) -> dict:
    from .probes import dormant_fractions, sensitivity_map

    run_dir = Path(run_dir)
    cfg, net, seed = load_run(run_dir)
    kernels.set_backend(cfg.kernels)
    out = Path(out) if out else run_dir / "analysis"
    out.mkdir(parents=True, exist_ok=True)
    if probe == "sensitivity":
        rng = np.random.default_rng([seed, 0x5E5])
        act = actor_critic_policy(net) if cfg.algo == "ppo" else q_policy(net, 0.0)

        def policy(obs):
            return int(act(obs[None], rng)[0])

        smap = sensitivity_map(net, make_game(cfg.env), n_states, rng=rng, policy=policy,
                               levels=cfg.level_set())
        smap.save(out / "sensitivity")
        return {"probe": "sensitivity", "mean": smap.mean, "states": smap.sample_count,
                "csv": str(out / "sensitivity.csv"), "pgm": str(out / "sensitivity.pgm")}
    if probe == "dormant":
        n = batch or cfg.dormant_batch
        report = dormant_fractions(net, collect_observations(net, cfg, seed, n))
        step = cfg.train_config(seed).total_steps
        record = {"t": step, "kind": "dormant", "env": cfg.env, "seed": seed, "split": "train",
                  "encoder": cfg.encoder_spec().name, **report.as_record()}
        (out / "dormant.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        with RunLog(run_dir / RUNLOG_NAME) as log:
            log.write(record)
        return record
    raise ConfigError(f"probe must be 'sensitivity' or 'dormant', got {probe!r}")
