"""Experiment configuration: a sectioned key/value document with validated defaults.

    [run]
    variant = ices
    seed = 0
    step_max = 200000

    [env]
    name = corridor
    episode_limit = 30

    [algo]
    alpha_start = 0.1

Values are Python literals (numbers, tuples, quoted or bare strings).  Keys
not listed in the dataclasses below are rejected with their ``section.key``
path.  Update cadences (``train_interval``, ``target_update_interval``,
``eval_interval``, annealing lengths) are counted in environment steps.
"""

from __future__ import annotations

import ast
import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .envs import CooperativeMatrixGame, CorridorConfig, MultiAgentEnv, NoisyCorridor

VARIANTS = ("ices", "global_con", "int_ext", "no_s", "no_maxent", "no_cvae", "two_cvaes", "qmix_baseline")
ENV_NAMES = ("corridor", "matrix_game")


class ConfigValidationError(ValueError):
    """Bad key, bad value or malformed document; the message names the key path."""


@dataclass(frozen=True)
class EnvConfig:
    name: str = "corridor"
    length: int = 8
    width: int = 4
    n_agents: int = 2
    noisy_cells: tuple = ((2, 1), (4, 2), (5, 0))
    walls: tuple = ()
    starts: tuple = ((0, 0), (0, 3))
    goal: tuple = (7, 2)
    episode_limit: int = 30
    step_penalty: float = 0.0


@dataclass(frozen=True)
class AlgoConfig:
    # exploitation
    gamma: float = 0.99
    lr_exploit: float = 5e-4
    exploit_grad_clip: float = 10.0
    double_q: bool = False
    hidden_dim: int = 32
    mixer_embed: int = 16
    hypernet_hidden: int = 32
    batch_size: int = 32
    buffer_size: int = 5000
    train_interval: int = 40
    target_update_interval: int = 2000
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_steps: int = 50000
    # exploration
    alpha_start: float = 0.1
    alpha_end: float = 0.05
    beta: float = 0.05
    lr_explore: float = 1e-3
    lr_value: float = 1e-3
    explore_grad_clip: float = 10.0
    advantage_mode: str = "exact"
    # scaffolds
    embed_dim: int = 4
    latent_dim: int = 8
    scaffold_hidden: int = 64
    scaffold_lr: float = 1e-4
    scaffold_clip: float = 0.1
    scaffold_reward_clip: float = 10.0
    scaffold_batch_transitions: int = 256
    int_ext_weight: float = 1.0
    # evaluation
    eval_interval: int = 2000
    eval_episodes: int = 20


_UNIT = ("alpha_start", "alpha_end", "epsilon_start", "epsilon_finish")
_NON_NEGATIVE = ("beta", "lr_exploit", "lr_explore", "lr_value", "scaffold_lr", "int_ext_weight",
                 "epsilon_anneal_steps", "eval_episodes")
_POSITIVE = ("exploit_grad_clip", "explore_grad_clip", "hidden_dim", "mixer_embed", "hypernet_hidden",
             "batch_size", "buffer_size", "train_interval", "target_update_interval", "embed_dim",
             "latent_dim", "scaffold_hidden", "scaffold_clip", "scaffold_reward_clip",
             "scaffold_batch_transitions", "eval_interval")


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    algo: AlgoConfig = field(default_factory=AlgoConfig)
    variant: str = "ices"
    seed: int = 0
    step_max: int = 200_000
    out_dir: str = "runs/ices"

    def __post_init__(self):
        _validate(self)
        if self.variant == "no_maxent" and self.algo.beta != 0.0:
            object.__setattr__(self, "algo", dataclasses.replace(self.algo, beta=0.0))

    # -- variant wiring ---------------------------------------------------------------
    @property
    def uses_explorer(self) -> bool:
        """Whether the behavior policy ever samples the exploration actor."""
        return self.variant not in ("int_ext", "qmix_baseline")

    @property
    def uses_scaffolds(self) -> bool:
        return self.variant != "qmix_baseline"

    @property
    def scaffold_variant(self) -> str:
        return {"global_con": "global_con", "no_cvae": "euclidean", "two_cvaes": "two_cvaes"}.get(self.variant, "ices")

    @property
    def actor_sees_state(self) -> bool:
        return self.variant != "no_s"

    @property
    def hold_epsilon(self) -> bool:
        """Plain QMIX keeps its final epsilon; every other variant drops it after annealing."""
        return self.variant == "qmix_baseline"

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with top-level fields, or ``env.key`` / ``algo.key`` paths, changed."""
        top, env, algo = {}, {}, {}
        for key, value in changes.items():
            section, _, name = key.rpartition(".")
            target = {"": top, "env": env, "algo": algo}.get(section)
            if target is None:
                raise ConfigValidationError(f"{key}: unknown section")
            target[name] = value
        try:
            return dataclasses.replace(
                self,
                env=dataclasses.replace(self.env, **env),
                algo=dataclasses.replace(self.algo, **algo),
                **top,
            )
        except TypeError as exc:
            raise ConfigValidationError(str(exc)) from None

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()


def _fail(path: str, msg: str) -> None:
    raise ConfigValidationError(f"{path}: {msg}")


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.variant not in VARIANTS:
        _fail("run.variant", f"unknown variant {cfg.variant!r}; expected one of {', '.join(VARIANTS)}")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        _fail("run.seed", "must be a non-negative integer")
    if not isinstance(cfg.step_max, int) or cfg.step_max < 0:
        _fail("run.step_max", "must be a non-negative integer")
    e, a = cfg.env, cfg.algo
    if e.name not in ENV_NAMES:
        _fail("env.name", f"unknown environment {e.name!r}; expected one of {', '.join(ENV_NAMES)}")
    if e.episode_limit <= 0:
        _fail("env.episode_limit", "must be positive")
    if e.name == "corridor":
        try:
            corridor_config(e)
        except (ValueError, TypeError) as exc:
            _fail("env", str(exc))
    for name in _UNIT:
        v = getattr(a, name)
        if not 0.0 <= v <= 1.0:
            _fail(f"algo.{name}", f"{v} outside [0, 1]")
    for name in _NON_NEGATIVE:
        if getattr(a, name) < 0:
            _fail(f"algo.{name}", "must be >= 0")
    for name in _POSITIVE:
        if getattr(a, name) <= 0:
            _fail(f"algo.{name}", "must be > 0")
    if not 0.0 < a.gamma <= 1.0:
        _fail("algo.gamma", f"{a.gamma} outside (0, 1]")
    if a.advantage_mode not in ("exact", "paper_literal"):
        _fail("algo.advantage_mode", "must be 'exact' or 'paper_literal'")


def corridor_config(env: EnvConfig) -> CorridorConfig:
    return CorridorConfig(
        length=env.length, width=env.width, n_agents=env.n_agents,
        noisy_cells=tuple(tuple(c) for c in env.noisy_cells), walls=tuple(tuple(c) for c in env.walls),
        starts=tuple(tuple(c) for c in env.starts), goal=tuple(env.goal),
        episode_limit=env.episode_limit, step_penalty=env.step_penalty,
    )


def make_env(env: EnvConfig, seed: int | None = None) -> MultiAgentEnv:
    if env.name == "corridor":
        return NoisyCorridor(corridor_config(env), seed=seed)
    return CooperativeMatrixGame(episode_limit=env.episode_limit, seed=seed)


# -- text format ------------------------------------------------------------------------
_RUN_KEYS = ("variant", "seed", "step_max", "out_dir")


def _coerce(path: str, raw: str, default):
    try:
        value = ast.literal_eval(raw)
    except (ValueError, SyntaxError):
        value = raw  # bare word
    if isinstance(default, bool):
        if not isinstance(value, bool):
            _fail(path, f"expected true/false, got {raw!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            _fail(path, f"expected an integer, got {raw!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            _fail(path, f"expected a number, got {raw!r}")
        return float(value)
    if isinstance(default, tuple):
        if isinstance(value, list):
            value = tuple(value)
        if not isinstance(value, tuple):
            _fail(path, f"expected a tuple, got {raw!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value)
    if not isinstance(value, str):
        _fail(path, f"expected a string, got {raw!r}")
    return value


def parse_config(source: str | Path) -> ExperimentConfig:
    """Parse a config document given as a path or as literal text."""
    if isinstance(source, Path) or ("\n" not in source and "[" not in source):
        path = Path(source)
        if not path.is_file():
            raise ConfigValidationError(f"config file not found: {path}")
        text = path.read_text()
    else:
        text = source
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigValidationError(f"malformed config document: {exc}") from None
    unknown = set(parser.sections()) - {"run", "env", "algo"}
    if unknown:
        _fail(sorted(unknown)[0], "unknown section")
    if not parser.has_section("env") or "name" not in parser["env"]:
        _fail("env.name", "missing environment name")

    run_defaults = {f.name: f.default for f in fields(ExperimentConfig) if f.name in _RUN_KEYS}
    run = {}
    if parser.has_section("run"):
        for key, raw in parser["run"].items():
            if key not in _RUN_KEYS:
                _fail(f"run.{key}", "unknown key")
            run[key] = _coerce(f"run.{key}", raw, run_defaults[key])
    sections = {}
    for name, cls in (("env", EnvConfig), ("algo", AlgoConfig)):
        defaults = {f.name: f.default for f in fields(cls)}
        values = {}
        if parser.has_section(name):
            for key, raw in parser[name].items():
                if key not in defaults:
                    _fail(f"{name}.{key}", "unknown key")
                values[key] = _coerce(f"{name}.{key}", raw, defaults[key])
        sections[name] = cls(**values)
    return ExperimentConfig(env=sections["env"], algo=sections["algo"], **run)


def _format(value) -> str:
    if isinstance(value, str):
        return value
    return repr(value)


def dump_config(cfg: ExperimentConfig) -> str:
    """Serialize every key (defaults included) so the document fully pins the run."""
    lines = ["[run]"]
    lines += [f"{k} = {_format(getattr(cfg, k))}" for k in _RUN_KEYS]
    for name in ("env", "algo"):
        section = getattr(cfg, name)
        lines += ["", f"[{name}]"]
        lines += [f"{f.name} = {_format(getattr(section, f.name))}" for f in fields(section)]
    return "\n".join(lines) + "\n"
