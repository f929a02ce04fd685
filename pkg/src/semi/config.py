"""Run configuration: reward presets, plain-text config files, canonical echo.

A run is described by one flat namespace of ``key = value`` settings.
Run-level keys are bare (``env``, ``reward``, ``seed``); policy-update and
alignment hyperparameters live under dotted sections (``ppo.lr``,
``align.temperature``). Values come from three layers with increasing
precedence: built-in defaults, then a config file, then command-line
overrides. Unknown keys are rejected by name so typos cannot silently
fall back to defaults.

``describe`` renders a config back into the same text format; parsing
that text reproduces the config exactly, which is what lets a finished
run directory (its ``config.txt``) stand alone as the recipe for
reproducing or replaying the run.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import get_type_hints

from .alignment import AlignmentConfig
from .ppo import PpoConfig
from .rewards import RewardSpec
from .trainer import TrainConfig

# Preset name -> active reward components. The "random" preset uses the
# extrinsic channel (zero on exploration worlds) with a uniform-random
# policy, giving the no-learning control that curves are compared against.
REWARD_PRESETS = {
    "semi-p": ("semi_p",),
    "semi-pa": ("semi_p", "semi_a"),
    "curiosity": ("curiosity",),
    "disagreement": ("disagreement",),
    "rnd": ("rnd",),
    "random": ("extrinsic",),
    "extrinsic": ("extrinsic",),
    "extrinsic+semi-pa": ("extrinsic", "semi_p", "semi_a"),
    "curiosity+semi-pa": ("curiosity", "semi_p", "semi_a"),
    "disagreement+semi-pa": ("disagreement", "semi_p", "semi_a"),
}


@dataclass
class RunConfig:
    """Everything needed to reproduce one training run."""

    env: str = "blipgrid-k1"
    reward: str = "semi-pa"
    seed: int = 0
    steps: int = 200_000
    out: str | None = None
    gamma_weight: float = 1.0
    beta_weight: float = 1.0
    normalize_intrinsic: bool = True
    normalize_extrinsic: bool = False
    dump_trajectories: bool = False
    deterministic: bool = True
    copy_period: int = 2048
    ensemble_size: int = 3
    episode_window: int = 100
    success_threshold: float = 0.8
    min_window_episodes: int = 10
    checkpoint_every: int = 24
    ra_timestep: str = "next"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    align: AlignmentConfig = field(default_factory=AlignmentConfig)

    def __post_init__(self):
        if self.reward not in REWARD_PRESETS:
            names = " | ".join(sorted(REWARD_PRESETS))
            raise ValueError(f"unknown reward preset {self.reward!r}; choose one of {names}")
        if self.steps < 1:
            raise ValueError("steps must be positive")


def _section_types(cls) -> dict:
    hints = get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}

# Full key table: "env" -> ("run", "env", str); "ppo.lr" -> ("ppo", "lr", float).
_KEY_TABLE = {}
for _name, _tp in _section_types(RunConfig).items():
    if _name in ("ppo", "align"):
        continue
    _KEY_TABLE[_name] = ("run", _name, _tp)
for _name, _tp in _section_types(PpoConfig).items():
    _KEY_TABLE[f"ppo.{_name}"] = ("ppo", _name, _tp)
for _name, _tp in _section_types(AlignmentConfig).items():
    _KEY_TABLE[f"align.{_name}"] = ("align", _name, _tp)


def _strip_optional(tp):
    """Return (inner_type, is_optional) for ``X | None`` annotations."""
    args = getattr(tp, "__args__", None)
    if args and type(None) in args:
        inner = [a for a in args if a is not type(None)]
        if len(inner) == 1:
            return inner[0], True
    return tp, False


def coerce_value(key: str, raw, tp):
    """Convert a raw (usually string) setting into the declared field type."""
    inner, optional = _strip_optional(tp)
    if not isinstance(raw, str):
        if raw is None and optional:
            return None
        return raw
    text = raw.strip()
    if optional and text.lower() in ("none", "null", ""):
        return None
    origin = getattr(inner, "__origin__", None)
    try:
        if inner is bool:
            low = text.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if inner is int:
            return int(text)
        if inner is float:
            return float(text)
        if inner is str:
            return text
        if origin is tuple:
            if not text:
                return ()
            return tuple(int(part) for part in text.split(","))
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: {exc}") from None
    raise ValueError(f"config key {key!r} has unsupported type {tp!r}")


def _format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines into a raw string mapping.

    Blank lines and ``#`` comments are ignored; later assignments to the
    same key win. Raises ValueError (with the line number) on lines that
    are not assignments.
    """
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if not key:
            raise ValueError(f"line {lineno}: missing key before '='")
        out[key] = value.strip()
    return out


def make_config(file_text: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from defaults, an optional file, then overrides.

    ``overrides`` maps full key names ("seed", "ppo.lr") to values;
    strings are coerced by the declared field type, non-strings are used
    as-is. Unknown keys in either layer raise ValueError naming the key.
    """
    sections = {"run": {}, "ppo": {}, "align": {}}
    layers = []
    if file_text is not None:
        layers.append(parse_config_text(file_text))
    if overrides:
        layers.append(overrides)
    for layer in layers:
        for key, raw in layer.items():
            if key not in _KEY_TABLE:
                raise ValueError(f"unknown config key {key!r}")
            section, name, tp = _KEY_TABLE[key]
            sections[section][name] = coerce_value(key, raw, tp)
    ppo = PpoConfig(**sections["ppo"])
    align = AlignmentConfig(**sections["align"])
    return RunConfig(ppo=ppo, align=align, **sections["run"])


def describe(cfg: RunConfig) -> str:
    """Canonical text form of a config; parsing it reproduces ``cfg``."""
    lines = ["# training run configuration"]
    for f in fields(RunConfig):
        if f.name in ("ppo", "align"):
            continue
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for section in ("ppo", "align"):
        lines.append("")
        sub = getattr(cfg, section)
        for f in fields(sub):
            lines.append(f"{section}.{f.name} = {_format_value(getattr(sub, f.name))}")
    return "\n".join(lines) + "\n"


def build(cfg: RunConfig):
    """Expand a RunConfig into the four module-level configurations."""
    spec = RewardSpec(
        components=REWARD_PRESETS[cfg.reward],
        gamma_weight=cfg.gamma_weight,
        beta_weight=cfg.beta_weight,
        normalize_intrinsic=cfg.normalize_intrinsic,
        normalize_extrinsic=cfg.normalize_extrinsic,
    )
    train = TrainConfig(
        env=cfg.env,
        seed=cfg.seed,
        total_steps=cfg.steps,
        copy_period=cfg.copy_period,
        ensemble_size=cfg.ensemble_size,
        episode_window=cfg.episode_window,
        success_threshold=cfg.success_threshold,
        min_window_episodes=cfg.min_window_episodes,
        random_policy=cfg.reward == "random",
        dump_trajectories=cfg.dump_trajectories,
        deterministic=cfg.deterministic,
        checkpoint_every=cfg.checkpoint_every,
        ra_timestep=cfg.ra_timestep,
    )
    return train, spec, cfg.ppo, cfg.align
