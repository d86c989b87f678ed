"""Experiment presets: simulator choice, net configs, curricula, optimizer,
and phase recipes, all round-trippable through the key-value config format.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .config import ConfigDoc, config_hash
from .errors import ConfigError
from .networks import HistoryConfig, PolicyConfig, PosteriorNetConfig

ABLATION_KEYS = ("nested_bptt", "fixed_length", "window")


@dataclass
class OptimizerSpec:
    kind: str = "adam"               # "adam" | "adamw" (decoupled decay, 0 here)
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class PhaseSpec:
    """One training phase: epoch count, exploration, and its LR schedule.

    LR descriptors: {"kind": "ramp-cosine", "ramp_frac", "start", "peak", "end"}
    or {"kind": "one-cycle", "peak", "div", "final_div", "ramp_frac"}.
    Exploration: {"kind": "constant", "value"} or
    {"kind": "cosine", "decay_frac"} (fraction of the phase's iterations).
    """

    name: str
    epochs: int
    lr: dict
    explore: dict


@dataclass
class RolloutSpec:
    window: int | None = None
    nested_bptt: bool = False
    fixed_length: bool = False
    # {"kind": "linear", "ramp_frac", "start"} ramps to the horizon over a
    # fraction of all training iterations; {"kind": "constant"} pins it there.
    length_schedule: dict = field(default_factory=lambda: {"kind": "constant"})


@dataclass
class ExperimentPreset:
    key: str
    simulator: str
    horizon: int
    batch_size: int
    instances_per_epoch: int
    posterior_kind: str = "diffusion"      # "diffusion" | "flow"
    ode_steps: int = 1000
    tau_clamp: float = 1e-5
    grad_clip: float | None = None
    seed: int = 0
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    history: HistoryConfig = field(default_factory=HistoryConfig)
    posterior_net: PosteriorNetConfig = field(default_factory=PosteriorNetConfig)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    rollout: RolloutSpec = field(default_factory=RolloutSpec)
    phases: list = field(default_factory=list)

    # -- config round trip -------------------------------------------------
    def to_section(self) -> dict:
        body = {}
        for f in dataclasses.fields(self):
            if f.name == "key":
                continue
            value = getattr(self, f.name)
            if dataclasses.is_dataclass(value):
                value = dataclasses.asdict(value)
            elif f.name == "phases":
                value = [dataclasses.asdict(p) for p in value]
            body[f.name] = _jsonify(value)
        return body

    @staticmethod
    def from_section(key: str, body: dict) -> "ExperimentPreset":
        body = dict(body)
        kwargs = {"key": key}
        try:
            kwargs["policy"] = _dataclass_from(PolicyConfig, body.pop("policy"))
            kwargs["history"] = _dataclass_from(HistoryConfig, body.pop("history"))
            kwargs["posterior_net"] = _dataclass_from(PosteriorNetConfig,
                                                      body.pop("posterior_net"))
            kwargs["optimizer"] = _dataclass_from(OptimizerSpec, body.pop("optimizer"))
            kwargs["rollout"] = _dataclass_from(RolloutSpec, body.pop("rollout"))
            kwargs["phases"] = [_dataclass_from(PhaseSpec, p)
                                for p in body.pop("phases")]
        except KeyError as exc:
            raise ConfigError(f"preset {key!r}: missing {exc}") from exc
        known = {f.name for f in dataclasses.fields(ExperimentPreset)}
        for name, value in body.items():
            if name not in known:
                raise ConfigError(f"preset {key!r}: unknown field {name!r}")
            kwargs[name] = value
        return ExperimentPreset(**kwargs)

    def to_config(self) -> ConfigDoc:
        return {f"preset:{self.key}": self.to_section()}

    def hash(self) -> str:
        return config_hash(self.to_config())


def _jsonify(value):
    if isinstance(value, tuple):
        return [_jsonify(v) for v in value]
    if isinstance(value, list):
        return [_jsonify(v) for v in value]
    if isinstance(value, dict):
        return {k: _jsonify(v) for k, v in value.items()}
    return value


def _dataclass_from(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {data!r}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        default = f.default if f.default is not dataclasses.MISSING else None
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown fields {sorted(unknown)}")
    return cls(**kwargs)


def preset_from_config(doc: ConfigDoc, key: str) -> ExperimentPreset:
    section = f"preset:{key}"
    if section not in doc:
        known = sorted(s.split(":", 1)[1] for s in doc if s.startswith("preset:"))
        raise ConfigError(f"unknown preset {key!r}; known: {known}")
    return ExperimentPreset.from_section(key, doc[section])


def ablation_switches(preset: ExperimentPreset, overrides: dict) -> ExperimentPreset:
    """Wire a preset to the rollout ablation variants.

    Allowed keys: nested_bptt (bool), fixed_length (bool), window (int).
    """
    for key in overrides:
        if key not in ABLATION_KEYS:
            raise ConfigError(f"unknown ablation key {key!r}; allowed {ABLATION_KEYS}")
    rollout = dataclasses.replace(preset.rollout)
    if "nested_bptt" in overrides:
        rollout.nested_bptt = bool(overrides["nested_bptt"])
    if "fixed_length" in overrides:
        rollout.fixed_length = bool(overrides["fixed_length"])
    if "window" in overrides:
        w = overrides["window"]
        rollout.window = None if w in (None, "none") else int(w)
    return dataclasses.replace(preset, rollout=rollout)


def apply_preset_overrides(preset: ExperimentPreset, overrides: dict) -> ExperimentPreset:
    """Apply dotted `section.field=value` overrides (e.g. posterior_kind=flow,
    rollout.window=5, policy.hidden_width=64) and rebuild the preset."""
    section = preset.to_section()
    for dotted, value in overrides.items():
        parts = dotted.split(".")
        node = section
        for p in parts[:-1]:
            if p not in node or not isinstance(node[p], dict):
                raise ConfigError(f"unknown override path {dotted!r}")
            node = node[p]
        if parts[-1] not in node:
            raise ConfigError(f"unknown override key {dotted!r}")
        node[parts[-1]] = value
    return ExperimentPreset.from_section(preset.key, section)


def scale_preset(preset: ExperimentPreset, scale: float) -> ExperimentPreset:
    """Shrink epochs, instances, and net widths by `scale` in (0, 1]."""
    if not 0 < scale <= 1:
        raise ConfigError("scale factor must lie in (0, 1]")
    if scale == 1.0:
        return preset
    out = ExperimentPreset.from_section(preset.key, preset.to_section())
    out.instances_per_epoch = max(out.batch_size,
                                  int(out.instances_per_epoch * scale))
    for phase in out.phases:
        phase.epochs = max(1, round(phase.epochs * scale))
    pol, hist, post = out.policy, out.history, out.posterior_net
    pol.hidden_width = max(8, int(pol.hidden_width * scale))
    post.hidden_width = max(16, int(post.hidden_width * scale))
    if hist.kind == "transformer":
        d = max(8, int(hist.d_model * scale))
        hist.d_model = d - d % hist.n_heads or hist.n_heads
        hist.ff_dim = 4 * hist.d_model
    else:
        hist.summary_channels = max(2, int(hist.summary_channels * scale))
        hist.film_channels = tuple(max(2, int(c * scale)) for c in hist.film_channels)
        hist.stages = tuple(max(2, int(c * scale)) for c in hist.stages)
        post.stages = tuple(max(2, int(c * scale)) for c in post.stages)
    return out
