"""Run configuration: INI-style ``key = value`` sections, strictly validated.

Sections: ``[run]``, ``[data]``, ``[domain.<id>]`` (repeatable), ``[pretrain]``,
``[adapt]``, ``[theory]``. Only ``run.command`` and ``run.seed`` are
required; everything else has a default. Unknown sections or keys are
rejected with the offending key path.
"""

import configparser
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .data import Architecture, BaseMixture, DomainSpec, PretrainConfig
from .engine import AdaptationConfig
from .errors import ConfigError
from .losses import LossWeights
from .pseudo import ScheduleParams

COMMANDS = ("generate", "pretrain", "adapt", "evaluate", "theory", "export-embeddings")


@dataclass(frozen=True)
class RunSection:
    command: str
    seed: int
    out: str = "run"
    data_dir: str = ""
    checkpoint_dir: str = ""
    adapted_dir: str = ""
    models: str = "auto"


@dataclass(frozen=True)
class DataSection:
    n_classes: int = 3
    dim: int = 2
    radius: float = 2.0
    scale: float = 0.8
    samples: int = 300


@dataclass(frozen=True)
class DomainSection:
    role: str = "source"
    rotation_deg: float = 0.0
    translation: tuple = ()
    noise: float = 0.0
    label_noise: float = 0.0
    samples: int = 0


@dataclass(frozen=True)
class PretrainSection:
    hidden: int = 64
    feature_dim: int = 16
    epochs: int = 40
    batch_size: int = 32
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-3


@dataclass(frozen=True)
class AdaptSection:
    iterations: int = 20
    inner_epochs: int = 5
    batch_size: int = 32
    lr_extractor: float = 1e-2
    lr_discriminator: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 1e-3
    lambda_im: float = 1.0
    lambda_adv: float = 1.0
    beta: float = 1.0
    gamma: float = 0.8
    temperature: float = 1.0
    disc_hidden: int = 16
    oracle_partition: bool = False
    ablate_alignment: bool = False
    ablate_denoise: bool = False
    unselective: bool = False
    workers: int = 1


@dataclass(frozen=True)
class TheorySection:
    instances: int = 1000
    max_x: int = 8
    max_k: int = 3
    variance_grid: tuple = (100, 400, 1600)
    variance_trials: int = 2000


# default synthetic family: two mildly rotated sources, one mismatched source
DEFAULT_DOMAINS = {
    "s0": DomainSection(rotation_deg=40.0),
    "s1": DomainSection(rotation_deg=50.0),
    "s2": DomainSection(rotation_deg=-120.0),
    "target": DomainSection(role="target"),
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection
    data: DataSection = DataSection()
    domains: dict = field(default_factory=lambda: dict(DEFAULT_DOMAINS))
    pretrain: PretrainSection = PretrainSection()
    adapt: AdaptSection = AdaptSection()
    theory: TheorySection = TheorySection()

    # -- derived paths ----------------------------------------------------

    @property
    def out(self) -> Path:
        return Path(self.run.out)

    @property
    def data_dir(self) -> Path:
        return Path(self.run.data_dir) if self.run.data_dir else self.out / "data"

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.run.checkpoint_dir) if self.run.checkpoint_dir else self.out / "checkpoints"

    @property
    def adapted_dir(self) -> Path:
        return Path(self.run.adapted_dir) if self.run.adapted_dir else self.out / "adapted"

    @property
    def source_ids(self) -> list:
        return [k for k, d in self.domains.items() if d.role == "source"]

    @property
    def target_id(self) -> str:
        return next(k for k, d in self.domains.items() if d.role == "target")

    # -- conversions into library objects -----------------------------------

    def domain_specs(self) -> list:
        """Source specs in declaration order, then the target spec."""
        mix = BaseMixture.on_circle(self.data.n_classes, self.data.radius, self.data.scale)
        if self.data.dim != 2:
            means = tuple(tuple(m) + (0.0,) * (self.data.dim - 2) for m in mix.means)
            mix = BaseMixture(means, mix.scale)
        ordered = self.source_ids + [self.target_id]
        specs = []
        for name in ordered:
            d = self.domains[name]
            specs.append(
                DomainSpec(
                    name,
                    mix,
                    rotation=math.radians(d.rotation_deg),
                    translation=tuple(d.translation) or None,
                    noise=d.noise,
                    label_noise=d.label_noise,
                    samples=d.samples or self.data.samples,
                )
            )
        return specs

    def architecture(self) -> Architecture:
        return Architecture(self.pretrain.hidden, self.pretrain.feature_dim)

    def pretrain_config(self) -> PretrainConfig:
        p = self.pretrain
        return PretrainConfig(p.epochs, p.batch_size, p.lr, p.momentum, p.weight_decay)

    def adaptation_config(self) -> AdaptationConfig:
        a = self.adapt
        return AdaptationConfig(
            iterations=a.iterations,
            inner_epochs=a.inner_epochs,
            batch_size=a.batch_size,
            lr_extractor=a.lr_extractor,
            lr_discriminator=a.lr_discriminator,
            momentum=a.momentum,
            weight_decay=a.weight_decay,
            loss_weights=LossWeights(a.lambda_im, a.lambda_adv),
            schedule=ScheduleParams(a.beta, a.gamma),
            temperature=a.temperature,
            disc_hidden=a.disc_hidden,
            seed=self.run.seed,
            oracle_partition=a.oracle_partition,
            ablate_alignment=a.ablate_alignment,
            ablate_denoise=a.ablate_denoise,
            unselective=a.unselective,
            workers=a.workers,
        )


# -- parsing -------------------------------------------------------------------------

_SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "pretrain": PretrainSection,
    "adapt": AdaptSection,
    "theory": TheorySection,
}

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _convert(key: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is tuple:
            if not raw:
                return ()
            parts = [p.strip() for p in raw.split(",")]
            return tuple(int(p) if p.lstrip("-").isdigit() else float(p) for p in parts)
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None


def _build(cls, section: str, items: dict, required: tuple = ()):
    known = {f.name: f for f in fields(cls)}
    for key in items:
        if key not in known:
            raise ConfigError(f"{section}.{key}", "unknown key")
    for key in required:
        if key not in items:
            raise ConfigError(f"{section}.{key}", "missing required field")
    kwargs = {k: _convert(f"{section}.{k}", v, known[k].type) for k, v in items.items()}
    return cls(**kwargs)


def _require(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(key, message)


def _validate(cfg: RunConfig) -> None:
    r, d, p, a, t = cfg.run, cfg.data, cfg.pretrain, cfg.adapt, cfg.theory
    _require(r.command in COMMANDS, "run.command", f"must be one of {', '.join(COMMANDS)}")
    _require(0 <= r.seed < 2**64, "run.seed", "must be a non-negative 64-bit integer")
    _require(r.models in ("auto", "pretrained", "adapted"), "run.models", "must be auto, pretrained or adapted")
    _require(d.n_classes >= 2, "data.n_classes", "must be >= 2")
    _require(d.dim >= 2, "data.dim", "must be >= 2")
    _require(d.radius > 0, "data.radius", "must be positive")
    _require(d.scale > 0, "data.scale", "must be positive")
    _require(d.samples >= 1, "data.samples", "must be >= 1")
    roles = [s.role for s in cfg.domains.values()]
    for name, s in cfg.domains.items():
        key = f"domain.{name}"
        _require(s.role in ("source", "target"), f"{key}.role", "must be source or target")
        _require(s.noise >= 0, f"{key}.noise", "must be non-negative")
        _require(0 <= s.label_noise < 0.5, f"{key}.label_noise", "must lie in [0, 0.5)")
        _require(s.samples >= 0, f"{key}.samples", "must be >= 0 (0 = data.samples)")
        _require(len(s.translation) in (0, d.dim), f"{key}.translation", f"needs {d.dim} values")
    _require(roles.count("target") == 1, "domain", "exactly one domain needs role = target")
    _require(roles.count("source") >= 1, "domain", "at least one domain needs role = source")
    for name in ("hidden", "feature_dim", "epochs", "batch_size"):
        _require(getattr(p, name) >= 1, f"pretrain.{name}", "must be >= 1")
    _require(p.lr > 0, "pretrain.lr", "must be positive")
    _require(0 <= p.momentum < 1, "pretrain.momentum", "must lie in [0, 1)")
    _require(p.weight_decay >= 0, "pretrain.weight_decay", "must be non-negative")
    _require(a.iterations >= 0, "adapt.iterations", "must be >= 0")
    _require(a.inner_epochs >= 0, "adapt.inner_epochs", "must be >= 0")
    for name in ("batch_size", "disc_hidden", "workers"):
        _require(getattr(a, name) >= 1, f"adapt.{name}", "must be >= 1")
    for name in ("lr_extractor", "lr_discriminator", "temperature", "beta"):
        _require(getattr(a, name) > 0, f"adapt.{name}", "must be positive")
    _require(0 < a.gamma <= 1, "adapt.gamma", "must lie in (0, 1]")
    _require(0 <= a.momentum < 1, "adapt.momentum", "must lie in [0, 1)")
    for name in ("weight_decay", "lambda_im", "lambda_adv"):
        _require(getattr(a, name) >= 0, f"adapt.{name}", "must be non-negative")
    _require(not (a.oracle_partition and a.unselective), "adapt.unselective", "cannot combine with oracle_partition")
    _require(t.instances >= 1, "theory.instances", "must be >= 1")
    _require(1 <= t.max_x <= 16, "theory.max_x", "must lie in [1, 16]")
    _require(2 <= t.max_k <= 4, "theory.max_k", "must lie in [2, 4]")
    _require(len(t.variance_grid) >= 2 and min(t.variance_grid) >= 10, "theory.variance_grid", "needs >= 2 sizes, each >= 10")
    _require(t.variance_trials >= 200, "theory.variance_trials", "must be >= 200")


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError("<file>", str(exc)) from None

    sections = {}
    domains = {}
    for name in parser.sections():
        items = dict(parser.items(name))
        if name.startswith("domain."):
            ident = name[len("domain."):]
            if not ident:
                raise ConfigError(name, "empty domain id")
            domains[ident] = _build(DomainSection, name, items)
        elif name in _SECTIONS:
            sections[name] = items
        else:
            raise ConfigError(name, "unknown section")
    if "run" not in sections:
        raise ConfigError("run", "missing required section")

    cfg = RunConfig(
        run=_build(RunSection, "run", sections["run"], required=("command", "seed")),
        data=_build(DataSection, "data", sections.get("data", {})),
        domains=domains or dict(DEFAULT_DOMAINS),
        pretrain=_build(PretrainSection, "pretrain", sections.get("pretrain", {})),
        adapt=_build(AdaptSection, "adapt", sections.get("adapt", {})),
        theory=_build(TheorySection, "theory", sections.get("theory", {})),
    )
    _validate(cfg)
    return cfg


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("--config", f"{path} does not exist")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def with_overrides(cfg: RunConfig, command: Optional[str] = None, seed: Optional[int] = None,
                   out: Optional[str] = None) -> RunConfig:
    changes = {}
    if command is not None:
        changes["command"] = command
    if seed is not None:
        changes["seed"] = seed
    if out is not None:
        changes["out"] = out
    new = replace(cfg, run=replace(cfg.run, **changes))
    _validate(new)
    return new


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def format_config(cfg: RunConfig) -> str:
    """Effective configuration with every key spelled out; parses back to ``cfg``."""
    blocks = []

    def block(name, obj):
        lines = [f"[{name}]"] + [f"{f.name} = {_fmt(getattr(obj, f.name))}" for f in fields(obj)]
        blocks.append("\n".join(lines))

    block("run", cfg.run)
    block("data", cfg.data)
    for name, dom in cfg.domains.items():
        block(f"domain.{name}", dom)
    block("pretrain", cfg.pretrain)
    block("adapt", cfg.adapt)
    block("theory", cfg.theory)
    return "\n\n".join(blocks) + "\n"
