"""Experiment configuration: a small TOML-subset loader, typed sections with
defaults mirroring the reference setup, and a content hash for provenance.

Supported syntax: `[section]` headers, `key = value` pairs, `#` comments,
values of type quoted string, integer, float, or true/false. Unknown
sections or keys are rejected up front.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields

from .backbone import validate_strategy
from .entity_graph import GraphParams
from .latent_codec import CodecConfig
from .pretrain import TrainConfig


@dataclass
class GraphSection:
    n_regions: int = 500
    compactness: float = 10.0
    iterations: int = 10
    tile: int = 64
    dilation_radius: int = 2


@dataclass
class CodecSection:
    f: int = 2
    c: int = 4
    lam: float = 1e-4
    hidden: int = 32


@dataclass
class DiffusionSection:
    T: int = 1000
    beta_min: float = 1e-7
    beta_max: float = 2e-3
    kind: str = "sigmoid"


@dataclass
class MaskSection:
    r_m: float = 0.6


@dataclass
class BackboneSection:
    layers: int = 4
    heads: int = 4
    strategy: str = "NtoN&EtoE"
    self_loops: bool = True


@dataclass
class TrainingSection:
    batch_size: int = 32
    lr: float = 3e-4
    min_lr: float = 1e-5
    epochs_stage1: int = 30
    epochs_stage2: int = 250
    plateau_patience: int = 10
    plateau_factor: float = 0.5


@dataclass
class DownstreamSection:
    readout: str = "mean"
    head_hidden: int = 64
    head_epochs: int = 300
    head_lr: float = 3e-3


@dataclass
class PathsSection:
    run_dir: str = "runs"


@dataclass
class ExperimentConfig:
    seed: int = 0
    graph: GraphSection = field(default_factory=GraphSection)
    codec: CodecSection = field(default_factory=CodecSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    mask: MaskSection = field(default_factory=MaskSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    downstream: DownstreamSection = field(default_factory=DownstreamSection)
    paths: PathsSection = field(default_factory=PathsSection)

    def graph_params(self) -> GraphParams:
        g = self.graph
        return GraphParams(
            n_regions=g.n_regions,
            compactness=g.compactness,
            iterations=g.iterations,
            tile=g.tile,
            dilation_radius=g.dilation_radius,
        )

    def codec_config(self) -> CodecConfig:
        c = self.codec
        return CodecConfig(
            a=self.graph.tile, f=c.f, c=c.c, lam=c.lam, hidden=c.hidden
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.training.batch_size,
            lr=self.training.lr,
            min_lr=self.training.min_lr,
            epochs_stage1=self.training.epochs_stage1,
            epochs_stage2=self.training.epochs_stage2,
            T=self.diffusion.T,
            beta_min=self.diffusion.beta_min,
            beta_max=self.diffusion.beta_max,
            schedule_kind=self.diffusion.kind,
            r_m=self.mask.r_m,
            seed=self.seed,
            strategy=self.backbone.strategy,
            layers=self.backbone.layers,
            heads=self.backbone.heads,
            self_loops=self.backbone.self_loops,
            plateau_patience=self.training.plateau_patience,
            plateau_factor=self.training.plateau_factor,
        )

    def validate(self) -> None:
        """Instantiate every consumer config so bad values fail up front."""
        self.graph_params()
        self.codec_config()
        self.train_config().schedule()
        validate_strategy(self.backbone.strategy)
        if self.downstream.readout not in ("mean", "max", "sum", "attention"):
            raise ValueError(
                f"invalid config: unknown readout {self.downstream.readout!r}"
            )
        if self.graph.tile % self.codec.f != 0:
            raise ValueError("invalid config: codec.f must divide graph.tile")


def _parse_value(raw: str, where: str):
    raw = raw.strip()
    if raw.startswith('"') and raw.endswith('"') and len(raw) >= 2:
        return raw[1:-1]
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        raise ValueError(f"invalid config: cannot parse value {raw!r} at {where}")


def _strip_comment(line: str) -> str:
    out = []
    in_str = False
    for ch in line:
        if ch == '"':
            in_str = not in_str
        if ch == "#" and not in_str:
            break
        out.append(ch)
    return "".join(out)


def parse_config_text(text: str) -> dict:
    """TOML-subset parse into {section: {key: value}} plus top-level keys."""
    data: dict = {}
    section: str | None = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw_line).strip()
        if not line:
            continue
        where = f"line {lineno}"
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if not section:
                raise ValueError(f"invalid config: empty section at {where}")
            data.setdefault(section, {})
            continue
        if "=" not in line:
            raise ValueError(f"invalid config: expected key = value at {where}")
        key, _, raw_val = line.partition("=")
        key = key.strip()
        value = _parse_value(raw_val, where)
        target = data.setdefault(section, {}) if section else data
        if key in target:
            raise ValueError(f"invalid config: duplicate key {key!r} at {where}")
        target[key] = value
    return data


_SECTIONS = {
    "graph": GraphSection,
    "codec": CodecSection,
    "diffusion": DiffusionSection,
    "mask": MaskSection,
    "backbone": BackboneSection,
    "training": TrainingSection,
    "downstream": DownstreamSection,
    "paths": PathsSection,
}


def _coerce(section_cls, values: dict, section_name: str):
    allowed = {f.name: f.type for f in fields(section_cls)}
    kwargs = {}
    for key, val in values.items():
        if key not in allowed:
            raise ValueError(
                f"invalid config: unknown key {section_name}.{key}"
            )
        default = getattr(section_cls(), key)
        if isinstance(default, bool):
            if not isinstance(val, bool):
                raise ValueError(f"invalid config: {section_name}.{key} must be bool")
        elif isinstance(default, int):
            if not isinstance(val, int) or isinstance(val, bool):
                raise ValueError(f"invalid config: {section_name}.{key} must be int")
        elif isinstance(default, float):
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                raise ValueError(f"invalid config: {section_name}.{key} must be number")
            val = float(val)
        elif isinstance(default, str):
            if not isinstance(val, str):
                raise ValueError(f"invalid config: {section_name}.{key} must be string")
        kwargs[key] = val
    return section_cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    data = dict(data)
    seed = data.pop("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValueError("invalid config: seed must be an integer")
    sections = {}
    for name, values in data.items():
        if name not in _SECTIONS:
            raise ValueError(f"invalid config: unknown section [{name}]")
        if not isinstance(values, dict):
            raise ValueError(f"invalid config: top-level key {name!r} not allowed")
        sections[name] = _coerce(_SECTIONS[name], values, name)
    cfg = ExperimentConfig(seed=seed, **sections)
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_dict(parse_config_text(fh.read()))


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical serialization; input to the provenance hash."""
    lines = [f"seed = {cfg.seed}"]
    for name in sorted(_SECTIONS):
        lines.append(f"[{name}]")
        section = getattr(cfg, name)
        for f in sorted(fields(section), key=lambda f: f.name):
            val = getattr(section, f.name)
            if isinstance(val, bool):
                rendered = "true" if val else "false"
            elif isinstance(val, str):
                rendered = f'"{val}"'
            elif isinstance(val, float):
                rendered = repr(val)
            else:
                rendered = str(val)
            lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()[:12]


def config_to_nested_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
