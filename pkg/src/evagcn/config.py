"""Run configuration: every pipeline knob in one place, with a canonical hash."""

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .graph import GraphConfig
from .sampling import SamplingConfig
from .voxelizer import VoxelizationConfig


@dataclass
class VoxelGraphConfig(GraphConfig):
    radius: float = 2.0
    # "lattice": distances in voxel-index units; "normalized": in (x, y, t') units
    units: str = "lattice"

    def __post_init__(self):
        super().__post_init__()
        if self.units not in ("lattice", "normalized"):
            raise ValueError("voxel_graph.units must be 'lattice' or 'normalized'")


@dataclass
class ModelConfig:
    hidden_dim: int = 64
    num_blocks: int = 3
    num_kernels: int = 8
    head_hidden: int = 128
    readout: str = "absorbing"


@dataclass
class TrainConfig:
    epochs: int = 150
    lr: float = 0.001
    lr_decay_epochs: list = field(default_factory=lambda: [60, 110])
    lr_decay_factor: float = 0.1
    batch_size: int = 16
    dropout: float = 0.5
    seed: int = 0
    branch_mode: str = "dual"

    def __post_init__(self):
        self.lr_decay_epochs = [int(e) for e in self.lr_decay_epochs]
        self.validate()

    def validate(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.branch_mode not in ("dual", "point_only", "voxel_only"):
            raise ValueError(f"unknown branch_mode {self.branch_mode!r}")
        d = self.lr_decay_epochs
        if any(b <= a for a, b in zip(d, d[1:])) or any(e < 1 or e >= self.epochs for e in d):
            raise ValueError(
                f"lr_decay_epochs {d} must be strictly increasing and inside [1, epochs={self.epochs})")

    def lr_at(self, epoch):
        """Learning rate for 0-based ``epoch``; decays once ``epoch`` reaches each milestone."""
        n = sum(1 for m in self.lr_decay_epochs if epoch >= m)
        return self.lr * self.lr_decay_factor ** n


def rescale_schedule(decay_epochs, old_epochs, new_epochs):
    """Move decay milestones proportionally to a different epoch budget."""
    out = sorted({round(e * new_epochs / old_epochs) for e in decay_epochs})
    return [e for e in out if 0 < e < new_epochs]


@dataclass
class DataConfig:
    manifest: str = "data/manifest.json"
    train_split: str = "train"
    test_split: str = "test"


@dataclass
class RunConfig:
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    voxel: VoxelizationConfig = field(default_factory=VoxelizationConfig)
    point_graph: GraphConfig = field(default_factory=GraphConfig)
    voxel_graph: VoxelGraphConfig = field(default_factory=VoxelGraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["voxel"]["voxel_size"] = list(d["voxel"]["voxel_size"])
        return d

    @classmethod
    def from_dict(cls, d):
        kwargs = {}
        for f in dataclasses.fields(cls):
            sub = d.get(f.name, {})
            unknown = set(sub) - {g.name for g in dataclasses.fields(f.default_factory)}
            if unknown:
                raise KeyError(f"unknown config keys in [{f.name}]: {sorted(unknown)}")
            kwargs[f.name] = f.default_factory(**sub)
        return cls(**kwargs)

    def canonical_json(self, sections=None):
        d = self.to_dict()
        if sections is not None:
            d = {k: d[k] for k in sections}
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def digest(self, sections=None):
        """32-byte SHA-256 of the canonical JSON (optionally restricted to some sections)."""
        return hashlib.sha256(self.canonical_json(sections).encode()).digest()

    def hash(self, sections=None):
        return self.digest(sections).hex()

    def preprocess_hash(self):
        return self.hash(PREPROCESS_SECTIONS)

    def model_hash(self):
        """Hash of everything that fixes the model's input and shape."""
        d = self.to_dict()
        d["model"] = dict(d["model"])
        d["train"] = {"branch_mode": d["train"]["branch_mode"]}
        d = {k: d[k] for k in PREPROCESS_SECTIONS + ("model", "train")}
        return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).digest()

    def with_overrides(self, overrides):
        """Apply ``section.key=value`` strings (values parsed as JSON when possible)."""
        d = self.to_dict()
        for item in overrides:
            if "=" not in item:
                raise ValueError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            parts = key.strip().split(".")
            if len(parts) != 2 or parts[0] not in d or parts[1] not in d[parts[0]]:
                raise KeyError(f"unknown config key {key!r}")
            d[parts[0]][parts[1]] = _parse_value(raw)
        return RunConfig.from_dict(d)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        text = Path(path).read_text()
        if str(path).endswith((".yaml", ".yml")):
            import yaml
            return cls.from_dict(yaml.safe_load(text) or {})
        return cls.from_dict(json.loads(text))


PREPROCESS_SECTIONS = ("sampling", "voxel", "point_graph", "voxel_graph")


def _parse_value(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def iter_keys(config=None):
    """``(dotted key, default value)`` for every config field."""
    d = (config or RunConfig()).to_dict()
    for section, values in d.items():
        for k, v in values.items():
            yield f"{section}.{k}", v
