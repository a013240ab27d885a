"""Self-describing run configuration: one JSON document drives a whole run.

Re-running any command with the same RunConfig reproduces its artifacts
byte-identically. Sub-seeds for data generation and the two training phases
are filled from the top-level seed when not given explicitly, and the filled
values are what gets echoed to disk.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .model import ModelSpec, stacked_spec
from .simdata import SimConfig
from .train import AugmentConfig, TrainConfig

DEFAULT_SEED = 7


@dataclass
class CamConfig:
    methods: tuple[str, ...] = ("hrcam", "gradcam", "zhou")
    class_id: int = 1  # abnormal class
    gradcam_layer: int | None = None  # None selects the next-to-last tap


@dataclass
class RunConfig:
    seed: int = DEFAULT_SEED
    sim: SimConfig = field(default_factory=SimConfig)
    model: ModelSpec = field(default_factory=stacked_spec)
    train_backbone: TrainConfig = field(default_factory=TrainConfig)
    train_head: TrainConfig = field(default_factory=TrainConfig)
    cam: CamConfig = field(default_factory=CamConfig)

    def to_json_dict(self) -> dict:
        return {
            "seed": self.seed,
            "sim": self.sim.to_json_dict(),
            "model": self.model.to_json_dict(),
            "train_backbone": asdict(self.train_backbone),
            "train_head": asdict(self.train_head),
            "cam": asdict(self.cam),
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "RunConfig":
        cfg = default_run_config(int(d.get("seed", DEFAULT_SEED)))
        if "sim" in d:
            cfg.sim = SimConfig.from_json_dict(d["sim"])
        if "model" in d:
            cfg.model = ModelSpec.from_json_dict(d["model"])
        for key in ("train_backbone", "train_head"):
            if key in d:
                t = dict(d[key])
                if t.get("augment") is not None:
                    t["augment"] = AugmentConfig(**t["augment"])
                setattr(cfg, key, TrainConfig(**t))
        if "cam" in d:
            c = dict(d["cam"])
            if "methods" in c:
                c["methods"] = tuple(c["methods"])
            cfg.cam = CamConfig(**c)
        return cfg


def default_run_config(seed: int = DEFAULT_SEED) -> RunConfig:
    """Reference configuration: 64x64 images, 16/32/64 backbone, augmentation on."""
    return RunConfig(
        seed=seed,
        sim=SimConfig(seed=seed),
        model=stacked_spec(),
        train_backbone=TrainConfig(epochs=10, seed=seed + 1, augment=AugmentConfig()),
        train_head=TrainConfig(epochs=60, seed=seed + 2, augment=None),
        cam=CamConfig(),
    )


def load_run_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return default_run_config()
    return RunConfig.from_json_dict(json.loads(Path(path).read_text()))


def dump_run_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cfg.to_json_dict(), indent=2, sort_keys=True) + "\n")
