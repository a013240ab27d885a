"""Two-class synthetic dataset: noisy backgrounds vs. added bright abnormalities.

Class 0 is a flat noisy background; class 1 adds either one compact disk or
a scattered speckle field, always brighter than the background, with the
exact binary support of the abnormality kept as the ground-truth mask.
Lesion intensity is feathered over one pixel at the rim, but masks are hard
supports because the downstream evaluation needs binary labels.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import fileio


@dataclass
class LocalizedLesion:
    radius: tuple[float, float] = (4.0, 10.0)
    delta: tuple[float, float] = (0.25, 0.5)


@dataclass
class DiffuseLesion:
    count: tuple[int, int] = (15, 40)
    radius: tuple[float, float] = (1.0, 2.0)
    delta: tuple[float, float] = (0.25, 0.5)


@dataclass
class SimConfig:
    image_size: int = 64
    per_class_count: int = 1000
    train_count: int = 1500
    test_count: int = 500
    background: float = 0.3
    noise_mean: float = 0.0
    noise_sigma: float = 0.08
    lesion_mix: float = 0.5  # fraction of abnormal samples that are localized
    localized: LocalizedLesion = field(default_factory=LocalizedLesion)
    diffuse: DiffuseLesion = field(default_factory=DiffuseLesion)
    seed: int = 0

    def validate(self) -> None:
        if self.train_count + self.test_count != 2 * self.per_class_count:
            raise ValueError(
                f"train_count {self.train_count} + test_count {self.test_count} "
                f"must equal 2 * per_class_count ({2 * self.per_class_count})")
        if self.train_count < 0 or self.test_count < 0:
            raise ValueError("split counts must be non-negative")
        if not 0.0 <= self.lesion_mix <= 1.0:
            raise ValueError("lesion_mix must lie in [0, 1]")
        for name, (lo, hi) in (("localized.delta", self.localized.delta),
                               ("diffuse.delta", self.diffuse.delta)):
            if lo <= 0 or hi < lo:
                raise ValueError(f"{name} range must be strictly positive and ordered")
        if self.localized.radius[1] * 2 + 2 >= self.image_size:
            raise ValueError("localized radius range does not fit in the frame")
        if self.diffuse.count[0] < 5:
            raise ValueError("diffuse speckle count must be at least 5")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        for key, klass in (("localized", LocalizedLesion), ("diffuse", DiffuseLesion)):
            if key in d and isinstance(d[key], dict):
                d[key] = klass(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in d[key].items()})
        return cls(**d)


@dataclass
class Sample:
    image: np.ndarray  # (1, H, W) float32 in [0, 1]
    label: int  # 0 normal, 1 abnormal
    mask: np.ndarray  # (H, W) uint8, hard lesion support
    lesion: dict | None = None  # disk geometry, for recounts and the manifest


def _add_disk(mask: np.ndarray, delta_field: np.ndarray,
              cy: float, cx: float, radius: float, delta: float) -> None:
    size = mask.shape[0]
    reach = radius + 1.0
    y0, y1 = max(0, int(cy - reach)), min(size, int(cy + reach) + 2)
    x0, x1 = max(0, int(cx - reach)), min(size, int(cx + reach) + 2)
    yy, xx = np.meshgrid(np.arange(y0, y1), np.arange(x0, x1), indexing="ij")
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    mask[y0:y1, x0:x1] |= dist <= radius
    feather = np.clip(radius + 0.5 - dist, 0.0, 1.0)
    np.maximum(delta_field[y0:y1, x0:x1], delta * feather, out=delta_field[y0:y1, x0:x1])


def draw_localized_lesion(rng: np.random.Generator, cfg: SimConfig
                          ) -> tuple[np.ndarray, np.ndarray, dict]:
    """One filled disk fully inside the frame, with a 1-px feathered rim."""
    size = cfg.image_size
    r = rng.uniform(*cfg.localized.radius)
    margin = r + 1.0
    cy = rng.uniform(margin, size - 1 - margin)
    cx = rng.uniform(margin, size - 1 - margin)
    delta = rng.uniform(*cfg.localized.delta)
    mask = np.zeros((size, size), dtype=bool)
    field_ = np.zeros((size, size), dtype=np.float64)
    _add_disk(mask, field_, cy, cx, r, delta)
    return mask.astype(np.uint8), field_, {"kind": "localized", "disks": [[cy, cx, r, delta]]}


def draw_diffuse_lesion(rng: np.random.Generator, cfg: SimConfig
                        ) -> tuple[np.ndarray, np.ndarray, dict]:
    """Many small disks scattered over a random sub-region of the frame."""
    size = cfg.image_size
    count = int(rng.integers(cfg.diffuse.count[0], cfg.diffuse.count[1] + 1))
    c_lo = cfg.diffuse.radius[1] + 1.0  # valid speckle-center interval
    c_hi = size - 1 - c_lo
    span = min(rng.uniform(0.4, 0.8) * size, c_hi - c_lo)
    lo_y = rng.uniform(c_lo, c_hi - span)
    lo_x = rng.uniform(c_lo, c_hi - span)

    mask = np.zeros((size, size), dtype=bool)
    field_ = np.zeros((size, size), dtype=np.float64)
    disks = []
    for _ in range(count):
        r = rng.uniform(*cfg.diffuse.radius)
        cy = rng.uniform(lo_y, lo_y + span)
        cx = rng.uniform(lo_x, lo_x + span)
        delta = rng.uniform(*cfg.diffuse.delta)
        _add_disk(mask, field_, cy, cx, r, delta)
        disks.append([cy, cx, r, delta])
    return mask.astype(np.uint8), field_, {"kind": "diffuse", "disks": disks}


def add_noise(image: np.ndarray, rng: np.random.Generator, cfg: SimConfig) -> np.ndarray:
    """Add i.i.d. Gaussian noise, then clamp to [0, 1]."""
    noisy = image + rng.normal(cfg.noise_mean, cfg.noise_sigma, image.shape)
    return np.clip(noisy, 0.0, 1.0)


def _make_sample(rng: np.random.Generator, cfg: SimConfig, abnormal: bool) -> Sample:
    size = cfg.image_size
    base = np.full((size, size), cfg.background, dtype=np.float64)
    if abnormal:
        if rng.random() < cfg.lesion_mix:
            mask, field_, meta = draw_localized_lesion(rng, cfg)
        else:
            mask, field_, meta = draw_diffuse_lesion(rng, cfg)
        base += field_
    else:
        mask, meta = np.zeros((size, size), dtype=np.uint8), None
    image = add_noise(base, rng, cfg).astype(np.float32)
    return Sample(image[None], int(abnormal), mask, meta)


def generate_dataset(cfg: SimConfig) -> tuple[list[Sample], list[Sample]]:
    """Balanced train/test splits, fully determined by ``cfg.seed``."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    normals = [_make_sample(rng, cfg, False) for _ in range(cfg.per_class_count)]
    abnormals = [_make_sample(rng, cfg, True) for _ in range(cfg.per_class_count)]

    n_train_normal = (cfg.train_count + 1) // 2
    n_train_abnormal = cfg.train_count - n_train_normal
    if not (0 <= n_train_normal <= cfg.per_class_count
            and 0 <= n_train_abnormal <= cfg.per_class_count):
        raise ValueError("split counts are incompatible with per_class_count")

    order_n = rng.permutation(cfg.per_class_count)
    order_a = rng.permutation(cfg.per_class_count)
    train = [normals[i] for i in order_n[:n_train_normal]] + \
            [abnormals[i] for i in order_a[:n_train_abnormal]]
    test = [normals[i] for i in order_n[n_train_normal:]] + \
           [abnormals[i] for i in order_a[n_train_abnormal:]]
    train = [train[i] for i in rng.permutation(len(train))]
    test = [test[i] for i in rng.permutation(len(test))]
    return train, test


# ---------------------------------------------------------------------------
# directory layout
# ---------------------------------------------------------------------------

def write_dataset(root: str | Path, cfg: SimConfig, train: list[Sample],
                  test: list[Sample], tensors: bool = False) -> Path:
    """Write PGM pairs plus manifest.json (and HRT1 alternates when asked)."""
    root = Path(root)
    entries = []
    for split, samples in (("train", train), ("test", test)):
        (root / split).mkdir(parents=True, exist_ok=True)
        for i, s in enumerate(samples):
            base = f"{split}/{i:04d}"
            fileio.write_pgm(root / f"{base}_image.pgm", s.image[0])
            fileio.write_pgm(root / f"{base}_mask.pgm", s.mask.astype(np.float64))
            entry = {
                "id": base,
                "split": split,
                "label": s.label,
                "image": f"{base}_image.pgm",
                "mask": f"{base}_mask.pgm",
                "lesion": s.lesion,
            }
            if tensors:
                fileio.save_tensor(root / f"{base}_image.hrt", s.image)
                fileio.save_tensor(root / f"{base}_mask.hrt", s.mask.astype(np.float32))
                entry["image_tensor"] = f"{base}_image.hrt"
                entry["mask_tensor"] = f"{base}_mask.hrt"
            entries.append(entry)
    manifest = {"config": cfg.to_json_dict(), "samples": entries}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return root


def load_dataset(root: str | Path) -> tuple[SimConfig, list[Sample], list[Sample]]:
    root = Path(root)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{manifest_path} not found; is this a dataset directory?")
    manifest = json.loads(manifest_path.read_text())
    cfg = SimConfig.from_json_dict(manifest["config"])
    splits: dict[str, list[Sample]] = {"train": [], "test": []}
    for entry in manifest["samples"]:
        image = fileio.read_pgm(root / entry["image"])[None]
        mask = (fileio.read_pgm(root / entry["mask"]) > 0.5).astype(np.uint8)
        splits[entry["split"]].append(
            Sample(image, int(entry["label"]), mask, entry.get("lesion")))
    return cfg, splits["train"], splits["test"]
