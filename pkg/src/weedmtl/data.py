"""Dataset plumbing: manifests, splits, a synthetic plant generator, and
training-time augmentation.

Layout on disk is one JSON manifest plus standard 8-bit image files; masks
are single-channel class-index images (0 = background, 1..16 = species).
The synthetic generator draws one species-colored plant per image: a
vertical stem anchored near the bottom whose pixel height is
height_cm * px_per_cm, with leaf blobs clustered around the upper part of
the stem. The mask is exact by construction, which makes the tiny
end-to-end training checks meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

# background + 16 species, by their five-letter EPPO codes
CLASS_NAMES = (
    "background",
    "AMATU", "SORHA", "SETFA", "SORVU", "PANDI", "SETPU", "DIGSA", "ECHCG",
    "SIDSP", "AMARE", "ABUTH", "AMBEL", "AMAPA", "CYPES", "CHEAL", "ERICA",
)
NUM_CLASSES = len(CLASS_NAMES)
NUM_WEEKS = 11
SPLITS = ("train", "val", "test")

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)

MAX_HEIGHT_CM = 200.0
GROWTH_RATE_RANGE = (1.70, 14.06)  # cm per week


# ---------------------------------------------------------------------------
# manifest

@dataclass
class ManifestEntry:
    id: str
    image_path: str
    mask_path: str
    height_cm: float
    week: int
    species_id: int
    split: str


@dataclass
class Manifest:
    root: Path
    class_names: tuple[str, ...]
    entries: list[ManifestEntry]

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, rel: str) -> Path:
        return self.root / rel


def _validate_entries(entries: list[ManifestEntry], root: Path | None,
                      check_files: bool) -> list[str]:
    problems: list[str] = []
    seen: set[str] = set()
    for e in entries:
        if e.id in seen:
            problems.append(f"duplicate id {e.id!r}")
        seen.add(e.id)
        if not 1 <= e.week <= NUM_WEEKS:
            problems.append(f"entry {e.id!r}: week {e.week} outside [1, {NUM_WEEKS}]")
        if not 1 <= e.species_id <= NUM_CLASSES - 1:
            problems.append(f"entry {e.id!r}: species_id {e.species_id} outside [1, 16]")
        if not 0.0 <= e.height_cm <= MAX_HEIGHT_CM:
            problems.append(f"entry {e.id!r}: height_cm {e.height_cm} outside "
                            f"[0, {MAX_HEIGHT_CM:g}]")
        if e.split not in SPLITS:
            problems.append(f"entry {e.id!r}: split {e.split!r} not in {SPLITS}")
        if check_files and root is not None:
            for kind, rel in (("image", e.image_path), ("mask", e.mask_path)):
                if not (root / rel).is_file():
                    problems.append(f"entry {e.id!r}: missing {kind} file {rel}")
    return problems


def load_manifest(path: str | Path, *, check_files: bool = True) -> Manifest:
    """Parse and validate a manifest JSON file; all problems reported at once."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest file not found: {path}")
    with open(path) as fh:
        raw = json.load(fh)
    names = tuple(raw.get("class_names", ()))
    problems: list[str] = []
    if len(names) != NUM_CLASSES:
        problems.append(f"class_names has {len(names)} entries, expected {NUM_CLASSES}")
    entries = []
    for i, item in enumerate(raw.get("entries", [])):
        try:
            entries.append(ManifestEntry(
                id=str(item["id"]), image_path=str(item["image_path"]),
                mask_path=str(item["mask_path"]), height_cm=float(item["height_cm"]),
                week=int(item["week"]), species_id=int(item["species_id"]),
                split=str(item["split"])))
        except (KeyError, TypeError, ValueError) as exc:
            problems.append(f"entry index {i}: malformed record ({exc})")
    problems += _validate_entries(entries, path.parent, check_files)
    if problems:
        raise DataError("manifest validation failed:\n  " + "\n  ".join(problems))
    return Manifest(root=path.parent, class_names=names, entries=entries)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    path = Path(path)
    payload = {
        "class_names": list(manifest.class_names),
        "entries": [{
            "id": e.id, "image_path": e.image_path, "mask_path": e.mask_path,
            "height_cm": e.height_cm, "week": e.week,
            "species_id": e.species_id, "split": e.split,
        } for e in manifest.entries],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def split_dataset(manifest: Manifest, fractions: dict[str, float] | None = None,
                  seed: int = 0) -> Manifest:
    """Assign train/val/test splits, stratified per species.

    Within each species the largest-remainder rule allocates counts, so the
    per-species fractions sit within one sample of the targets.
    """
    if fractions is None:
        fractions = {"train": 0.8, "val": 0.1, "test": 0.1}
    if set(fractions) - set(SPLITS):
        raise ConfigError(f"unknown split names {sorted(set(fractions) - set(SPLITS))}")
    total = sum(fractions.values())
    if abs(total - 1.0) > 1e-9:
        raise ConfigError(f"split fractions sum to {total!r}, expected 1")
    if any(f < 0 for f in fractions.values()):
        raise ConfigError("split fractions must be non-negative")

    by_species: dict[int, list[int]] = {}
    for idx, e in enumerate(manifest.entries):
        by_species.setdefault(e.species_id, []).append(idx)

    names = [s for s in SPLITS if s in fractions]
    new_entries = [replace(e) for e in manifest.entries]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5914]))
    for species in sorted(by_species):
        idxs = by_species[species]
        order = rng.permutation(len(idxs))
        quotas = [fractions[s] * len(idxs) for s in names]
        counts = [int(np.floor(q)) for q in quotas]
        short = len(idxs) - sum(counts)
        remainders = np.array([q - c for q, c in zip(quotas, counts)])
        for j in np.argsort(-remainders, kind="stable")[:short]:
            counts[j] += 1
        pos = 0
        for name, count in zip(names, counts):
            for k in order[pos:pos + count]:
                new_entries[idxs[k]].split = name
            pos += count
    return Manifest(root=manifest.root, class_names=manifest.class_names,
                    entries=new_entries)


# ---------------------------------------------------------------------------
# image / mask I/O and normalization

def load_image(path: str | Path) -> np.ndarray:
    """Read an RGB image file into a float32 [3, H, W] array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def save_image(image01: np.ndarray, path: str | Path) -> None:
    arr = np.clip(image01, 0.0, 1.0).transpose(1, 2, 0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="RGB").save(path)


def load_mask(path: str | Path, num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Read a class-index mask; labels are checked here, on first read."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.int64)
    if arr.size and arr.max() >= num_classes:
        raise DataError(f"mask {path} contains label {int(arr.max())}, "
                        f"valid range is [0, {num_classes})")
    return arr


def save_mask(mask: np.ndarray, path: str | Path) -> None:
    Image.fromarray(mask.astype(np.uint8), mode="L").save(path)


def normalize_image(image: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    if image.ndim != 3 or image.shape[0] != 3:
        raise DataError(f"expected a [3, H, W] image, got shape {image.shape}")
    mean = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
    if np.any(std == 0):
        raise ConfigError("normalization std must be nonzero per channel")
    return (image - mean) / std


def denormalize_image(image: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
    return image * std + mean


# ---------------------------------------------------------------------------
# synthetic generator

@dataclass(frozen=True)
class SynthSpec:
    """Grid of synthetic samples: species x weeks x replicates."""
    species: tuple[int, ...] = tuple(range(1, 17))
    weeks: tuple[int, ...] = tuple(range(1, 12))
    growth_rates: tuple[float, ...] | None = None  # cm/week, aligned with species
    image_size: int = 512
    px_per_cm: float | None = None  # None: scaled so a 160 cm plant fits
    noise: float = 0.08
    seed: int = 0

    def validate(self) -> None:
        if self.image_size % 32 != 0 or self.image_size <= 0:
            raise ConfigError(f"image_size {self.image_size} must be a positive "
                              "multiple of 32")
        if not self.species or any(not 1 <= s <= 16 for s in self.species):
            raise ConfigError(f"species ids must be within [1, 16], got {self.species}")
        if len(set(self.species)) != len(self.species):
            raise ConfigError("species ids must be unique")
        if not self.weeks or any(not 1 <= w <= NUM_WEEKS for w in self.weeks):
            raise ConfigError(f"weeks must be within [1, {NUM_WEEKS}], got {self.weeks}")
        if self.growth_rates is not None:
            if len(self.growth_rates) != len(self.species):
                raise ConfigError("growth_rates must align with species")
            if any(r <= 0 for r in self.growth_rates):
                raise ConfigError("growth rates must be positive")
        if not 0.0 <= self.noise < 1.0:
            raise ConfigError(f"noise {self.noise} outside [0, 1)")
        if self.px_per_cm is not None and self.px_per_cm <= 0:
            raise ConfigError("px_per_cm must be positive")

    def resolved_px_per_cm(self) -> float:
        if self.px_per_cm is not None:
            return float(self.px_per_cm)
        return 0.9 * self.image_size / 160.0

    def resolved_rates(self) -> dict[int, float]:
        if self.growth_rates is not None:
            return dict(zip(self.species, self.growth_rates))
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xA11]))
        lo, hi = GROWTH_RATE_RANGE
        draws = rng.uniform(lo, hi, size=len(self.species))
        return {s: float(r) for s, r in zip(self.species, draws)}


@dataclass
class ArraySample:
    """One decoded sample: image in [0, 1], exact class-index mask."""
    id: str
    image: np.ndarray        # [3, H, W] float32 in [0, 1]
    mask: np.ndarray         # [H, W] int64, labels 0..16
    height_cm: float
    week: int                # 1..11
    species_id: int          # 1..16


def _species_color(species_id: int) -> np.ndarray:
    # deterministic green-dominant palette, distinct per species
    rng = np.random.default_rng(np.random.SeedSequence([0xC0106, species_id]))
    r = 0.05 + 0.45 * rng.random()
    g = 0.40 + 0.55 * rng.random()
    b = 0.05 + 0.35 * rng.random()
    return np.array([r, g, b], dtype=np.float32)


def _soil(rng: np.random.Generator, size: int) -> np.ndarray:
    base = np.array([0.32, 0.24, 0.16], dtype=np.float32).reshape(3, 1, 1)
    coarse = rng.standard_normal((3, max(size // 16, 1), max(size // 16, 1)))
    blotch = resize_bilinear(coarse.astype(np.float32), (size, size))
    grain = rng.standard_normal((3, size, size)).astype(np.float32)
    return np.clip(base + 0.05 * blotch + 0.02 * grain, 0.0, 1.0)


def _paint_ellipse(image: np.ndarray, mask: np.ndarray, cy: int, cx: int,
                   ry: int, rx: int, color: np.ndarray, label: int) -> None:
    size = mask.shape[0]
    y0, y1 = max(cy - ry, 0), min(cy + ry + 1, size)
    x0, x1 = max(cx - rx, 0), min(cx + rx + 1, size)
    if y0 >= y1 or x0 >= x1:
        return
    ys = np.arange(y0, y1).reshape(-1, 1)
    xs = np.arange(x0, x1).reshape(1, -1)
    inside = ((ys - cy) / ry) ** 2 + ((xs - cx) / rx) ** 2 <= 1.0
    mask[y0:y1, x0:x1][inside] = label
    image[:, y0:y1, x0:x1][:, inside] = color.reshape(3, 1)


def generate_sample(spec: SynthSpec, species_id: int, week: int,
                    replicate: int = 0, *, rate: float | None = None) -> ArraySample:
    """Render one plant; deterministic in (seed, species, week, replicate)."""
    spec.validate()
    size = spec.image_size
    px_per_cm = spec.resolved_px_per_cm()
    if rate is None:
        rate = spec.resolved_rates()[species_id]
    rng = np.random.default_rng(
        np.random.SeedSequence([spec.seed, species_id, week, replicate]))

    height_cm = rate * week * (1.0 + spec.noise * rng.uniform(-1.0, 1.0))
    height_px = max(int(round(height_cm * px_per_cm)), 2)
    base_row = size - 1 - int(rng.integers(2, 6))
    top_row = base_row - height_px + 1
    if top_row < 1:
        raise DataError(
            f"plant of {height_cm:.1f} cm needs {height_px} px but the canvas has "
            f"{size}; reduce px_per_cm (currently {px_per_cm:.2f})")

    image = _soil(rng, size)
    mask = np.zeros((size, size), dtype=np.int64)
    color = _species_color(species_id)

    cx = size // 2 + int(rng.integers(-size // 6, size // 6 + 1))
    cx = min(max(cx, 4), size - 5)
    # constant width per canvas size: vertical extent stays the only height cue
    half_w = max(1, int(round(size * 0.008)))
    stem_color = color * 0.55
    image[:, top_row:base_row + 1, cx - half_w:cx + half_w + 1] = stem_color.reshape(3, 1, 1)
    mask[top_row:base_row + 1, cx - half_w:cx + half_w + 1] = species_id

    # leaves cluster around the top third of the stem
    n_leaves = 2 + min(int(week), 6)
    for _ in range(n_leaves):
        cy = top_row + int(rng.uniform(0.0, 0.30) * height_px)
        side = 1 if rng.random() < 0.5 else -1
        off = half_w + 1 + int(rng.integers(0, max(height_px // 6, 2)))
        rx = max(2, int(round(height_px * 0.10 * rng.uniform(0.7, 1.3))))
        ry = max(1, int(round(rx * rng.uniform(0.35, 0.6))))
        shade = np.clip(color * rng.uniform(0.85, 1.15), 0.0, 1.0)
        _paint_ellipse(image, mask, cy, cx + side * off, ry, rx, shade, species_id)

    return ArraySample(id=f"s{species_id:02d}w{week:02d}r{replicate:02d}",
                       image=image.astype(np.float32), mask=mask,
                       height_cm=float(height_cm), week=int(week),
                       species_id=int(species_id))


def synthesize_dataset(spec: SynthSpec, n_per_cell: int = 1,
                       out_dir: str | Path | None = None,
                       split_fractions: dict[str, float] | None = None) -> tuple[
                           list[ArraySample], Manifest | None]:
    """Generate the species x week grid; optionally write images + manifest."""
    spec.validate()
    if n_per_cell <= 0:
        raise ConfigError(f"n_per_cell must be positive, got {n_per_cell}")
    rates = spec.resolved_rates()
    samples = [generate_sample(spec, s, w, r, rate=rates[s])
               for s in spec.species for w in spec.weeks for r in range(n_per_cell)]
    if out_dir is None:
        return samples, None

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        image_rel = f"images/{s.id}.png"
        mask_rel = f"masks/{s.id}.png"
        save_image(s.image, out / image_rel)
        save_mask(s.mask, out / mask_rel)
        entries.append(ManifestEntry(id=s.id, image_path=image_rel, mask_path=mask_rel,
                                     height_cm=s.height_cm, week=s.week,
                                     species_id=s.species_id, split="train"))
    manifest = Manifest(root=out, class_names=CLASS_NAMES, entries=entries)
    if split_fractions is not None:
        manifest = split_dataset(manifest, split_fractions, seed=spec.seed)
    save_manifest(manifest, out / "manifest.json")
    return samples, manifest


def load_arrays(manifest: Manifest, split: str | None = None) -> list[ArraySample]:
    entries = manifest.entries if split is None else manifest.split(split)
    out = []
    for e in entries:
        out.append(ArraySample(
            id=e.id, image=load_image(manifest.resolve(e.image_path)),
            mask=load_mask(manifest.resolve(e.mask_path)),
            height_cm=e.height_cm, week=e.week, species_id=e.species_id))
    return out


# ---------------------------------------------------------------------------
# class weights

def class_pixel_weights(samples: list[ArraySample], num_classes: int = NUM_CLASSES) -> np.ndarray:
    """Median-frequency balancing over pixel shares; absent classes get 0."""
    if not samples:
        raise DataError("class_pixel_weights needs at least one sample")
    counts = np.zeros(num_classes, dtype=np.int64)
    for s in samples:
        counts += np.bincount(s.mask.reshape(-1), minlength=num_classes)
    freq = counts / counts.sum()
    present = freq > 0
    median = np.median(freq[present])
    weights = np.zeros(num_classes, dtype=np.float32)
    weights[present] = (median / freq[present]).astype(np.float32)
    return weights


# ---------------------------------------------------------------------------
# geometry + augmentation

def resize_bilinear(image: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Channel-first bilinear resize with half-pixel centers, edges clamped."""
    c, h, w = image.shape
    oh, ow = out_hw
    ys = (np.arange(oh, dtype=np.float64) + 0.5) * (h / oh) - 0.5
    xs = (np.arange(ow, dtype=np.float64) + 0.5) * (w / ow) - 0.5
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0).astype(image.dtype).reshape(1, -1, 1)
    wx = np.clip(xs - x0, 0.0, 1.0).astype(image.dtype).reshape(1, 1, -1)
    top = image[:, y0][:, :, x0] * (1 - wx) + image[:, y0][:, :, x1] * wx
    bot = image[:, y1][:, :, x0] * (1 - wx) + image[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def resize_nearest(mask: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    h, w = mask.shape
    oh, ow = out_hw
    ys = np.clip(((np.arange(oh) + 0.5) * (h / oh)).astype(np.int64), 0, h - 1)
    xs = np.clip(((np.arange(ow) + 0.5) * (w / ow)).astype(np.int64), 0, w - 1)
    return mask[ys][:, xs]


def hflip(image: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return image[:, :, ::-1].copy(), mask[:, ::-1].copy()


@dataclass(frozen=True)
class AugConfig:
    crop_scale_range: tuple[float, float] = (0.5, 2.0)
    hflip_prob: float = 0.5
    target_size: tuple[int, int] = (512, 512)
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD
    normalize: bool = True

    def validate(self) -> None:
        lo, hi = self.crop_scale_range
        if lo <= 0 or hi < lo:
            raise ConfigError(f"bad crop_scale_range {self.crop_scale_range}")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError(f"hflip_prob {self.hflip_prob} outside [0, 1]")
        if any(t <= 0 for t in self.target_size):
            raise ConfigError(f"bad target_size {self.target_size}")


def _fit_axis(rng: np.random.Generator, have: int, want: int) -> tuple[int, int]:
    """Random crop offset (src, dst) placing a `have`-long axis into `want`."""
    if have >= want:
        return int(rng.integers(0, have - want + 1)), 0
    return 0, int(rng.integers(0, want - have + 1))


def augment(image: np.ndarray, mask: np.ndarray, cfg: AugConfig,
            seed) -> tuple[np.ndarray, np.ndarray]:
    """Scale, crop-or-pad to target, flip; image bilinear, mask nearest.

    Deterministic per seed; labels never change. Padding uses black pixels
    and background mask before normalization is applied to the whole frame.
    """
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    h, w = mask.shape
    scale = rng.uniform(*cfg.crop_scale_range)
    nh, nw = max(int(round(h * scale)), 1), max(int(round(w * scale)), 1)
    img = resize_bilinear(image, (nh, nw))
    msk = resize_nearest(mask, (nh, nw))

    th, tw = cfg.target_size
    sy, dy = _fit_axis(rng, nh, th)
    sx, dx = _fit_axis(rng, nw, tw)
    ch, cw = min(nh, th), min(nw, tw)
    out_img = np.zeros((3, th, tw), dtype=image.dtype)
    out_msk = np.zeros((th, tw), dtype=mask.dtype)
    out_img[:, dy:dy + ch, dx:dx + cw] = img[:, sy:sy + ch, sx:sx + cw]
    out_msk[dy:dy + ch, dx:dx + cw] = msk[sy:sy + ch, sx:sx + cw]

    if rng.random() < cfg.hflip_prob:
        out_img, out_msk = hflip(out_img, out_msk)
    if cfg.normalize:
        out_img = normalize_image(out_img, cfg.mean, cfg.std)
    return out_img.astype(np.float32), out_msk
