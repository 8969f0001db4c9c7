"""Image/mask loading, JSON-lines manifests, seeded splits and a synthetic
lesion generator."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

MASK_THRESHOLD = 128
IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class DatasetManifest:
    name: str
    entries: list[tuple[str, str]]
    split: str = "train"
    image_size: int = 256
    root: Path | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() or self.root is None else self.root / p

    def write(self, path) -> Path:
        """JSON lines: one ``{"image": ..., "mask": ...}`` object per pair."""
        path = Path(path)
        with path.open("w") as fh:
            for image, mask in self.entries:
                fh.write(json.dumps({"image": image, "mask": mask}) + "\n")
        return path

    @classmethod
    def read(cls, path, image_size: int = 256, split: str = "train", name: str | None = None) -> "DatasetManifest":
        path = Path(path)
        entries = []
        with path.open() as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                row = json.loads(line)
                if set(row) != {"image", "mask"}:
                    raise ValueError(f"{path}:{lineno}: expected keys image and mask, got {sorted(row)}")
                entries.append((row["image"], row["mask"]))
        return cls(name or path.stem, entries, split, image_size, root=path.parent)

    @classmethod
    def from_directory(cls, root, image_size: int = 256, name: str | None = None) -> "DatasetManifest":
        """Pair ``root/images/<stem>.*`` with ``root/masks/<stem>*.*`` by stem.

        ISIC ground-truth files named ``<stem>_segmentation.png`` are matched too.
        """
        root = Path(root)
        masks = {}
        for m in sorted((root / "masks").iterdir()):
            if m.suffix.lower() in IMAGE_SUFFIXES:
                stem = m.stem[:-len("_segmentation")] if m.stem.endswith("_segmentation") else m.stem
                masks[stem] = m
        entries = []
        for img in sorted((root / "images").iterdir()):
            if img.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            if img.stem not in masks:
                raise FileNotFoundError(f"no mask for image {img.name}")
            entries.append((str(img.relative_to(root)), str(masks[img.stem].relative_to(root))))
        if not entries:
            raise ValueError(f"no images found under {root / 'images'}")
        return cls(name or root.name, entries, "train", image_size, root=root)


def _open(path: Path) -> Image.Image:
    try:
        img = Image.open(path)
        img.load()
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if img.width == 0 or img.height == 0:
        raise ValueError(f"{path} has a zero dimension")
    return img


def load_image(path, target_size: int) -> np.ndarray:
    """RGB image, bilinear-resized to ``target_size`` square, scaled to [0, 1]."""
    img = _open(Path(path)).convert("RGB")
    if img.size != (target_size, target_size):
        img = img.resize((target_size, target_size), Image.BILINEAR)
    return np.clip(np.asarray(img, dtype=np.float32) / 255.0, 0.0, 1.0)


def load_mask(path, target_size: int) -> np.ndarray:
    """Grayscale mask, nearest-resized, binarised at 128. Shape ``[S, S, 1]``."""
    img = _open(Path(path)).convert("L")
    if img.size != (target_size, target_size):
        img = img.resize((target_size, target_size), Image.NEAREST)
    return (np.asarray(img) >= MASK_THRESHOLD).astype(np.float32)[..., None]


def load_sample(image_path, mask_path, target_size: int) -> tuple[np.ndarray, np.ndarray]:
    return load_image(image_path, target_size), load_mask(mask_path, target_size)


def save_mask(mask, path) -> Path:
    """Write a binary mask as an 8-bit {0, 255} grayscale PNG."""
    m = np.asarray(mask)
    if m.ndim == 3:
        m = m[..., 0]
    Image.fromarray((m > 0).astype(np.uint8) * 255, mode="L").save(path)
    return Path(path)


def load_dataset(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """Materialise every pair: images ``[N,S,S,3]`` and masks ``[N,S,S,1]``."""
    if not manifest.entries:
        raise ValueError(f"manifest {manifest.name!r} is empty")
    images, masks = [], []
    for image, mask in manifest.entries:
        x, y = load_sample(manifest.resolve(image), manifest.resolve(mask), manifest.image_size)
        images.append(x)
        masks.append(y)
    return np.stack(images), np.stack(masks)


def split_manifest(manifest, fractions=(0.8, 0.1, 0.1), seed: int = 0,
                   names=("train", "val", "test")) -> list[DatasetManifest]:
    """Seeded shuffle then contiguous split. Sizes are rounded down, with the
    remainder going to the earliest splits. ``manifest`` may also be a plain
    list of ``(image, mask)`` pairs."""
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest("entries", [tuple(e) for e in manifest])
    n = len(manifest.entries)
    if n == 0:
        raise ValueError("cannot split an empty manifest")
    fractions = [float(f) for f in fractions]
    if any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be nonnegative and sum to 1, got {fractions}")
    sizes = [int(np.floor(f * n + 1e-9)) for f in fractions]
    for i in range(n - sum(sizes)):
        sizes[i % len(sizes)] += 1
    order = np.random.default_rng(seed).permutation(n)
    out, start = [], 0
    for size, name in zip(sizes, names):
        picked = [manifest.entries[i] for i in order[start:start + size]]
        out.append(replace(manifest, entries=picked, split=name))
        start += size
    return out


# -- synthetic lesions -------------------------------------------------------------

def _lesion(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    base = rng.uniform(0.55, 0.8, size=3) * np.array([1.0, 0.85, 0.75])
    shade = 1.0 + 0.08 * (xx / size - 0.5)[..., None]
    image = np.clip(base * shade + rng.normal(0.0, 0.03, size=(size, size, 3)), 0.0, 1.0)
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(int(rng.integers(1, 3))):
        cy, cx = rng.uniform(0.3, 0.7, size=2) * size
        ry, rx = rng.uniform(0.08, 0.25, size=2) * size
        theta = rng.uniform(0.0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = (dx * np.cos(theta) + dy * np.sin(theta)) / rx
        v = (-dx * np.sin(theta) + dy * np.cos(theta)) / ry
        mask |= u * u + v * v <= 1.0
    return image, mask


def _render(rng: np.random.Generator, size: int, image: np.ndarray, mask: np.ndarray) -> Image.Image:
    colour = rng.uniform(0.15, 0.35, size=3) * np.array([1.0, 0.7, 0.55])
    alpha = Image.fromarray(mask.astype(np.uint8) * 255, mode="L").filter(ImageFilter.GaussianBlur(size / 128))
    a = np.asarray(alpha, dtype=np.float64)[..., None] / 255.0
    lesion = colour + rng.normal(0.0, 0.02, size=image.shape)
    rgb = Image.fromarray(np.round(np.clip((1 - a) * image + a * lesion, 0, 1) * 255).astype(np.uint8), mode="RGB")
    draw = ImageDraw.Draw(rgb)
    for _ in range(int(rng.integers(1, 4))):
        pts = [tuple(float(v) for v in rng.uniform(0, size, size=2))]
        for _ in range(3):
            step = rng.normal(0.0, size / 6, size=2)
            pts.append((pts[-1][0] + float(step[0]), pts[-1][1] + float(step[1])))
        shade = int(rng.integers(20, 60))
        draw.line(pts, fill=(shade, shade // 2, shade // 3), width=max(1, size // 128))
    return rgb


def synth_lesions(n: int, size: int, seed: int, out_dir) -> DatasetManifest:
    """Write ``n`` synthetic dermoscopy-like images with exact elliptical masks.

    Produces ``images/``, ``masks/`` and ``manifest.jsonl`` under ``out_dir``.
    Every mask covers between 2 % and 60 % of the image.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    if size < 8 or size & (size - 1):
        raise ValueError(f"size must be a power of two, got {size}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []
    for i in range(n):
        while True:
            image, mask = _lesion(rng, size)
            if 0.02 <= mask.mean() <= 0.6:
                break
        rgb = _render(rng, size, image, mask)
        stem = f"lesion_{i:04d}"
        rgb.save(out / "images" / f"{stem}.png")
        save_mask(mask, out / "masks" / f"{stem}.png")
        entries.append((f"images/{stem}.png", f"masks/{stem}.png"))
    manifest = DatasetManifest(f"synth-{seed}", entries, "train", size, root=out)
    manifest.write(out / "manifest.jsonl")
    return manifest
