"""Dataset ingestion, imbalanced splits and balanced-batch assembly.

Images are held as float32 arrays of shape (N, H, W, C) normalized to
[-1, 1]; they only become NCHW torch tensors when a :class:`Batch` is built.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import BatchTooLarge, DataError, ImbalancedAssembly, InsufficientData, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: int
    uid: int = -1


@dataclass
class ImageSet:
    """A labeled image collection backed by contiguous arrays.

    ``uids`` give every image a stable identity so splits can be checked for
    leakage; ``paths`` is only populated for sets loaded from a manifest.
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    uids: np.ndarray | None = None
    class_names: tuple[str, ...] = ()
    paths: list[str] | None = None

    def __post_init__(self) -> None:
        self.images = np.asarray(self.images, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ValidationError(f"images must be (N, H, W, C), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValidationError("images and labels differ in length")
        if self.uids is None:
            self.uids = np.arange(len(self.labels), dtype=np.int64)
        self.uids = np.asarray(self.uids, dtype=np.int64)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValidationError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> Sample:
        return Sample(self.images[i], int(self.labels[i]), int(self.uids[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])  # type: ignore[return-value]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, index: np.ndarray) -> "ImageSet":
        index = np.asarray(index, dtype=np.int64)
        return ImageSet(
            self.images[index],
            self.labels[index],
            self.num_classes,
            uids=self.uids[index],
            class_names=self.class_names,
            paths=None if self.paths is None else [self.paths[i] for i in index],
        )

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], num_classes: int) -> "ImageSet":
        return cls(
            np.stack([s.image for s in samples]),
            np.array([s.label for s in samples]),
            num_classes,
            uids=np.array([s.uid for s in samples]),
        )


@dataclass(frozen=True)
class ImbalanceSpec:
    """Declarative imbalanced split.

    ``minority_count`` overrides ``round(balanced_ratio * majority_count)``
    for published splits whose counts and ratio disagree.
    """

    majority_class: int
    minority_classes: tuple[int, ...]
    balanced_ratio: float
    majority_count: int
    seed: int = 0
    minority_count_override: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "minority_classes", tuple(int(c) for c in self.minority_classes))
        if self.majority_class in self.minority_classes:
            raise ValidationError("majority class also listed as minority")
        if len(set(self.minority_classes)) != len(self.minority_classes):
            raise ValidationError("duplicate minority classes")
        if not 0.0 < self.balanced_ratio <= 1.0:
            raise ValidationError(f"balanced_ratio must lie in (0, 1], got {self.balanced_ratio}")
        if self.majority_count < 1:
            raise ValidationError("majority_count must be positive")
        if self.minority_count < 1:
            raise ValidationError("derived minority count is zero")
        if self.minority_count_override is not None:
            implied = self.minority_count_override / self.majority_count
            if abs(implied - self.balanced_ratio) > 1.0 / self.majority_count:
                logger.warning(
                    "explicit minority count %d implies ratio %.3f, not the declared %.3f",
                    self.minority_count_override, implied, self.balanced_ratio,
                )

    @property
    def minority_count(self) -> int:
        if self.minority_count_override is not None:
            return int(self.minority_count_override)
        return int(math.floor(self.balanced_ratio * self.majority_count + 0.5))

    @property
    def classes(self) -> tuple[int, ...]:
        return tuple(sorted((self.majority_class, *self.minority_classes)))

    def required_counts(self) -> dict[int, int]:
        counts = {self.majority_class: self.majority_count}
        counts.update({c: self.minority_count for c in self.minority_classes})
        return counts


@dataclass
class Batch:
    """Images in NCHW layout plus labels and a per-row generated flag."""

    images: torch.Tensor
    labels: torch.Tensor
    generated: torch.Tensor = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValidationError("images and labels have different leading dimension")
        if self.generated is None:
            self.generated = torch.zeros(self.labels.shape[0], dtype=torch.bool)

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def class_counts(self, num_classes: int) -> np.ndarray:
        return np.bincount(self.labels.cpu().numpy(), minlength=num_classes)


def one_hot(labels: torch.Tensor | np.ndarray, num_classes: int, dtype=torch.float32) -> torch.Tensor:
    labels = torch.as_tensor(labels, dtype=torch.long)
    return F.one_hot(labels, num_classes).to(dtype)


def to_nchw(images: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(dtype)


def to_nhwc(images: torch.Tensor) -> np.ndarray:
    return images.detach().cpu().permute(0, 2, 3, 1).numpy()


def resize_images(images: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of an (N, H, W, C) array to (N, size, size, C)."""
    if images.shape[1] == size and images.shape[2] == size:
        return images.astype(np.float32, copy=False)
    t = to_nchw(images)
    out = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return np.clip(to_nhwc(out), -1.0, 1.0)


def normalize_uint8(pixels: np.ndarray) -> np.ndarray:
    return pixels.astype(np.float32) / 127.5 - 1.0


def denormalize_uint8(images: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((images + 1.0) * 127.5), 0, 255).astype(np.uint8)


# -- splits -------------------------------------------------------------------


def build_imbalanced_split(dataset: ImageSet, spec: ImbalanceSpec) -> tuple[ImageSet, ImageSet]:
    """Draw the imbalanced train split; everything left over becomes test.

    Labels of the returned sets are re-indexed to ``0..K-1`` following the
    sorted order of the involved source classes.
    """
    required = spec.required_counts()
    for cls, need in required.items():
        have = int(np.sum(dataset.labels == cls))
        if have < need:
            raise InsufficientData(f"class {cls}: need {need} training samples, dataset has {have}")

    rng = np.random.default_rng(spec.seed)
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for cls in spec.classes:
        members = np.flatnonzero(dataset.labels == cls)
        perm = members[rng.permutation(len(members))]
        train_idx.append(perm[: required[cls]])
        test_idx.append(np.sort(perm[required[cls]:]))

    remap = np.full(dataset.num_classes, -1, dtype=np.int64)
    remap[list(spec.classes)] = np.arange(len(spec.classes))
    names = tuple(dataset.class_names[c] for c in spec.classes) if dataset.class_names else ()

    def _take(index: np.ndarray) -> ImageSet:
        part = dataset.subset(index)
        return ImageSet(part.images, remap[part.labels], len(spec.classes), uids=part.uids,
                        class_names=names, paths=part.paths)

    return _take(np.concatenate(train_idx)), _take(np.concatenate(test_idx))


def remap_class(spec: ImbalanceSpec, source_class: int) -> int:
    return spec.classes.index(source_class)


def minority_indices(spec: ImbalanceSpec) -> list[int]:
    """Minority classes expressed in the re-indexed label space of a split."""
    return [remap_class(spec, c) for c in spec.minority_classes]


# -- batches ------------------------------------------------------------------


def sample_actual_batch(train: ImageSet, m: int, rng: np.random.Generator) -> Batch:
    if m > len(train):
        raise BatchTooLarge(f"batch of {m} requested from {len(train)} samples")
    if m < 1:
        raise ValidationError("batch size must be positive")
    idx = rng.permutation(len(train))[:m]
    return Batch(to_nchw(train.images[idx]), torch.from_numpy(train.labels[idx].copy()))


def compute_generation_counts(actual_labels, num_classes: int, minority_classes: Sequence[int]) -> np.ndarray:
    """Per-class number of generated samples needed to level the batch."""
    labels = np.asarray(actual_labels, dtype=np.int64)
    if labels.size == 0:
        raise ValidationError("actual_labels is empty")
    counts = np.bincount(labels, minlength=num_classes)
    target = counts.max()
    m_g = np.zeros(num_classes, dtype=np.int64)
    for c in minority_classes:
        m_g[c] = target - counts[c]
    return m_g


def generation_labels(m_g: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(m_g)), m_g)


def assemble_balanced_batch(actual: Batch, generated: Batch, num_classes: int | None = None) -> Batch:
    if num_classes is None:
        num_classes = int(max(actual.labels.max(), generated.labels.max() if len(generated) else 0)) + 1
    images = torch.cat([actual.images, generated.images.to(actual.images.dtype)])
    labels = torch.cat([actual.labels, generated.labels.to(actual.labels.dtype)])
    flags = torch.cat([actual.generated, generated.generated])
    counts = np.bincount(labels.numpy(), minlength=num_classes)
    if counts.min() != counts.max():
        raise ImbalancedAssembly(f"per-class counts after assembly are {counts.tolist()}")
    return Batch(images, labels, flags)


# -- manifests ----------------------------------------------------------------


def read_manifest(path: str | Path) -> list[tuple[str, int]]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.rsplit(None, 1)
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected '<path> <label>'")
            try:
                records.append((parts[0], int(parts[1])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: bad label {parts[1]!r}") from exc
    return records


def write_manifest(path: str | Path, records: Sequence[tuple[str, int]]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rel, label in records:
            fh.write(f"{rel}\t{int(label)}\n")


def load_image(path: str | Path, size: int, channels: int) -> np.ndarray:
    with Image.open(path) as im:
        im = im.convert("L" if channels == 1 else "RGB")
        im = im.resize((size, size), Image.BILINEAR)
        pixels = np.asarray(im, dtype=np.uint8)
    if pixels.ndim == 2:
        pixels = pixels[..., None]
    return normalize_uint8(pixels)


def load_manifest_dataset(manifest: str | Path, size: int = 64, channels: int = 1,
                          class_names: Sequence[str] = ()) -> ImageSet:
    """Load every image named in a manifest; relative paths resolve against its folder."""
    manifest = Path(manifest)
    records = read_manifest(manifest)
    if not records:
        raise DataError(f"{manifest} lists no images")
    root = manifest.parent
    images = np.stack([load_image(root / rel, size, channels) for rel, _ in records])
    labels = np.array([lab for _, lab in records])
    num_classes = max(int(labels.max()) + 1, len(class_names))
    return ImageSet(images, labels, num_classes, class_names=tuple(class_names),
                    paths=[rel for rel, _ in records])


def save_png(path: str | Path, image: np.ndarray) -> None:
    pixels = denormalize_uint8(image)
    if pixels.shape[-1] == 1:
        pixels = pixels[..., 0]
    Image.fromarray(pixels).save(path, format="PNG")


def export_image_folder(dataset: ImageSet, root: str | Path, manifest_name: str = "dataset.manifest") -> Path:
    """Write every image as PNG plus a manifest; returns the manifest path."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(len(dataset)):
        rel = f"images/{int(dataset.uids[i]):06d}.png"
        save_png(root / rel, dataset.images[i])
        records.append((rel, int(dataset.labels[i])))
    out = root / manifest_name
    write_manifest(out, records)
    return out
