"""Experiment harness: split preparation, repeated runs, metric tables and run manifests.

Layout of an experiment directory::

    config.txt              snapshot of the resolved configuration
    split/                  train.manifest, test.manifest, split_summary.txt, images/
    reference.ckpt          fixed classifier whose features feed FID
    runs/seed_0003/         training_log.csv, checkpoints, metrics.json
    metrics.csv             per-run per-class rows, macro rows and mean rows
    run_manifest.json       index of everything above
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .baselines import oversample
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .data import (ImageSet, build_imbalanced_split, export_image_folder, load_manifest_dataset,
                   minority_indices, save_png, write_manifest)
from .datasets import load_idx_dataset, synthetic_garments
from .errors import DataError, ValidationError
from .evaluation import MetricsRecord
from .networks import build, get_profile
from . import training

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ("variant", "seed", "balanced_ratio", "class", "precision", "recall", "f_score", "fid")
SAMPLING_METHODS = ("smote", "b-smote", "adasyn")
REFERENCE_SEED = 12345


# -- data -----------------------------------------------------------------------


def load_source(cfg: ExperimentConfig) -> ImageSet:
    """Load ``dataset.source`` at the image size of the configured profile."""
    size = get_profile(cfg.train.profile).image_size
    src = cfg.dataset.source
    if src.startswith("synthetic:"):
        if src != "synthetic:garments":
            raise ValidationError(f"unknown synthetic dataset {src!r}")
        data = synthetic_garments(cfg.dataset.per_class, cfg.dataset.seed, size)
    elif src.startswith("idx:"):
        parts = src[4:].split(",")
        if len(parts) != 2:
            raise ValidationError("idx source must be 'idx:<images>,<labels>'")
        data = load_idx_dataset(parts[0], parts[1], size)
    else:
        if not Path(src).is_file():
            raise DataError(f"dataset manifest {src} not found")
        data = load_manifest_dataset(src, size, cfg.dataset.channels)
    if data.image_shape[2] != cfg.dataset.channels:
        raise ValidationError(f"dataset has {data.image_shape[2]} channels, config says {cfg.dataset.channels}")
    return data


@dataclass
class PreparedSplit:
    train_manifest: Path
    test_manifest: Path
    summary: Path

    @classmethod
    def at(cls, out_dir: str | Path) -> "PreparedSplit":
        root = Path(out_dir) / "split"
        return cls(root / "train.manifest", root / "test.manifest", root / "split_summary.txt")

    def exists(self) -> bool:
        return self.train_manifest.is_file() and self.test_manifest.is_file()


def split_summary(train: ImageSet, test: ImageSet, cfg: ExperimentConfig) -> str:
    spec = cfg.split.spec()
    names = train.class_names or tuple(str(c) for c in spec.classes)
    tr, te = train.class_counts(), test.class_counts()
    major = spec.classes.index(spec.majority_class)
    lines = [f"source: {cfg.dataset.source}", f"declared balanced ratio: {spec.balanced_ratio}",
             "class\tsource_label\ttrain\ttest"]
    for k, c in enumerate(spec.classes):
        lines.append(f"{names[k]}\t{c}\t{int(tr[k])}\t{int(te[k])}")
    minor = [int(tr[k]) for k in range(len(tr)) if k != major]
    lines.append(f"minority count: {min(minor) if minor else 0}")
    lines.append(f"realized ratio: {min(minor) / int(tr[major]):.4f}" if minor else "realized ratio: n/a")
    return "\n".join(lines) + "\n"


def prepare(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> PreparedSplit:
    """Draw the imbalanced split and write it as PNG files plus two manifests."""
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else cfg.output_path()
    split = PreparedSplit.at(out)
    train, test = build_imbalanced_split(load_source(cfg), cfg.split.spec())
    root = split.train_manifest.parent
    for part, manifest in ((train, split.train_manifest), (test, split.test_manifest)):
        export_image_folder(part, root, manifest.name)
    split.summary.write_text(split_summary(train, test, cfg))
    (root / "classes.txt").write_text("".join(f"{n}\n" for n in train.class_names))
    logger.info("prepared split in %s", root)
    return split


def load_split(cfg: ExperimentConfig, split: PreparedSplit) -> tuple[ImageSet, ImageSet]:
    size = get_profile(cfg.train.profile).image_size
    names_file = split.train_manifest.parent / "classes.txt"
    names = tuple(names_file.read_text().split("\n")[:-1]) if names_file.is_file() else ()
    k = len(cfg.split.spec().classes)
    out = []
    for manifest in (split.train_manifest, split.test_manifest):
        part = load_manifest_dataset(manifest, size, cfg.dataset.channels, names)
        if part.num_classes != k:
            part = ImageSet(part.images, part.labels, k, class_names=names, paths=part.paths)
        out.append(part)
    return out[0], out[1]


# -- reference feature network -----------------------------------------------------


def reference_classifier(cfg: ExperimentConfig, data: ImageSet, path: Path):
    """Train (or reload) the fixed classifier used as the FID feature map."""
    net = build("classifier", cfg.train.profile, data.image_shape[2], data.num_classes, seed=REFERENCE_SEED)
    if path.is_file():
        _, tensors = load_checkpoint(path)
        net.load_state_dict(tensors["classifier"])
        return net.eval()
    net = training.train_reference_classifier(data, cfg.train, cfg.experiment.reference_epochs, REFERENCE_SEED)
    save_checkpoint(path, {"classifier": net.state_dict()}, cfg.train.profile, cfg.experiment.reference_epochs,
                    {"seed": REFERENCE_SEED, "num_classes": data.num_classes})
    return net


# -- runs ---------------------------------------------------------------------------


@dataclass
class RunEntry:
    seed: int
    run_dir: str
    metrics: str
    training_log: str
    checkpoint: str
    seconds: float
    macro_f: float
    macro_precision: float
    macro_recall: float
    mean_fid: float | None = None
    synthetic: int = 0


@dataclass
class RunManifest:
    method: str
    balanced_ratio: float
    config: str
    seeds: list[int]
    runs: list[RunEntry]
    metrics_csv: str
    train_manifest: str
    test_manifest: str
    reference: str | None = None
    class_names: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        raw = json.loads(text)
        raw["runs"] = [RunEntry(**r) for r in raw["runs"]]
        return cls(**raw)

    def referenced_files(self) -> list[str]:
        files = [self.metrics_csv, self.train_manifest, self.test_manifest]
        if self.reference:
            files.append(self.reference)
        for r in self.runs:
            files += [r.metrics, r.training_log, r.checkpoint]
        return files


def write_run_manifest(manifest: RunManifest, path: str | Path) -> Path:
    """Write the manifest; every path in it is relative to its folder and must exist."""
    path = Path(path)
    missing = [f for f in manifest.referenced_files() if not (path.parent / f).is_file()]
    if missing:
        raise DataError(f"manifest references missing files: {missing}")
    path.write_text(manifest.to_json())
    return path


def read_run_manifest(path: str | Path) -> RunManifest:
    try:
        return RunManifest.from_json(Path(path).read_text())
    except (json.JSONDecodeError, TypeError, KeyError) as exc:
        raise DataError(f"{path} is not a run manifest: {exc}") from exc


def _number(value) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return repr(float(value))


def metric_rows(method: str, seed, ratio: float, record: MetricsRecord, names) -> list[list[str]]:
    rows = []
    fid = record.fid
    for c in range(len(record.f_score)):
        rows.append([method, str(seed), repr(ratio), names[c], _number(record.precision[c]),
                     _number(record.recall[c]), _number(record.f_score[c]), _number(fid[c] if fid else None)])
    rows.append([method, str(seed), repr(ratio), "macro", _number(record.macro_precision),
                 _number(record.macro_recall), _number(record.macro_f),
                 _number(float(np.mean(fid)) if fid else None)])
    return rows


def mean_rows(rows: list[list[str]]) -> list[list[str]]:
    """Average every numeric column over seeds, one row per class (and the macro row)."""
    out = []
    labels = list(dict.fromkeys(r[3] for r in rows))
    for label in labels:
        group = [r for r in rows if r[3] == label]
        cells = []
        for col in range(4, len(METRIC_COLUMNS)):
            vals = [float(r[col]) for r in group if r[col] != ""]
            cells.append(_number(float(np.mean(vals))) if vals else "")
        out.append([group[0][0], "mean", group[0][2], label, *cells])
    return out


def write_metrics_csv(path: str | Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        writer.writerows(rows)


def read_metrics_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run_once(cfg: ExperimentConfig, seed: int, train: ImageSet, test: ImageSet, run_dir: Path,
             extractor=None, fid_reference: ImageSet | None = None) -> tuple[MetricsRecord, int]:
    """One repetition; sampling methods augment first and then train the classifier alone."""
    spec = cfg.split.spec()
    tc = cfg.train_config(seed)
    method = cfg.experiment.method
    synthetic = 0
    if method in SAMPLING_METHODS:
        train, flags = oversample(train, method, minority_indices(spec), cfg.experiment.k_neighbors, seed)
        synthetic = int(flags.sum())
    _, record = training.train(train, test, spec, tc, out_dir=run_dir, fid_extractor=extractor,
                               fid_reference=fid_reference)
    payload = record.as_dict()
    payload["grad_norms"] = record.grad_norms
    payload["seed"] = seed
    (run_dir / "metrics.json").write_text(json.dumps(payload, indent=2))
    return record, synthetic


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> RunManifest:
    """Run ``repetitions`` seeds of one method and write metrics plus a manifest."""
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else cfg.output_path()
    out.mkdir(parents=True, exist_ok=True)
    config_mod.save(cfg, out / "config.txt")
    split = PreparedSplit.at(out)
    if not split.exists():
        prepare(cfg, out)
    train, test = load_split(cfg, split)
    names = list(train.class_names) or [str(c) for c in range(train.num_classes)]

    extractor, fid_reference, reference = None, None, None
    if cfg.experiment.method.startswith("gan-"):
        union = ImageSet(np.concatenate([train.images, test.images]), np.concatenate([train.labels, test.labels]),
                         train.num_classes, class_names=train.class_names)
        extractor = reference_classifier(cfg, union, out / "reference.ckpt")
        fid_reference, reference = union, "reference.ckpt"

    seeds = [cfg.train.seed + i for i in range(cfg.experiment.repetitions)]
    rows: list[list[str]] = []
    entries = []
    for seed in seeds:
        run_dir = out / "runs" / f"seed_{seed:04d}"
        run_dir.mkdir(parents=True, exist_ok=True)
        started = time.perf_counter()
        record, synthetic = run_once(cfg, seed, train, test, run_dir, extractor, fid_reference)
        seconds = time.perf_counter() - started
        logger.info("%s seed %d: F=%.4f P=%.4f R=%.4f (%.0fs)", cfg.experiment.method, seed, record.macro_f,
                    record.macro_precision, record.macro_recall, seconds)
        rows += metric_rows(cfg.experiment.method, seed, cfg.split.balanced_ratio, record, names)
        rel = run_dir.relative_to(out)
        entries.append(RunEntry(seed, str(rel), str(rel / "metrics.json"), str(rel / "training_log.csv"),
                                str(rel / "checkpoint_final.ckpt"), seconds, record.macro_f,
                                record.macro_precision, record.macro_recall,
                                float(np.mean(record.fid)) if record.fid else None, synthetic))
    write_metrics_csv(out / "metrics.csv", rows + mean_rows(rows))
    manifest = RunManifest(cfg.experiment.method, cfg.split.balanced_ratio, config_mod.serialize(cfg), seeds,
                           entries, "metrics.csv", str(split.train_manifest.relative_to(out)),
                           str(split.test_manifest.relative_to(out)), reference, names)
    write_run_manifest(manifest, out / "run_manifest.json")
    return manifest


# -- stand-alone artifacts ------------------------------------------------------------


def oversample_split(cfg: ExperimentConfig, method: str, out_dir: str | Path) -> Path:
    """Write the prepared training split topped up by a sampling method, with origin flags."""
    out = Path(out_dir)
    split = PreparedSplit.at(cfg.output_path())
    if not split.exists():
        raise DataError(f"no prepared split under {cfg.output_path()}; run 'prepare' first")
    train, _ = load_split(cfg, split)
    augmented, flags = oversample(train, method, minority_indices(cfg.split.spec()), cfg.experiment.k_neighbors,
                                  cfg.train.seed)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records = []
    with open(out / "origin.tsv", "w") as fh:
        fh.write("path\tlabel\torigin\n")
        for i in range(len(augmented)):
            rel = f"images/{i:06d}.png"
            save_png(out / rel, augmented.images[i])
            records.append((rel, int(augmented.labels[i])))
            fh.write(f"{rel}\t{int(augmented.labels[i])}\t{'synthetic' if flags[i] else 'actual'}\n")
    write_manifest(out / "train.manifest", records)
    return out / "train.manifest"


@torch.no_grad()
def generate_images(checkpoint: str | Path, label: int, count: int, out_dir: str | Path, seed: int = 0) -> list[Path]:
    """Sample ``count`` images of class ``label`` from a saved generator; count 0 writes nothing."""
    if count < 0:
        raise ValidationError("count must be >= 0")
    gen, header = training.load_generator(checkpoint)
    num_classes = header["meta"]["num_classes"]
    if not 0 <= label < num_classes:
        raise ValidationError(f"class must lie in [0, {num_classes}), got {label}")
    if count == 0:
        return []
    gen.eval()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = torch.Generator().manual_seed(seed)
    z = torch.randn(count, gen.profile.noise_dim, generator=rng)
    y = torch.zeros(count, num_classes)
    y[:, label] = 1
    images = gen(z, y).permute(0, 2, 3, 1).numpy()
    paths, records = [], []
    for i, image in enumerate(images):
        rel = f"class{label}_{i:05d}.png"
        save_png(out / rel, image)
        paths.append(out / rel)
        records.append((rel, label))
    write_manifest(out / "generated.manifest", records)
    return paths
