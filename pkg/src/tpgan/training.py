"""Autoencoder pretraining and the alternating three-player loop.

One alternating iteration performs ``d_steps_per_g_step`` discriminator
updates, one generator update and one classifier update on a balanced batch.
An epoch is ``iterations_per_epoch`` such iterations (default: one pass over
the training set, ``ceil(|train| / m)``); set it to 1 for the
one-batch-per-epoch reading of the loop.
"""
from __future__ import annotations

import base64
import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import losses
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Batch, ImageSet, ImbalanceSpec, assemble_balanced_batch, compute_generation_counts,
                   generation_labels, minority_indices, one_hot, sample_actual_batch, to_nchw)
from .errors import CorruptCheckpoint, DivergedTraining, TPGANError, ValidationError
from .evaluation import MetricsRecord, evaluate_classifier, per_class_fid
from .networks import (Autoencoder, Classifier, Discriminator, Generator, build, get_profile,
                       init_generator_from_decoder)

logger = logging.getLogger(__name__)

VARIANTS = ("baseline", "v1", "v2", "v3")
LABEL_PRIORS = ("empirical", "uniform")


@dataclass
class TrainConfig:
    p_epochs: int = 300
    a_epochs: int = 300
    batch_size: int = 100
    lam: float = 10.0
    learning_rate: float = 2e-4
    classifier_learning_rate: float | None = None  # None: same as learning_rate
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    d_steps_per_g_step: int = 10
    iterations_per_epoch: int | None = None
    variant: str = "v3"
    seed: int = 0
    profile: str = "full"
    gp_target: str = "logit"
    label_prior: str = "uniform"
    eval_every: int = 10
    fid_per_class: int = 1500

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        for name in ("p_epochs", "a_epochs", "eval_every"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        for name in ("batch_size", "d_steps_per_g_step"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if self.iterations_per_epoch is not None and self.iterations_per_epoch < 1:
            raise ValidationError("iterations_per_epoch must be positive")
        for name in ("learning_rate", "classifier_learning_rate"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ValidationError(f"{name} must be positive")
        if self.lam < 0:
            raise ValidationError("lam must be >= 0")
        if self.gp_target not in losses.GP_TARGETS:
            raise ValidationError(f"gp_target must be one of {losses.GP_TARGETS}")
        if self.label_prior not in LABEL_PRIORS:
            raise ValidationError(f"label_prior must be one of {LABEL_PRIORS}")
        get_profile(self.profile)

    @property
    def uses_gan(self) -> bool:
        return self.variant != "baseline"

    @property
    def classifier_term(self) -> bool:
        return self.variant in ("v2", "v3")

    @property
    def stabilized(self) -> bool:
        return self.variant == "v3"

    def iterations(self, n_train: int) -> int:
        if self.iterations_per_epoch is not None:
            return self.iterations_per_epoch
        return max(1, math.ceil(n_train / self.batch_size))


def _adam(module: nn.Module, cfg: TrainConfig, lr: float | None = None) -> torch.optim.Adam:
    lr = cfg.learning_rate if lr is None else lr
    return torch.optim.Adam(module.parameters(), lr=lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps)


@dataclass
class TrainState:
    cfg: TrainConfig
    num_classes: int
    channels: int
    classifier: Classifier
    discriminator: Discriminator | None = None
    generator: Generator | None = None
    opt_c: torch.optim.Optimizer | None = None
    opt_d: torch.optim.Optimizer | None = None
    opt_g: torch.optim.Optimizer | None = None
    np_rng: np.random.Generator = field(default_factory=np.random.default_rng)
    torch_rng: torch.Generator = field(default_factory=torch.Generator)
    epoch: int = 0
    log: list[dict] = field(default_factory=list)
    pretrain_log: list[dict] = field(default_factory=list)

    def networks(self) -> dict[str, nn.Module]:
        nets = {"classifier": self.classifier}
        if self.discriminator is not None:
            nets["discriminator"] = self.discriminator
        if self.generator is not None:
            nets["generator"] = self.generator
        return nets

    def optimizers(self) -> dict[str, torch.optim.Optimizer]:
        opts = {"opt_c": self.opt_c, "opt_d": self.opt_d, "opt_g": self.opt_g}
        return {k: v for k, v in opts.items() if v is not None}

    def grad_norms(self) -> list[float]:
        return [row["grad_norm_G"] for row in self.log]


def _rngs(seed: int) -> tuple[np.random.Generator, torch.Generator]:
    return np.random.default_rng(seed), torch.Generator().manual_seed(seed)


def init_state(cfg: TrainConfig, num_classes: int, channels: int,
               autoencoder: Autoencoder | None = None) -> TrainState:
    """Fresh networks; the generator copies ``autoencoder.decoder`` when given."""
    seed = cfg.seed
    classifier = build("classifier", cfg.profile, channels, num_classes, seed=seed * 7919 + 1)
    opt_c = _adam(classifier, cfg, cfg.classifier_learning_rate)
    state = TrainState(cfg, num_classes, channels, classifier, opt_c=opt_c)
    state.np_rng, state.torch_rng = _rngs(seed)
    if cfg.uses_gan:
        state.discriminator = build("discriminator", cfg.profile, channels, num_classes, seed=seed * 7919 + 2)
        if autoencoder is not None:
            state.generator = init_generator_from_decoder(autoencoder)
        else:
            state.generator = build("generator", cfg.profile, channels, num_classes, seed=seed * 7919 + 3)
        state.opt_d = _adam(state.discriminator, cfg)
        state.opt_g = _adam(state.generator, cfg)
    return state


# -- pretraining --------------------------------------------------------------


def pretrain_autoencoder(train: ImageSet, cfg: TrainConfig, holdout_fraction: float = 0.1) -> tuple[Autoencoder, list[dict]]:
    """Fit an autoencoder by mini-batch MSE descent for ``cfg.p_epochs`` epochs.

    A held-out fraction of ``train`` is scored every epoch but never stepped on.
    """
    if len(train) == 0:
        raise ValidationError("empty training set")
    channels = train.image_shape[2]
    ae = build("autoencoder", cfg.profile, channels, train.num_classes, seed=cfg.seed * 7919 + 4)
    if cfg.p_epochs == 0:
        return ae, []
    rng = np.random.default_rng(cfg.seed + 104729)
    n_hold = int(len(train) * holdout_fraction) if len(train) >= 10 else 0
    perm = rng.permutation(len(train))
    fit_set, hold_set = train.subset(perm[n_hold:]), train.subset(perm[:n_hold])
    opt = _adam(ae, cfg)
    m = min(cfg.batch_size, len(fit_set))
    dtype = next(ae.parameters()).dtype
    history = []
    for epoch in range(1, cfg.p_epochs + 1):
        ae.train()
        total = 0.0
        iters = cfg.iterations(len(fit_set))
        for _ in range(iters):
            batch = sample_actual_batch(fit_set, m, rng)
            x = batch.images.to(dtype)
            loss = losses.reconstruction_loss(ae(x, one_hot(batch.labels, train.num_classes, dtype)), x)
            if not torch.isfinite(loss):
                raise DivergedTraining(f"reconstruction loss non-finite at pretraining epoch {epoch}")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            total += float(loss.detach())
        row = {"epoch": epoch, "train_mse": total / iters}
        if n_hold:
            row["holdout_mse"] = reconstruction_error(ae, hold_set)
        history.append(row)
        logger.debug("pretrain epoch %d: %s", epoch, row)
    return ae, history


@torch.no_grad()
def reconstruction_error(ae: Autoencoder, data: ImageSet) -> float:
    was_training = ae.training
    ae.eval()
    dtype = next(ae.parameters()).dtype
    x = to_nchw(data.images, dtype)
    err = float(losses.reconstruction_loss(ae(x, one_hot(data.labels, data.num_classes, dtype)), x))
    ae.train(was_training)
    return err


# -- alternating optimization -------------------------------------------------


def _noise(state: TrainState, n: int, labels: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    dtype = next(state.classifier.parameters()).dtype
    z = torch.randn(n, state.generator.profile.noise_dim, generator=state.torch_rng, dtype=dtype)
    if labels is None:
        labels = torch.randint(0, state.num_classes, (n,), generator=state.torch_rng)
    return z, one_hot(labels, state.num_classes, dtype)


def _grad_norm(grads) -> float:
    return float(torch.sqrt(sum((g.detach() ** 2).sum() for g in grads if g is not None)))


def _apply(opt: torch.optim.Optimizer, params, grads) -> None:
    for p, g in zip(params, grads):
        p.grad = g
    opt.step()
    for p in params:
        p.grad = None


def discriminator_step(state: TrainState, train: ImageSet, m: int) -> dict[str, float]:
    cfg = state.cfg
    D, G = state.discriminator, state.generator
    dtype = next(D.parameters()).dtype
    actual = sample_actual_batch(train, m, state.np_rng)
    x_a = actual.images.to(dtype)
    y_a = one_hot(actual.labels, state.num_classes, dtype)
    z, y_g = _noise(state, m, actual.labels if cfg.label_prior == "empirical" else None)
    y_m = losses.sample_mislabels(y_a, state.num_classes, state.torch_rng) if cfg.stabilized else None
    lam = cfg.lam if cfg.stabilized else 0.0
    terms = losses.discriminator_terms(D, G, x_a, y_a, z, y_g, y_m, lam, state.torch_rng, cfg.gp_target)
    total = sum(v for k, v in terms.items() if k != "penalty")
    if "penalty" in terms:
        total = total + lam * terms["penalty"]
    if not torch.isfinite(total):
        raise DivergedTraining("discriminator loss is not finite")
    params = list(D.parameters())
    grads = torch.autograd.grad(total, params)
    _apply(state.opt_d, params, grads)
    out = {k: float(v.detach()) for k, v in terms.items()}
    out["total"] = float(total.detach())
    return out


def generator_step(state: TrainState, m: int, prior: np.ndarray | None = None) -> tuple[float, float]:
    """One generator update; returns ``(loss, ||grad_theta_g L^G||)``.

    Conditioning labels are drawn from ``prior`` (class frequencies) or uniformly.
    """
    cfg = state.cfg
    G = state.generator
    labels = None
    if prior is not None:
        labels = torch.multinomial(torch.as_tensor(prior, dtype=torch.float64), m, replacement=True,
                                   generator=state.torch_rng)
    z, y_g = _noise(state, m, labels)
    loss = losses.generator_loss(G, state.discriminator, state.classifier, z, y_g,
                                 with_classifier_term=cfg.classifier_term)
    params = list(G.parameters())
    grads = torch.autograd.grad(loss, params)
    norm = _grad_norm(grads)
    if not math.isfinite(norm):
        raise DivergedTraining("generator gradient is not finite")
    _apply(state.opt_g, params, grads)
    return float(loss.detach()), norm


def classifier_batch(state: TrainState, train: ImageSet, m: int, minorities: list[int]) -> tuple[Batch, Batch]:
    """Actual batch of ``m`` plus the generated top-up that levels it."""
    dtype = next(state.classifier.parameters()).dtype
    actual = sample_actual_batch(train, m, state.np_rng)
    actual = Batch(actual.images.to(dtype), actual.labels, actual.generated)
    if not state.cfg.uses_gan:
        return actual, Batch(actual.images[:0], actual.labels[:0])
    m_g = compute_generation_counts(actual.labels.numpy(), state.num_classes, minorities)
    labels = torch.from_numpy(generation_labels(m_g))
    if len(labels) == 0:
        return actual, Batch(actual.images[:0], actual.labels[:0])
    z, y_g = _noise(state, len(labels), labels)
    with torch.no_grad():
        images = state.generator(z, y_g)
    return actual, Batch(images, labels, torch.ones(len(labels), dtype=torch.bool))


def classifier_step(state: TrainState, train: ImageSet, m: int, minorities: list[int]) -> dict:
    actual, generated = classifier_batch(state, train, m, minorities)
    C = state.classifier
    dtype = next(C.parameters()).dtype
    if state.cfg.uses_gan:
        batch = assemble_balanced_batch(actual, generated, state.num_classes)
    else:
        batch = actual
    y = one_hot(batch.labels, state.num_classes, dtype)
    gen = batch.generated
    loss = losses.classifier_loss(C, batch.images[~gen], y[~gen], batch.images[gen], y[gen])
    params = list(C.parameters())
    grads = torch.autograd.grad(loss, params)
    _apply(state.opt_c, params, grads)
    return {"loss": float(loss.detach()), "counts": batch.class_counts(state.num_classes)}


def train_step(state: TrainState, train: ImageSet, spec: ImbalanceSpec, observer=None) -> TrainState:
    """Advance ``state`` by one epoch of alternating iterations (mutates and returns it).

    ``observer``, if given, is called with the per-class counts of every
    classifier batch.
    """
    cfg = state.cfg
    m = min(cfg.batch_size, len(train))
    minorities = minority_indices(spec)
    sums = {"L_D": 0.0, "L_G": 0.0, "L_C": 0.0, "grad_norm_G": 0.0}
    iters = cfg.iterations(len(train))
    prior = train.class_counts() / len(train) if cfg.label_prior == "empirical" else None
    for _ in range(iters):
        if cfg.uses_gan:
            for _ in range(cfg.d_steps_per_g_step):
                sums["L_D"] += discriminator_step(state, train, m)["total"] / cfg.d_steps_per_g_step
            loss_g, norm = generator_step(state, m, prior)
            sums["L_G"] += loss_g
            sums["grad_norm_G"] += norm
        result = classifier_step(state, train, m, minorities)
        sums["L_C"] += result["loss"]
        if observer is not None:
            observer(result["counts"])
    state.epoch += 1
    row = {"epoch": state.epoch, **{k: v / iters for k, v in sums.items()}}
    if not cfg.uses_gan:
        row.update(L_D=math.nan, L_G=math.nan, grad_norm_G=math.nan)
    state.log.append(row)
    return state


# -- checkpoints ---------------------------------------------------------------


def _opt_tensors(opt: torch.optim.Optimizer) -> tuple[dict[str, torch.Tensor], list]:
    sd = opt.state_dict()
    tensors = {}
    for idx, slot in sd["state"].items():
        for key, value in slot.items():
            tensors[f"{idx}.{key}"] = torch.as_tensor(value)
    return tensors, sd["param_groups"]


def _load_opt(opt: torch.optim.Optimizer, tensors: dict[str, torch.Tensor], groups: list) -> None:
    slots: dict[int, dict] = {}
    for name, value in tensors.items():
        idx, key = name.split(".", 1)
        slots.setdefault(int(idx), {})[key] = value
    opt.load_state_dict({"state": slots, "param_groups": groups})


def save_state(state: TrainState, path: str | Path) -> Path:
    tensors: dict[str, dict[str, torch.Tensor]] = {k: v.state_dict() for k, v in state.networks().items()}
    groups = {}
    for name, opt in state.optimizers().items():
        tensors[name], groups[name] = _opt_tensors(opt)
    meta = {
        "config": asdict(state.cfg),
        "num_classes": state.num_classes,
        "channels": state.channels,
        "param_groups": groups,
        "log": state.log,
        "np_rng": state.np_rng.bit_generator.state,
        "torch_rng": base64.b64encode(state.torch_rng.get_state().numpy().tobytes()).decode(),
    }
    return save_checkpoint(path, tensors, state.cfg.profile, state.epoch, meta)


def load_state(path: str | Path) -> TrainState:
    header, tensors = load_checkpoint(path)
    meta = header["meta"]
    names = {f.name for f in fields(TrainConfig)}
    cfg = TrainConfig(**{k: v for k, v in meta["config"].items() if k in names})
    state = init_state(cfg, meta["num_classes"], meta["channels"])
    for name, net in state.networks().items():
        net.load_state_dict(tensors[name])
    for name, opt in state.optimizers().items():
        _load_opt(opt, tensors[name], meta["param_groups"][name])
    state.epoch = header["epoch"]
    state.log = meta["log"]
    state.np_rng.bit_generator.state = meta["np_rng"]
    state.torch_rng.set_state(torch.frombuffer(bytearray(base64.b64decode(meta["torch_rng"])), dtype=torch.uint8))
    return state


def load_generator(path: str | Path) -> tuple[Generator, dict]:
    header, tensors = load_checkpoint(path)
    meta = header["meta"]
    if "generator" not in tensors:
        raise CorruptCheckpoint(f"{path} holds no generator")
    gen = Generator(header["profile"], meta["channels"], meta["num_classes"])
    try:
        gen.load_state_dict(tensors["generator"])
    except RuntimeError as exc:
        raise CorruptCheckpoint(str(exc)) from exc
    return gen, header


# -- full run ------------------------------------------------------------------

LOG_COLUMNS = ("epoch", "L_D", "L_G", "L_C", "grad_norm_G", "F", "P", "R")


def write_training_log(path: str | Path, log: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in log:
            writer.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                             for c in LOG_COLUMNS])


def train(train_set: ImageSet, test_set: ImageSet, spec: ImbalanceSpec, cfg: TrainConfig,
          out_dir: str | Path | None = None, fid_extractor: Classifier | None = None,
          fid_reference: ImageSet | None = None, state: TrainState | None = None) -> tuple[TrainState, MetricsRecord]:
    """Pretrain (GAN variants), alternate for ``a_epochs`` epochs and evaluate.

    Per-class FID uses ``fid_extractor`` features (default: the run's own
    classifier) against images of ``fid_reference`` (default: ``test_set``).
    Passing ``state`` resumes from it.
    """
    if len(train_set) == 0 or len(test_set) == 0:
        raise ValidationError("train and test sets must be non-empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    channels = train_set.image_shape[2]
    size = get_profile(cfg.profile).image_size
    if train_set.image_shape[0] != size:
        raise ValidationError(f"profile {cfg.profile!r} expects {size}px images, got {train_set.image_shape[0]}px")

    if state is None:
        ae = None
        pre_log: list[dict] = []
        if cfg.uses_gan:
            ae, pre_log = pretrain_autoencoder(train_set, cfg)
        state = init_state(cfg, train_set.num_classes, channels, ae)
        state.pretrain_log = pre_log

    def _evaluate() -> None:
        record = evaluate_classifier(state.classifier, test_set, state.epoch)
        if state.log and state.log[-1]["epoch"] == state.epoch:
            state.log[-1].update(F=record.macro_f, P=record.macro_precision, R=record.macro_recall)
        if out is not None:
            save_state(state, out / f"checkpoint_{state.epoch:04d}.ckpt")
            write_training_log(out / "training_log.csv", state.log)

    while state.epoch < cfg.a_epochs:
        train_step(state, train_set, spec)
        row = state.log[-1]
        logger.info("epoch %d: L_D=%.4f L_G=%.4f L_C=%.4f |grad G|=%.4g", row["epoch"], row["L_D"],
                    row["L_G"], row["L_C"], row["grad_norm_G"])
        if cfg.eval_every and state.epoch % cfg.eval_every == 0 and state.epoch < cfg.a_epochs:
            _evaluate()

    record = evaluate_classifier(state.classifier, test_set, state.epoch)
    if state.log:
        state.log[-1].update(F=record.macro_f, P=record.macro_precision, R=record.macro_recall)
    if cfg.uses_gan:
        extractor = fid_extractor if fid_extractor is not None else state.classifier
        reference = fid_reference if fid_reference is not None else test_set
        fid_rng = torch.Generator().manual_seed(cfg.seed + 15485863)
        record.fid = per_class_fid(extractor, state.generator, reference, range(state.num_classes),
                                   fid_rng, per_class=cfg.fid_per_class)
    record.grad_norms = state.grad_norms()
    if out is not None:
        save_state(state, out / "checkpoint_final.ckpt")
        write_training_log(out / "training_log.csv", state.log)
    return state, record


def train_reference_classifier(data: ImageSet, cfg: TrainConfig, epochs: int = 30, seed: int = 12345) -> Classifier:
    """Classifier fitted on class-balanced batches of ``data``; used as a fixed FID feature map."""
    net = build("classifier", cfg.profile, data.image_shape[2], data.num_classes, seed=seed)
    opt = _adam(net, TrainConfig(learning_rate=1e-3, profile=cfg.profile))
    rng = np.random.default_rng(seed)
    by_class = [np.flatnonzero(data.labels == c) for c in range(data.num_classes)]
    per = max(1, cfg.batch_size // data.num_classes)
    steps = epochs * max(1, len(data) // (per * data.num_classes))
    dtype = next(net.parameters()).dtype
    for _ in range(steps):
        idx = np.concatenate([rng.choice(members, per, replace=len(members) < per) for members in by_class])
        x = to_nchw(data.images[idx], dtype)
        y = one_hot(data.labels[idx], data.num_classes, dtype)
        loss = losses.classifier_loss(net, x, y)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    net.eval()
    return net


__all__ = [
    "TrainConfig", "TrainState", "VARIANTS", "init_state", "pretrain_autoencoder", "train_step", "train",
    "save_state", "load_state", "load_generator", "train_reference_classifier", "TPGANError",
]
