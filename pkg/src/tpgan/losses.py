"""Objective functions of the three players.

Log-probabilities are computed from logits (log-sigmoid / log-softmax) so they
stay finite; values below ``log(1e-12)`` are floored with the gradient passed
through unchanged, so a saturated discriminator still shows up in the
generator's gradient instead of silently zeroing it.
"""
from __future__ import annotations

import logging
import math
from typing import Callable

import torch
import torch.nn.functional as F

from .errors import DegenerateLabelSpace, NonFiniteGradient, NonFiniteLoss, ShapeMismatch
from .networks import Classifier, Discriminator, Generator, condition

logger = logging.getLogger(__name__)

LOG_FLOOR = math.log(1e-12)
GP_TARGETS = ("probability", "logit")

floor_events = 0


def floor_log(logp: torch.Tensor) -> torch.Tensor:
    global floor_events
    below = logp.detach() < LOG_FLOOR
    if bool(below.any()):
        n = int(below.sum())
        floor_events += n
        logger.debug("log argument below 1e-12 for %d entries; floored", n)
        logp = logp + ((LOG_FLOOR - logp) * below).detach()
    return logp


def _check_finite(value: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(value).all():
        raise NonFiniteLoss(f"{what} is not finite")
    return value


def log_d(scores: torch.Tensor) -> torch.Tensor:
    """log D = log sigmoid(score)."""
    return floor_log(F.logsigmoid(scores))


def log_one_minus_d(scores: torch.Tensor) -> torch.Tensor:
    return floor_log(F.logsigmoid(-scores))


def cross_entropy(logits: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Mean of ``-y . log softmax(logits)`` over rows; ``y`` is one-hot."""
    return -(y.to(logits.dtype) * floor_log(F.log_softmax(logits, dim=1))).sum(dim=1).mean()


def sample_mislabels(y_a: torch.Tensor, num_classes: int, generator: torch.Generator | None = None) -> torch.Tensor:
    """One wrong label per row, uniform over the ``K - 1`` alternatives."""
    if num_classes < 2:
        raise DegenerateLabelSpace("mislabels need at least two classes")
    true = y_a.argmax(dim=1)
    offset = torch.randint(1, num_classes, true.shape, generator=generator)
    return F.one_hot((true + offset) % num_classes, num_classes).to(y_a.dtype)


def interpolate(x_a: torch.Tensor, x_g: torch.Tensor, generator: torch.Generator | None = None,
                alpha: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    if x_a.shape != x_g.shape:
        raise ShapeMismatch(f"actual {tuple(x_a.shape)} vs generated {tuple(x_g.shape)}")
    if alpha is None:
        alpha = torch.rand(x_a.shape[0], generator=generator, dtype=x_a.dtype)
    a = alpha.view(-1, *([1] * (x_a.ndim - 1)))
    return a * x_a + (1 - a) * x_g, alpha


def input_gradient_norms(critic: Callable[[torch.Tensor], torch.Tensor], inputs: torch.Tensor,
                         create_graph: bool = True) -> torch.Tensor:
    """Per-row L2 norm of d critic / d inputs."""
    inputs = inputs.detach().requires_grad_(True)
    out = critic(inputs)
    if not out.requires_grad:
        return torch.zeros(inputs.shape[0], dtype=inputs.dtype)
    (grad,) = torch.autograd.grad(out.sum(), inputs, create_graph=create_graph, allow_unused=True)
    if grad is None:
        return torch.zeros(inputs.shape[0], dtype=inputs.dtype)
    if not torch.isfinite(grad).all():
        raise NonFiniteGradient("discriminator input gradient contains NaN/Inf")
    return grad.flatten(1).norm(2, dim=1)


def critic_for(discriminator: Discriminator, target: str = "probability") -> Callable[[torch.Tensor], torch.Tensor]:
    if target == "logit":
        return discriminator.score
    if target == "probability":
        return lambda v: torch.sigmoid(discriminator.score(v))
    raise ValueError(f"gradient penalty target must be one of {GP_TARGETS}")


def gradient_penalty(critic: Callable[[torch.Tensor], torch.Tensor] | Discriminator, x_a: torch.Tensor,
                     x_g: torch.Tensor, y_a: torch.Tensor, generator: torch.Generator | None = None,
                     alpha: torch.Tensor | None = None, target: str = "probability") -> torch.Tensor:
    """Mean of ``(||grad D(x_hat, y_a)|| - 1)^2``.

    The gradient is taken w.r.t. the whole conditioned input, label channels
    included. ``critic`` is either a discriminator or any callable mapping a
    conditioned batch to one value per row.
    """
    if hasattr(critic, "score"):
        critic = critic_for(critic, target)
    x_hat, _ = interpolate(x_a, x_g.detach(), generator, alpha)
    norms = input_gradient_norms(critic, condition(x_hat, y_a))
    return ((norms - 1.0) ** 2).mean()


def discriminator_terms(discriminator: Discriminator, generator_net: Generator, x_a: torch.Tensor,
                        y_a: torch.Tensor, z: torch.Tensor, y_g: torch.Tensor, y_m: torch.Tensor | None,
                        lam: float, rng: torch.Generator | None = None, gp_target: str = "probability",
                        x_g: torch.Tensor | None = None, alpha: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
    """The individual discriminator loss terms (``penalty`` is not yet scaled by lambda).

    ``y_m=None`` drops the mislabel term and ``lam=0`` skips the penalty.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if x_g is None:
        with torch.no_grad():
            x_g = generator_net(z, y_g)
    x_g = x_g.detach()
    n = x_a.shape[0]
    if x_g.shape[0] != n or y_g.shape[0] != n or (y_m is not None and y_m.shape[0] != n):
        raise ShapeMismatch("discriminator sub-batches must have equal size")
    parts_x, parts_y = [x_a, x_g], [y_a, y_g]
    if y_m is not None:
        parts_x.append(x_a)
        parts_y.append(y_m)
    scores = discriminator(torch.cat(parts_x), torch.cat(parts_y))
    terms = {
        "actual": -log_d(scores[:n]).mean(),
        "generated": -log_one_minus_d(scores[n:2 * n]).mean(),
    }
    if y_m is not None:
        terms["mislabel"] = -log_one_minus_d(scores[2 * n:]).mean()
    if lam > 0:
        terms["penalty"] = gradient_penalty(discriminator, x_a, x_g, y_a, rng, alpha=alpha, target=gp_target)
    return terms


def discriminator_loss(discriminator: Discriminator, generator_net: Generator, x_a: torch.Tensor,
                       y_a: torch.Tensor, z: torch.Tensor, y_g: torch.Tensor, y_m: torch.Tensor | None,
                       lam: float = 10.0, rng: torch.Generator | None = None,
                       gp_target: str = "probability", alpha: torch.Tensor | None = None) -> torch.Tensor:
    terms = discriminator_terms(discriminator, generator_net, x_a, y_a, z, y_g, y_m, lam, rng, gp_target,
                                alpha=alpha)
    total = sum(v for k, v in terms.items() if k != "penalty")
    if "penalty" in terms:
        total = total + lam * terms["penalty"]
    return _check_finite(total, "discriminator loss")


def generator_terms(generator_net: Generator, discriminator: Discriminator, classifier: Classifier | None,
                    z: torch.Tensor, y_g: torch.Tensor, with_classifier_term: bool = True) -> dict[str, torch.Tensor]:
    if z.shape[0] == 0:
        raise ShapeMismatch("empty noise batch")
    x = generator_net(z, y_g)
    terms = {"adversarial": -log_d(discriminator(x, y_g)).mean()}
    if with_classifier_term:
        logits, _ = classifier(x)
        terms["classification"] = cross_entropy(logits, y_g)
    return terms


def generator_loss(generator_net: Generator, discriminator: Discriminator, classifier: Classifier | None,
                   z: torch.Tensor, y_g: torch.Tensor, with_classifier_term: bool = True) -> torch.Tensor:
    terms = generator_terms(generator_net, discriminator, classifier, z, y_g, with_classifier_term)
    return _check_finite(sum(terms.values()), "generator loss")


def classifier_terms(classifier: Classifier, x_a: torch.Tensor | None, y_a: torch.Tensor | None,
                     x_g: torch.Tensor | None = None, y_g: torch.Tensor | None = None) -> dict[str, torch.Tensor]:
    has_a = x_a is not None and x_a.shape[0] > 0
    has_g = x_g is not None and x_g.shape[0] > 0
    if not (has_a or has_g):
        raise ShapeMismatch("classifier loss needs at least one non-empty sub-batch")
    xs = ([x_a] if has_a else []) + ([x_g.detach()] if has_g else [])
    logits, _ = classifier(torch.cat(xs))
    terms = {}
    n_a = x_a.shape[0] if has_a else 0
    if has_a:
        terms["actual"] = cross_entropy(logits[:n_a], y_a)
    if has_g:
        terms["generated"] = cross_entropy(logits[n_a:], y_g)
    return terms


def classifier_loss(classifier: Classifier, x_a, y_a, x_g=None, y_g=None) -> torch.Tensor:
    return _check_finite(sum(classifier_terms(classifier, x_a, y_a, x_g, y_g).values()), "classifier loss")


def reconstruction_loss(reconstruction: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(reconstruction, target)
