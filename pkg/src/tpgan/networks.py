"""Generator, discriminator, classifier and the pretraining autoencoder.

All modules work on NCHW tensors with pixel values in [-1, 1]. Labels enter
as one-hot rows: the generator embeds them and concatenates the embedding to
the noise, the discriminator receives them as constant extra image channels.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ShapeMismatch, ValidationError


@dataclass(frozen=True)
class Profile:
    name: str
    image_size: int
    disc_kernels: tuple[int, ...]
    gen_kernels: tuple[int, ...]  # last entry is replaced by the image channel count
    cls_kernels: tuple[int, ...]
    gen_projection: int
    noise_dim: int = 128
    label_embedding: int = 16
    kernel_size: int = 4
    stride: int = 2
    leaky_slope: float = 0.2
    init_std: float = 0.02

    @property
    def base_size(self) -> int:
        return self.image_size // self.stride ** len(self.disc_kernels)


PROFILES = {
    "full": Profile("full", 64, (64, 128, 128, 256), (128, 128, 64, 0), (32, 32, 128, 256), 256),
    "desk": Profile("desk", 32, (32, 64, 64, 128), (64, 64, 32, 0), (16, 16, 64, 128), 128),
}


def get_profile(name: str | Profile) -> Profile:
    if isinstance(name, Profile):
        return name
    try:
        return PROFILES[name]
    except KeyError:
        raise ValidationError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None


def init_weights(module: nn.Module, std: float, generator: torch.Generator | None = None) -> None:
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
            with torch.no_grad():
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
        elif isinstance(m, nn.BatchNorm2d):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


def _conv_trunk(in_channels: int, kernels, p: Profile) -> nn.Sequential:
    layers: list[nn.Module] = []
    for out in kernels:
        layers += [nn.Conv2d(in_channels, out, p.kernel_size, p.stride, padding=1),
                   nn.LeakyReLU(p.leaky_slope)]
        in_channels = out
    return nn.Sequential(*layers)


def condition(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Append one-hot labels to images as constant channels."""
    n, _, h, w = x.shape
    return torch.cat([x, y.to(x.dtype)[:, :, None, None].expand(n, y.shape[1], h, w)], dim=1)


class Generator(nn.Module):
    def __init__(self, profile: str | Profile, channels: int, num_classes: int):
        super().__init__()
        p = get_profile(profile)
        self.profile, self.channels, self.num_classes = p, channels, num_classes
        self.embed = nn.Linear(num_classes, p.label_embedding, bias=False)
        self.project = nn.Linear(p.noise_dim + p.label_embedding, p.gen_projection * p.base_size ** 2)
        blocks: list[nn.Module] = []
        in_ch = p.gen_projection
        kernels = (*p.gen_kernels[:-1], channels)
        for i, out in enumerate(kernels):
            blocks.append(nn.ConvTranspose2d(in_ch, out, p.kernel_size, p.stride, padding=1))
            if i < len(kernels) - 1:
                blocks += [nn.LeakyReLU(p.leaky_slope), nn.BatchNorm2d(out)]
            in_ch = out
        self.blocks = nn.Sequential(*blocks)

    def forward(self, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        p = self.profile
        if z.ndim != 2 or z.shape[1] != p.noise_dim:
            raise ShapeMismatch(f"noise must be (n, {p.noise_dim}), got {tuple(z.shape)}")
        if y.shape != (z.shape[0], self.num_classes):
            raise ShapeMismatch(f"labels must be (n, {self.num_classes}), got {tuple(y.shape)}")
        h = self.project(torch.cat([z, self.embed(y.to(z.dtype))], dim=1))
        h = F.leaky_relu(h, p.leaky_slope).view(-1, p.gen_projection, p.base_size, p.base_size)
        return torch.tanh(self.blocks(h))


class Discriminator(nn.Module):
    """Conditional discriminator; ``forward`` returns the pre-sigmoid score."""

    def __init__(self, profile: str | Profile, channels: int, num_classes: int):
        super().__init__()
        p = get_profile(profile)
        self.profile, self.channels, self.num_classes = p, channels, num_classes
        self.trunk = _conv_trunk(channels + num_classes, p.disc_kernels, p)
        self.head = nn.Linear(p.disc_kernels[-1] * p.base_size ** 2, 1)

    def score(self, conditioned: torch.Tensor) -> torch.Tensor:
        expected = (self.channels + self.num_classes, self.profile.image_size, self.profile.image_size)
        if tuple(conditioned.shape[1:]) != expected:
            raise ShapeMismatch(f"conditioned input must be (n, {expected}), got {tuple(conditioned.shape)}")
        return self.head(self.trunk(conditioned).flatten(1)).squeeze(1)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        if y.ndim != 2 or y.shape[1] != self.num_classes or y.shape[0] != x.shape[0]:
            raise ShapeMismatch(f"labels must be (n, {self.num_classes}), got {tuple(y.shape)}")
        return self.score(condition(x, y))


class Classifier(nn.Module):
    """CNN classifier; ``forward`` returns ``(logits, penultimate features)``."""

    def __init__(self, profile: str | Profile, channels: int, num_classes: int):
        super().__init__()
        p = get_profile(profile)
        self.profile, self.channels, self.num_classes = p, channels, num_classes
        self.trunk = _conv_trunk(channels, p.cls_kernels, p)
        self.feature_dim = p.cls_kernels[-1] * p.base_size ** 2
        self.head = nn.Linear(self.feature_dim, num_classes)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        expected = (self.channels, self.profile.image_size, self.profile.image_size)
        if tuple(x.shape[1:]) != expected:
            raise ShapeMismatch(f"images must be (n, {expected}), got {tuple(x.shape)}")
        features = self.trunk(x).flatten(1)
        return self.head(features), features


class Encoder(nn.Module):
    """Image to latent code, standardized per dimension.

    The codes are batch-normalized without an affine part so the decoder is
    fitted on inputs with the same first two moments as the generator noise;
    otherwise the copied decoder sees N(0, I) noise on a scale it never saw.
    """

    def __init__(self, profile: str | Profile, channels: int):
        super().__init__()
        p = get_profile(profile)
        self.trunk = _conv_trunk(channels, p.disc_kernels, p)
        self.head = nn.Linear(p.disc_kernels[-1] * p.base_size ** 2, p.noise_dim)
        # tiny eps: with 0.02-std weights the raw codes have variance far below the default 1e-5
        self.standardize = nn.BatchNorm1d(p.noise_dim, eps=1e-10, affine=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.standardize(self.head(self.trunk(x).flatten(1)))


class Autoencoder(nn.Module):
    """Encoder mirroring the discriminator trunk, decoder identical to :class:`Generator`."""

    def __init__(self, profile: str | Profile, channels: int, num_classes: int):
        super().__init__()
        self.encoder = Encoder(profile, channels)
        self.decoder = Generator(profile, channels, num_classes)

    def forward(self, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x), y)


def build(kind: str, profile: str | Profile, channels: int, num_classes: int, seed: int | None = None) -> nn.Module:
    cls = {"generator": Generator, "discriminator": Discriminator, "classifier": Classifier,
           "autoencoder": Autoencoder}[kind]
    net = cls(profile, channels, num_classes)
    gen = torch.Generator().manual_seed(seed) if seed is not None else None
    init_weights(net, get_profile(profile).init_std, gen)
    return net


# -- functional surface -------------------------------------------------------


def generator_forward(generator: Generator, z: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    return generator(z, y)


def discriminator_forward(discriminator: Discriminator, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """Probability that ``(x, y)`` is an actual, correctly labeled sample."""
    return torch.sigmoid(discriminator(x, y))


def classifier_forward(classifier: Classifier, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    logits, features = classifier(x)
    return torch.softmax(logits, dim=1), features


def init_generator_from_decoder(ae: Autoencoder) -> Generator:
    """Deep copy of the decoder (parameters and batch-norm buffers)."""
    dec = ae.decoder
    gen = Generator(dec.profile, dec.channels, dec.num_classes)
    src, dst = dec.state_dict(), gen.state_dict()
    for name, tensor in dst.items():
        if name not in src or src[name].shape != tensor.shape:
            raise ShapeMismatch(f"decoder and generator disagree at {name!r}")
    gen.load_state_dict(copy.deepcopy(src))
    return gen.to(next(dec.parameters()).dtype)
