import numpy as np
import pytest
import torch
from torch import nn

from tpgan.data import ImageSet, ImbalanceSpec, build_imbalanced_split
from tpgan.datasets import synthetic_garments
from tpgan.networks import Profile, build

torch.set_num_threads(1)

# 8x8 images, two down/up-sampling blocks; small enough for finite differences
TINY = Profile("tiny", 8, (3, 4), (4, 0), (3, 4), 4, noise_dim=6, label_embedding=3)


@pytest.fixture
def tiny():
    return TINY


def tiny_nets(seed=0, channels=1, num_classes=3, dtype=torch.float64):
    nets = {k: build(k, TINY, channels, num_classes, seed=seed + i).to(dtype)
            for i, k in enumerate(("generator", "discriminator", "classifier"))}
    # bigger init than 0.02 so outputs are far from constant and gradients are informative
    gen = torch.Generator().manual_seed(seed + 100)
    for net in nets.values():
        for p in net.parameters():
            if p.ndim > 1:
                with torch.no_grad():
                    p.normal_(0.0, 0.5, generator=gen)
    return nets


class ConstantDiscriminator(nn.Module):
    """D(x, y) = sigmoid(0) = 0.5 for every input."""

    def __init__(self, num_classes=3, channels=1, size=8):
        super().__init__()
        self.num_classes, self.channels = num_classes, channels
        self.dummy = nn.Parameter(torch.zeros((), dtype=torch.float64))

    def score(self, conditioned):
        return self.dummy * 0 + conditioned.sum(dim=(1, 2, 3)) * 0

    def forward(self, x, y):
        return self.score(torch.cat([x, y[:, :, None, None].expand(-1, -1, *x.shape[2:]).to(x.dtype)], 1))


class UniformClassifier(nn.Module):
    def __init__(self, num_classes=3):
        super().__init__()
        self.num_classes = num_classes
        self.dummy = nn.Parameter(torch.zeros((), dtype=torch.float64))

    def forward(self, x):
        logits = x.flatten(1).sum(1, keepdim=True) * 0 + self.dummy * 0
        return logits.expand(-1, self.num_classes), x.flatten(1)


@pytest.fixture(scope="session")
def garments32():
    return synthetic_garments(1000, seed=0, size=32)


@pytest.fixture(scope="session")
def garment_spec():
    return ImbalanceSpec(0, (1, 2), 0.10, 800, seed=0)


@pytest.fixture(scope="session")
def garment_split(garments32, garment_spec):
    return build_imbalanced_split(garments32, garment_spec)


def toy_dataset(counts, size=8, channels=1, seed=0):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(len(counts)), counts)
    images = rng.uniform(-1, 1, (len(labels), size, size, channels)).astype(np.float32)
    return ImageSet(images, labels, len(counts))


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
