"""Encoder, projector and classifier heads for spectrogram patches.

The encoder is a small ResNet: three blocks of three 3x3 convolutions
(channels 64, 128, 256), each convolution followed by batch norm and leaky
ReLU, with a residual connection around every block (1x1 projection when
the channel count changes). Max pooling is 2x2 after blocks 1 and 2 and
(freq 1, time 2) after block 3 to preserve frequency resolution; adaptive
max pooling to (8, 1) yields a 2048-dim feature for any input length T >= 8.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.01
BLOCK_CHANNELS = (64, 128, 256)
CONVS_PER_BLOCK = 3
ADAPTIVE_POOL_OUTPUT = (8, 1)  # (frequency bins, time)
FEATURE_DIM = BLOCK_CHANNELS[-1] * ADAPTIVE_POOL_OUTPUT[0]  # 2048
PROJECTION_DIM = 512
MIN_TIME_FRAMES = 8

REGIMES = ("frozen", "ft1", "ft2", "ftall")


class ResidualBlock(nn.Module):
    """Three conv->BN->leakyReLU stages with a shortcut from block input."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        layers = []
        c = in_channels
        for _ in range(CONVS_PER_BLOCK):
            layers += [
                nn.Conv2d(c, out_channels, kernel_size=3, stride=1, padding=1, bias=False),
                nn.BatchNorm2d(out_channels),
                nn.LeakyReLU(LEAKY_SLOPE),
            ]
            c = out_channels
        self.body = nn.Sequential(*layers)
        if in_channels != out_channels:
            self.shortcut = nn.Conv2d(in_channels, out_channels, kernel_size=1, bias=False)
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x) + self.shortcut(x)


class Encoder(nn.Module):
    """Map a [B, n_mels, T] patch batch to [B, 2048] features."""

    def __init__(self):
        super().__init__()
        self.block1 = ResidualBlock(1, BLOCK_CHANNELS[0])
        self.block2 = ResidualBlock(BLOCK_CHANNELS[0], BLOCK_CHANNELS[1])
        self.block3 = ResidualBlock(BLOCK_CHANNELS[1], BLOCK_CHANNELS[2])
        self.pool1 = nn.MaxPool2d((2, 2))
        self.pool2 = nn.MaxPool2d((2, 2))
        self.pool3 = nn.MaxPool2d((1, 2))
        self.adaptive_pool = nn.AdaptiveMaxPool2d(ADAPTIVE_POOL_OUTPUT)
        self.apply(_init_weights)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim == 3:
            x = x.unsqueeze(1)
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected [B, n_mels, T] input, got {tuple(x.shape)}")
        if x.shape[-1] < MIN_TIME_FRAMES:
            raise ValueError(
                f"input too short for pooling stack: T={x.shape[-1]} < {MIN_TIME_FRAMES}"
            )
        x = self.pool1(self.block1(x))
        x = self.pool2(self.block2(x))
        x = self.pool3(self.block3(x))
        return self.adaptive_pool(x).flatten(1)

    @property
    def blocks(self) -> tuple[nn.Module, nn.Module, nn.Module]:
        return (self.block1, self.block2, self.block3)


class Projector(nn.Module):
    """2048 -> 2048 -> 512 MLP whose outputs are L2-normalized to the sphere."""

    def __init__(self):
        super().__init__()
        self.hidden = nn.Linear(FEATURE_DIM, FEATURE_DIM)
        self.output = nn.Linear(FEATURE_DIM, PROJECTION_DIM)
        nn.init.zeros_(self.hidden.bias)
        nn.init.zeros_(self.output.bias)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        z = self.output(F.leaky_relu(self.hidden(features), LEAKY_SLOPE))
        return F.normalize(z, dim=1, eps=1e-12)


class ClassifierHead(nn.Module):
    """Single affine map from features to class logits (binary by default)."""

    def __init__(self, n_classes: int = 2):
        super().__init__()
        self.linear = nn.Linear(FEATURE_DIM, n_classes)
        nn.init.zeros_(self.linear.bias)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return self.linear(features)


class DetectionModel(nn.Module):
    """Encoder plus binary classifier used during per-file adaptation."""

    def __init__(self, encoder: Encoder, classifier: ClassifierHead):
        super().__init__()
        self.encoder = encoder
        self.classifier = classifier

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.classifier(self.encoder(x))


def _init_weights(module: nn.Module) -> None:
    if isinstance(module, nn.Conv2d):
        nn.init.kaiming_normal_(module.weight, a=LEAKY_SLOPE, nonlinearity="leaky_relu")
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.BatchNorm2d):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def parameter_groups(model: DetectionModel, regime: str) -> tuple[list[str], list[str]]:
    """Set requires_grad per adaptation regime; return (trainable, frozen) names.

    frozen: classifier only. ft1: classifier + block 3. ft2: classifier +
    blocks 2 and 3. ftall: everything.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}; expected one of {REGIMES}")
    n_unfrozen_blocks = {"frozen": 0, "ft1": 1, "ft2": 2, "ftall": 3}[regime]
    unfrozen = trainable_encoder_blocks(model.encoder, n_unfrozen_blocks)
    trainable, frozen = [], []
    for name, param in model.named_parameters():
        is_trainable = name.startswith("classifier.") or any(
            name.startswith(f"encoder.block{i}.") for i in unfrozen
        )
        param.requires_grad_(is_trainable)
        (trainable if is_trainable else frozen).append(name)
    return trainable, frozen


def trainable_encoder_blocks(encoder: Encoder, n_unfrozen: int) -> tuple[int, ...]:
    """Indices (1-based) of the last n_unfrozen encoder blocks."""
    n_blocks = len(encoder.blocks)
    return tuple(range(n_blocks - n_unfrozen + 1, n_blocks + 1))


def set_adaptation_mode(model: DetectionModel, regime: str) -> None:
    """Train mode (live batch-norm) for unfrozen blocks, eval for the rest.

    Frozen blocks keep their pretrained running statistics during
    adaptation; the classifier head has no normalization so its mode is
    irrelevant but follows the trainable convention.
    """
    n_unfrozen_blocks = {"frozen": 0, "ft1": 1, "ft2": 2, "ftall": 3}[regime]
    unfrozen = set(trainable_encoder_blocks(model.encoder, n_unfrozen_blocks))
    model.eval()
    model.classifier.train()
    for i, block in enumerate(model.encoder.blocks, start=1):
        block.train(i in unfrozen)
