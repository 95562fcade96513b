"""Classifier families: a small-image ResNet-18 variant and a deep batch-norm MLP.

Both map C x 32 x 32 inputs to class scores and expose the penultimate
activations that feed the final affine layer. The ResNet uses the common
32x32 adaptation of the standard 18-layer architecture (3x3 stride-1 stem,
no initial max-pool); only the first convolution's input channels and the
final layer's output count vary with the task.

Checkpoints are ``torch.save`` containers holding the model spec dict, the
state dict, and the training epoch.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path

import torch
import torch.nn as nn


class ModelFamily(str, Enum):
    RESNET18_VARIANT = "resnet18"
    MLP10 = "mlp10"


@dataclass(frozen=True)
class ModelSpec:
    family: ModelFamily
    in_channels: int
    num_classes: int
    width: int = 1024   # MLP only
    depth: int = 10     # MLP only

    def __post_init__(self):
        object.__setattr__(self, "family", ModelFamily(self.family))
        if self.in_channels < 1:
            raise ValueError("in_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.family is ModelFamily.MLP10 and (self.width < 1 or self.depth < 1):
            raise ValueError("MLP width and depth must be >= 1")


class _BasicBlock(nn.Module):
    expansion = 1

    def __init__(self, in_planes: int, planes: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(in_planes, planes, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(planes)
        self.conv2 = nn.Conv2d(planes, planes, 3, stride=1, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(planes)
        self.shortcut = nn.Sequential()
        if stride != 1 or in_planes != planes:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_planes, planes, 1, stride=stride, bias=False),
                nn.BatchNorm2d(planes),
            )
        self.relu = nn.ReLU(inplace=True)

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class SmallImageResNet18(nn.Module):
    """18-layer residual network with a 32x32-friendly stem."""

    feature_dim = 512

    def __init__(self, in_channels: int, num_classes: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, 64, 3, stride=1, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(64)
        self.relu = nn.ReLU(inplace=True)
        self.layer1 = self._make_layer(64, 64, stride=1)
        self.layer2 = self._make_layer(64, 128, stride=2)
        self.layer3 = self._make_layer(128, 256, stride=2)
        self.layer4 = self._make_layer(256, 512, stride=2)
        self.avgpool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(512, num_classes)

    @staticmethod
    def _make_layer(in_planes: int, planes: int, stride: int) -> nn.Sequential:
        return nn.Sequential(_BasicBlock(in_planes, planes, stride),
                             _BasicBlock(planes, planes, 1))

    def features(self, x: torch.Tensor) -> torch.Tensor:
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.layer4(self.layer3(self.layer2(self.layer1(out))))
        return torch.flatten(self.avgpool(out), 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))


class BatchNormMLP(nn.Module):
    """`depth` blocks of affine -> batch-norm -> ReLU on flattened pixels."""

    def __init__(self, in_channels: int, num_classes: int,
                 width: int = 1024, depth: int = 10):
        super().__init__()
        self.feature_dim = width
        in_features = in_channels * 32 * 32
        blocks = []
        for i in range(depth):
            blocks += [nn.Linear(in_features if i == 0 else width, width),
                       nn.BatchNorm1d(width),
                       nn.ReLU(inplace=True)]
        self.body = nn.Sequential(*blocks)
        self.fc = nn.Linear(width, num_classes)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(torch.flatten(x, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.features(x))


def build_model(spec: ModelSpec, seed: int | None = None) -> nn.Module:
    """Instantiate a classifier for the spec; init is seeded when `seed` given."""
    if seed is not None:
        torch.manual_seed(seed)
    if spec.family is ModelFamily.RESNET18_VARIANT:
        model = SmallImageResNet18(spec.in_channels, spec.num_classes)
    else:
        model = BatchNormMLP(spec.in_channels, spec.num_classes, spec.width, spec.depth)
    model.spec = spec
    return model


@torch.no_grad()
def extract_features(model: nn.Module, batch: torch.Tensor) -> torch.Tensor:
    """Penultimate activations (the input of the final affine layer)."""
    was_training = model.training
    model.eval()
    try:
        return model.features(batch)
    finally:
        model.train(was_training)


def save_checkpoint(model: nn.Module, path: Path | str, epoch: int) -> None:
    torch.save({"spec": asdict(model.spec), "state": model.state_dict(),
                "epoch": epoch}, path)


def load_checkpoint(path: Path | str) -> tuple[nn.Module, int]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    spec = ModelSpec(**payload["spec"])
    model = build_model(spec)
    model.load_state_dict(payload["state"])
    return model, payload["epoch"]
