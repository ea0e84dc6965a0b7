"""Shared feature encoder with three exclusive heads.

One encoder feeds a linear classifier, a projection head for the
contrastive space, and a group-attention ("mixup") head that scores the M
members of a mini-group from their concatenated features. Keeping a single
encoder (instead of co-trained twin networks) is a deliberate property:
tests assert the heads reference the same encoder parameters.

Encoders:
  * ``toy_cnn``            3 conv blocks, feature dim 128; the desk-scale default.
  * ``small_residual_18``  an 18-layer basic-block residual net, feature dim 512.
  * ``vgg_19_like``        VGG-19-style conv stacks with batch norm, feature dim 512.

All encoders end in global average pooling, so any input size that survives
the downsampling is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
from torch import nn

from .errors import ValidationError

ENCODER_KINDS = ("toy_cnn", "small_residual_18", "vgg_19_like")

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelConfig:
    num_classes: int
    encoder_kind: str = "toy_cnn"
    in_channels: int = 3
    group_size: int = 4
    projection_layers: int = 2   # depth of the projection head (1 or 2)
    projection_dim: int = 128
    mixup_head_layers: int = 2   # FC count in the attention head (1, 2, or 3)

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.encoder_kind not in ENCODER_KINDS:
            raise ValidationError(
                f"encoder_kind must be one of {ENCODER_KINDS}, got {self.encoder_kind!r}"
            )
        if self.in_channels not in (1, 3):
            raise ValidationError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.group_size < 1:
            raise ValidationError(f"group_size must be >= 1, got {self.group_size}")
        if self.projection_layers not in (1, 2):
            raise ValidationError(
                f"projection_layers must be 1 or 2, got {self.projection_layers}"
            )
        if self.mixup_head_layers not in (1, 2, 3):
            raise ValidationError(
                f"mixup_head_layers must be 1, 2 or 3, got {self.mixup_head_layers}"
            )


def _conv_bn_relu(cin: int, cout: int, stride: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class ToyCnnEncoder(nn.Module):
    feature_dim = 128

    def __init__(self, in_channels: int):
        super().__init__()
        self.features = nn.Sequential(
            _conv_bn_relu(in_channels, 32, 2),
            _conv_bn_relu(32, 64, 2),
            _conv_bn_relu(64, 128, 2),
        )
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        return self.pool(self.features(x)).flatten(1)


class BasicBlock(nn.Module):
    def __init__(self, cin: int, cout: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.relu = nn.ReLU(inplace=True)
        if stride != 1 or cin != cout:
            self.shortcut = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False),
                nn.BatchNorm2d(cout),
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x):
        out = self.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        return self.relu(out + self.shortcut(x))


class SmallResidualEncoder(nn.Module):
    """18-layer basic-block residual network with a 3x3 stem for small inputs."""

    feature_dim = 512

    def __init__(self, in_channels: int):
        super().__init__()
        self.stem = _conv_bn_relu(in_channels, 64, 1)
        stages = []
        cin = 64
        for cout, stride in ((64, 1), (128, 2), (256, 2), (512, 2)):
            stages += [BasicBlock(cin, cout, stride), BasicBlock(cout, cout, 1)]
            cin = cout
        self.stages = nn.Sequential(*stages)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        return self.pool(self.stages(self.stem(x))).flatten(1)


class VggLikeEncoder(nn.Module):
    feature_dim = 512

    _PLAN = (64, 64, "M", 128, 128, "M", 256, 256, 256, 256, "M",
             512, 512, 512, 512, "M", 512, 512, 512, 512, "M")

    def __init__(self, in_channels: int):
        super().__init__()
        layers: list[nn.Module] = []
        cin = in_channels
        for item in self._PLAN:
            if item == "M":
                layers.append(nn.MaxPool2d(2, ceil_mode=True))
            else:
                layers.append(_conv_bn_relu(cin, item, 1))
                cin = item
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)

    def forward(self, x):
        return self.pool(self.features(x)).flatten(1)


_ENCODERS = {
    "toy_cnn": ToyCnnEncoder,
    "small_residual_18": SmallResidualEncoder,
    "vgg_19_like": VggLikeEncoder,
}


class ProjectionHead(nn.Module):
    """Maps encoder features into the contrastive embedding space (1 or 2 layers)."""

    def __init__(self, feature_dim: int, out_dim: int, layers: int):
        super().__init__()
        if layers == 1:
            self.net = nn.Linear(feature_dim, out_dim)
        else:
            self.net = nn.Sequential(
                nn.Linear(feature_dim, feature_dim),
                nn.ReLU(inplace=True),
                nn.Linear(feature_dim, out_dim),
            )

    def forward(self, x):
        return self.net(x)


class MixupAttentionHead(nn.Module):
    """FC(N)-ReLU-Sigmoid scorer: concatenated group features -> M weights in (0, 1).

    Layer widths follow d*M -> (d ->)* M, e.g. with d=512, M=4, N=2 the
    shapes are 2048 -> 512 -> 4.
    """

    def __init__(self, feature_dim: int, group_size: int, layers: int):
        super().__init__()
        self.input_dim = feature_dim * group_size
        self.group_size = group_size
        dims = [self.input_dim] + [feature_dim] * (layers - 1) + [group_size]
        blocks: list[nn.Module] = []
        for i in range(len(dims) - 1):
            blocks.append(nn.Linear(dims[i], dims[i + 1]))
            if i < len(dims) - 2:
                blocks.append(nn.ReLU(inplace=True))
        blocks.append(nn.Sigmoid())
        self.net = nn.Sequential(*blocks)

    def forward(self, x):
        if x.shape[-1] != self.input_dim:
            raise ValidationError(
                f"attention head expects last dim {self.input_dim} "
                f"(feature_dim * group_size), got {x.shape[-1]}"
            )
        return self.net(x)


class NoiseRobustModel(nn.Module):
    """Shared encoder with classifier, projection, and group-attention heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.encoder = _ENCODERS[config.encoder_kind](config.in_channels)
        d = self.encoder.feature_dim
        self.feature_dim = d
        self.classifier = nn.Linear(d, config.num_classes)
        self.projection = ProjectionHead(d, config.projection_dim, config.projection_layers)
        self.mixup_head = MixupAttentionHead(d, config.group_size, config.mixup_head_layers)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        if images.ndim != 4 or images.shape[1] != self.config.in_channels:
            raise ValidationError(
                f"expected (B, {self.config.in_channels}, H, W) images, "
                f"got shape {tuple(images.shape)}"
            )
        return self.encoder(images)

    def classify(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.feature_dim:
            raise ValidationError(
                f"classifier expects features of dim {self.feature_dim}, "
                f"got {features.shape[-1]}"
            )
        return self.classifier(features)

    def project(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self.feature_dim:
            raise ValidationError(
                f"projection expects features of dim {self.feature_dim}, "
                f"got {features.shape[-1]}"
            )
        return self.projection(features)

    def attention_weights(self, group_features: torch.Tensor) -> torch.Tensor:
        """Score a group (or a batch of groups) of concatenated features."""
        return self.mixup_head(group_features)

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.classify(self.encode(images))


def parameter_checksums(model: NoiseRobustModel) -> dict[str, float]:
    """Cheap per-component fingerprints used by stage-isolation checks."""
    sums: dict[str, float] = {}
    for name in ("encoder", "classifier", "projection", "mixup_head"):
        module = getattr(model, name)
        total = 0.0
        for p in module.parameters():
            total += float(p.detach().double().abs().sum())
        sums[name] = total
    return sums


def save_checkpoint(path, model: NoiseRobustModel, extra: dict | None = None) -> None:
    """Self-describing checkpoint: format version, model config, weights, counters."""
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "model_config": asdict(model.config),
        "model_state": model.state_dict(),
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild a model from :func:`save_checkpoint` output.

    Returns ``(model, extra)`` with the model in eval mode.
    """
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported checkpoint format {version!r} "
            f"(expected {CHECKPOINT_FORMAT_VERSION})"
        )
    config = ModelConfig(**payload["model_config"])
    model = NoiseRobustModel(config)
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model, payload["extra"]
