"""Shared 3D-conv backbone with justification, localization and embedding heads."""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Optional

import torch
import torch.nn as nn

from .errors import ShapeMismatch, UnsupportedTemporalLength

ARCHITECTURES = ("tiny3d", "r3d18")


@dataclass(frozen=True)
class BackboneSpec:
    architecture: str = "tiny3d"
    feature_channels: Optional[int] = None

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}")

    @property
    def channels(self) -> int:
        if self.feature_channels is not None:
            return self.feature_channels
        return 64 if self.architecture == "tiny3d" else 512

    @property
    def min_frames(self) -> int:
        return 4 if self.architecture == "tiny3d" else 2


@dataclass(frozen=True)
class HeadSpec:
    kind: str  # justify | localize | embed
    in_channels: int
    conv_channels: int
    out_dim: int


def head_specs(backbone: BackboneSpec, l_n: int, embed_dim: int = 128):
    c_f = backbone.channels
    hc = min(512, 8 * c_f)
    return (HeadSpec("justify", c_f, hc, 2),
            HeadSpec("localize", c_f, hc, l_n - 1),
            HeadSpec("embed", c_f, hc, embed_dim))


def conv_bn_relu(cin, cout, stride=1):
    return nn.Sequential(
        nn.Conv3d(cin, cout, kernel_size=3, stride=stride, padding=1, bias=False),
        nn.BatchNorm3d(cout, momentum=0.1),
        nn.ReLU(inplace=True),
    )


class Tiny3D(nn.Module):
    """Four 3x3x3 conv stages; stages 2-4 downsample by 2."""

    min_frames = 4

    def __init__(self, out_channels=64):
        super().__init__()
        c = out_channels
        self.stages = nn.Sequential(
            conv_bn_relu(3, c // 4),
            conv_bn_relu(c // 4, c // 2, stride=(1, 2, 2)),
            conv_bn_relu(c // 2, c, stride=2),
            conv_bn_relu(c, c, stride=2),
        )

    def forward(self, x):
        return self.stages(x)


class BasicBlock3D(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = conv_bn_relu(cin, cout, stride)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm3d(cout)
        self.down = None
        if stride != 1 or cin != cout:
            self.down = nn.Sequential(nn.Conv3d(cin, cout, 1, stride=stride, bias=False),
                                      nn.BatchNorm3d(cout))

    def forward(self, x):
        identity = x if self.down is None else self.down(x)
        return torch.relu(self.bn2(self.conv2(self.conv1(x))) + identity)


class R3D18(nn.Module):
    """ResNet-18 layout with full 3D convolutions."""

    min_frames = 2

    def __init__(self, out_channels=512):
        super().__init__()
        widths = [out_channels // 8, out_channels // 4, out_channels // 2, out_channels]
        self.stem = nn.Sequential(
            nn.Conv3d(3, widths[0], (3, 7, 7), stride=(1, 2, 2), padding=(1, 3, 3), bias=False),
            nn.BatchNorm3d(widths[0]), nn.ReLU(inplace=True))
        layers, cin = [], widths[0]
        for i, w in enumerate(widths):
            stride = 1 if i == 0 else 2
            layers += [BasicBlock3D(cin, w, stride), BasicBlock3D(w, w)]
            cin = w
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(self.stem(x))


def build_backbone(spec: BackboneSpec) -> nn.Module:
    if spec.architecture == "tiny3d":
        return Tiny3D(spec.channels)
    return R3D18(spec.channels)


class ProjectionHead(nn.Module):
    """conv3x3x3 -> BN -> ReLU -> global average pool -> linear."""

    def __init__(self, spec: HeadSpec):
        super().__init__()
        self.spec = spec
        self.conv = nn.Conv3d(spec.in_channels, spec.conv_channels, 3, stride=1, padding=1)
        self.bn = nn.BatchNorm3d(spec.conv_channels, momentum=0.1)
        self.pool = nn.AdaptiveAvgPool3d(1)
        self.fc = nn.Linear(spec.conv_channels, spec.out_dim)

    def feature_map(self, f):
        if f.dim() != 5 or f.shape[1] != self.spec.in_channels:
            raise ShapeMismatch(f"{self.spec.kind} head expects [B, {self.spec.in_channels}, T, H, W], "
                                f"got {tuple(f.shape)}")
        return torch.relu(self.bn(self.conv(f)))

    def forward(self, f):
        return self.fc(self.pool(self.feature_map(f)).flatten(1))


@contextmanager
def frozen_running_stats(module: nn.Module):
    """Batch-norm layers normalize with batch statistics but leave running averages alone."""
    norms = [m for m in module.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    saved = [m.momentum for m in norms]
    for m in norms:
        m.momentum = 0.0
    try:
        yield
    finally:
        for m, mom in zip(norms, saved):
            m.momentum = mom


@dataclass
class ContinuityEmbeddings:
    f_d: torch.Tensor
    f_c: Optional[torch.Tensor] = None
    f_m: Optional[torch.Tensor] = None
    logits_just_c: Optional[torch.Tensor] = None
    logits_just_d: Optional[torch.Tensor] = None
    logits_loc_d: Optional[torch.Tensor] = None
    e_c: Optional[torch.Tensor] = None
    e_d: Optional[torch.Tensor] = None
    e_m: Optional[torch.Tensor] = None


class ContinuityNet(nn.Module):
    def __init__(self, backbone: BackboneSpec = BackboneSpec(), l_n: int = 16, embed_dim: int = 128):
        super().__init__()
        self.backbone_spec = backbone
        self.l_n = l_n
        self.backbone = build_backbone(backbone)
        js, ls, es = head_specs(backbone, l_n, embed_dim)
        self.justify = ProjectionHead(js)
        self.localize = ProjectionHead(ls)
        self.embed = ProjectionHead(es)

    def heads(self):
        return {"justify": self.justify, "localize": self.localize, "embed": self.embed}

    def config(self) -> dict:
        return {"backbone": asdict(self.backbone_spec), "l_n": self.l_n,
                "embed_dim": self.embed.spec.out_dim}

    def backbone_forward(self, x):
        if x.dim() != 5 or x.shape[1] != 3:
            raise ShapeMismatch(f"expected [B, 3, T, H, W], got {tuple(x.shape)}")
        if x.shape[2] < self.backbone_spec.min_frames:
            raise UnsupportedTemporalLength(
                f"{self.backbone_spec.architecture} needs T >= {self.backbone_spec.min_frames}, "
                f"got {x.shape[2]}")
        return self.backbone(x)

    def pooled_features(self, x):
        return self.backbone_forward(x).mean(dim=(2, 3, 4))

    def forward(self, c_c, c_d, c_m, tasks=(True, True, True)) -> ContinuityEmbeddings:
        """Run the shared backbone and the heads needed by ``tasks`` (J, L, E).

        Outputs of heads not needed by any enabled task are left as None.
        """
        use_j, use_l, use_e = tasks
        k = c_d.shape[0]
        out = dict.fromkeys(ContinuityEmbeddings.__dataclass_fields__)
        if use_j or use_e:
            # c_c and c_d share one pass so batch-norm statistics mix both kinds of clip
            f_cd = self.backbone_forward(torch.cat([c_c, c_d]))
            out["f_c"], out["f_d"] = f_cd[:k], f_cd[k:]
        else:
            out["f_d"] = self.backbone_forward(c_d)
        if use_j:
            just = self.justify(f_cd)
            out["logits_just_c"], out["logits_just_d"] = just[:k], just[k:]
        if use_l:
            out["logits_loc_d"] = self.localize(out["f_d"])
        if use_e:
            e_cd = self.embed(f_cd)
            out["e_c"], out["e_d"] = e_cd[:k], e_cd[k:]
            # running statistics describe l_n-frame clips, the only input seen at
            # evaluation time; the shorter missing section would skew them
            with frozen_running_stats(self):
                out["f_m"] = self.backbone_forward(c_m)
                out["e_m"] = self.embed(out["f_m"])
        return ContinuityEmbeddings(**out)

    def forward_all(self, batch, tasks=(True, True, True)) -> ContinuityEmbeddings:
        return self(batch.c_c, batch.c_d, batch.c_m, tasks)


def head_forward(model: ContinuityNet, features, kind: str):
    return model.heads()[kind](features)


def head_param_count(spec: HeadSpec) -> int:
    conv = spec.in_channels * spec.conv_channels * 27 + spec.conv_channels
    norm = 2 * spec.conv_channels
    linear = spec.conv_channels * spec.out_dim + spec.out_dim
    return conv + norm + linear
