"""
Siamese Core
Toy backbone, cross-correlation ops and RPN / FC trackers with the last head layer exposed
"""

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn
import torch.nn.functional as F

from siamadapt.config import BackboneConfig
from siamadapt.utils.errors import InputShapeError

# Feature maps are (N, C, H, W) tensors throughout
FeatureMap = torch.Tensor


def head_key(branch: str, level: int) -> str:
    return f'{branch}.{level}'


@dataclass(frozen=True)
class HeadWeights:
    """
    Last head layer parameters: a per-position affine map plus a scalar output offset

    The offset is zero for the base model; the adjustment may move it.
    """
    matrix: torch.Tensor
    bias: torch.Tensor
    offset: torch.Tensor

    def __post_init__(self):
        if self.matrix.dim() != 2 or self.bias.shape != (self.matrix.shape[0],) or self.offset.dim() != 0:
            raise InputShapeError(
                f"head weights need matrix (out, in), bias (out,), scalar offset; got "
                f"{tuple(self.matrix.shape)}, {tuple(self.bias.shape)}, {tuple(self.offset.shape)}"
            )

    @classmethod
    def from_full(cls, full: torch.Tensor, offset: torch.Tensor) -> 'HeadWeights':
        """Build from an out x (in + 1) matrix whose last column is the bias"""
        return cls(full[:, :-1].contiguous(), full[:, -1].contiguous(), offset)

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def full(self) -> torch.Tensor:
        """out x (in + 1) matrix including the bias column"""
        return torch.cat([self.matrix, self.bias.unsqueeze(1)], dim=1)

    def detach(self) -> 'HeadWeights':
        return HeadWeights(self.matrix.detach(), self.bias.detach(), self.offset.detach())

    def equal(self, other: 'HeadWeights') -> bool:
        return (torch.equal(self.matrix, other.matrix) and torch.equal(self.bias, other.bias)
                and torch.equal(self.offset, other.offset))


# ==================== OPERATIONS ====================

def xcorr_fast(x: FeatureMap, kernel: FeatureMap) -> FeatureMap:
    """Full-channel cross-correlation of each search map with its own kernel -> (N, 1, H', W')"""
    batch = kernel.size(0)
    _, channels, height, width = x.size()
    out = F.conv2d(x.reshape(-1, batch * channels, height, width), kernel, groups=batch)
    return out.reshape(x.size(0), -1, out.size(-2), out.size(-1))


def xcorr_depthwise(x: FeatureMap, kernel: FeatureMap) -> FeatureMap:
    """Per-channel cross-correlation -> (N, C, H', W')"""
    batch, channels = kernel.size(0), kernel.size(1)
    search = x.reshape(1, batch * channels, x.size(2), x.size(3))
    weight = kernel.reshape(batch * channels, 1, kernel.size(2), kernel.size(3))
    out = F.conv2d(search, weight, groups=batch * channels)
    return out.reshape(batch, channels, out.size(2), out.size(3))


def _check_correlation_inputs(inst: FeatureMap, tmpl: FeatureMap) -> None:
    if inst.dim() != 4 or tmpl.dim() != 4:
        raise InputShapeError(f"feature maps must be 4-D (N, C, H, W), got {inst.dim()}-D and {tmpl.dim()}-D")
    if inst.size(1) != tmpl.size(1):
        raise InputShapeError(f"channel mismatch: instance {inst.size(1)} vs template {tmpl.size(1)}")
    if tmpl.size(0) != inst.size(0):
        raise InputShapeError(f"batch mismatch: instance {inst.size(0)} vs template {tmpl.size(0)}")
    if tmpl.size(2) > inst.size(2) or tmpl.size(3) > inst.size(3):
        raise InputShapeError(
            f"template {tuple(tmpl.shape[2:])} larger than instance {tuple(inst.shape[2:])}"
        )


def similarity_map(inst: FeatureMap, tmpl: FeatureMap, b) -> FeatureMap:
    """S(x, z) = phi(x) * phi(z) + b with valid correlation"""
    _check_correlation_inputs(inst, tmpl)
    return xcorr_fast(inst, tmpl) + b


def head_forward(M: FeatureMap, theta: HeadWeights) -> FeatureMap:
    """A = head_1(M; theta): per-position affine map followed by the scalar offset"""
    if M.dim() != 4 or M.size(1) != theta.in_dim:
        raise InputShapeError(
            f"hidden map with {M.size(1) if M.dim() == 4 else '?'} channels does not match "
            f"head input dimension {theta.in_dim}"
        )
    weight = theta.matrix.reshape(theta.out_dim, theta.in_dim, 1, 1).contiguous()
    out = F.conv2d(M, weight, theta.bias.contiguous())
    return out + theta.offset


def anchor_logits(cls_map: FeatureMap) -> torch.Tensor:
    """(N, 2k, H, W) -> (N, k*H*W, 2) in anchor-major order; channels [0, k) background, [k, 2k) foreground"""
    batch, channels, height, width = cls_map.shape
    k = channels // 2
    return cls_map.reshape(batch, 2, k, height, width).permute(0, 2, 3, 4, 1).reshape(batch, -1, 2)


def anchor_deltas(loc_map: FeatureMap) -> torch.Tensor:
    """(N, 4k, H, W) -> (N, k*H*W, 4) as (dx, dy, dw, dh)"""
    batch, channels, height, width = loc_map.shape
    k = channels // 4
    return loc_map.reshape(batch, 4, k, height, width).permute(0, 2, 3, 4, 1).reshape(batch, -1, 4)


def anchor_scores(cls_map: FeatureMap) -> torch.Tensor:
    """Foreground probability per anchor, (N, k*H*W); a 1-channel similarity map uses the sigmoid"""
    if cls_map.size(1) == 1:
        return torch.sigmoid(cls_map).reshape(cls_map.size(0), -1)
    return F.softmax(anchor_logits(cls_map), dim=-1)[..., 1]


def count_parameters(module: nn.Module, trainable_only: bool = False) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


# ==================== MODULES ====================

class Backbone(nn.Module):
    """
    Small conv stack standing in for the embedding network phi

    The first log2(stride) layers downsample by two; the last layer is a bare conv.
    """

    def __init__(self, in_channels: int, embed_channels: int, layers: int, stride: int,
                 kernel_size: int = 3, batch_norm: bool = True):
        super().__init__()
        downsamples = int(round(math.log2(stride))) if stride > 1 else 0
        if 2 ** downsamples != stride or downsamples > layers:
            raise InputShapeError(f"stride {stride} must be a power of two reachable in {layers} layer(s)")
        self.in_channels = in_channels
        self.stride = stride
        self.embed_channels = embed_channels

        blocks = []
        channels = in_channels
        for index in range(layers):
            width = embed_channels if index == layers - 1 else max(embed_channels // 2, 4)
            conv = nn.Conv2d(channels, width, kernel_size, stride=2 if index < downsamples else 1,
                             padding=kernel_size // 2)
            if index == layers - 1:
                blocks.append(conv)
            else:
                blocks.extend([conv, nn.BatchNorm2d(width) if batch_norm else nn.Identity(), nn.ReLU(inplace=True)])
            channels = width
        self.body = nn.Sequential(*blocks)

    def forward(self, patch: torch.Tensor) -> FeatureMap:
        if patch.dim() != 4 or patch.size(1) != self.in_channels:
            raise InputShapeError(f"expected (N, {self.in_channels}, H, W) patches, got {tuple(patch.shape)}")
        if patch.size(2) % self.stride or patch.size(3) % self.stride:
            raise InputShapeError(f"patch size {tuple(patch.shape[2:])} is not a multiple of stride {self.stride}")
        return self.body(patch)


class DepthwiseRPNHead(nn.Module):
    """One branch of one level: adjust layers, depth-wise correlation, head_0 and head_1"""

    def __init__(self, in_channels: int, hidden: int, out_channels: int):
        super().__init__()
        self.kernel_adjust = nn.Conv2d(in_channels, hidden, kernel_size=1)
        self.search_adjust = nn.Conv2d(in_channels, hidden, kernel_size=1)
        self.head0 = nn.Sequential(
            nn.Conv2d(hidden, hidden, kernel_size=1, bias=False),
            nn.BatchNorm2d(hidden),
            nn.ReLU(inplace=True),
        )
        self.head1 = nn.Conv2d(hidden, out_channels, kernel_size=1)

    def hidden_map(self, zf: FeatureMap, xf: FeatureMap) -> FeatureMap:
        kernel = self.kernel_adjust(zf)
        search = self.search_adjust(xf)
        _check_correlation_inputs(search, kernel)
        return self.head0(xcorr_depthwise(search, kernel))

    def weights(self) -> HeadWeights:
        conv = self.head1
        return HeadWeights(conv.weight[:, :, 0, 0], conv.bias, conv.weight.new_zeros(()))


def dw_xcorr_heads(feat_x: FeatureMap, feat_z: FeatureMap,
                   heads: Dict[str, DepthwiseRPNHead]) -> Tuple[FeatureMap, FeatureMap]:
    """Penultimate maps (M_cls, M_loc) of one level"""
    return heads['cls'].hidden_map(feat_z, feat_x), heads['reg'].hidden_map(feat_z, feat_x)


class SiameseRPN(nn.Module):
    """Toy SiamRPN++-style tracker with per-level depth-wise heads averaged by softmax weights"""

    head_type = 'rpn'

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(3, cfg.embed_channels, cfg.backbone_layers, cfg.stride)
        self.heads = nn.ModuleDict()
        for level in range(cfg.levels):
            for branch in ('cls', 'reg'):
                self.heads[head_key(branch, level)] = DepthwiseRPNHead(
                    cfg.embed_channels, cfg.head_hidden, cfg.head_out(branch))
        self.cls_weight = nn.Parameter(torch.zeros(cfg.levels))
        self.loc_weight = nn.Parameter(torch.zeros(cfg.levels))

    @property
    def branches(self) -> Tuple[str, ...]:
        return ('cls', 'reg')

    def embed(self, patch: torch.Tensor) -> FeatureMap:
        return self.backbone(patch)

    def hidden_maps(self, zf: FeatureMap, xf: FeatureMap) -> Dict[str, FeatureMap]:
        maps = {}
        for level in range(self.cfg.levels):
            cls_head = self.heads[head_key('cls', level)]
            reg_head = self.heads[head_key('reg', level)]
            m_cls, m_loc = dw_xcorr_heads(xf, zf, {'cls': cls_head, 'reg': reg_head})
            maps[head_key('cls', level)] = m_cls
            maps[head_key('reg', level)] = m_loc
        return maps

    def base_head_weights(self, branch: str, level: int = 0) -> HeadWeights:
        return self.heads[head_key(branch, level)].weights()

    def base_weights(self) -> Dict[str, HeadWeights]:
        return {key: head.weights() for key, head in self.heads.items()}

    def head_outputs(self, maps: Dict[str, FeatureMap],
                     weights: Optional[Dict[str, HeadWeights]] = None) -> Tuple[FeatureMap, FeatureMap]:
        """Aggregate (A_cls, A_loc) over levels using the given (or base) last-layer weights"""
        weights = weights or self.base_weights()
        cls_mix = F.softmax(self.cls_weight, dim=0)
        loc_mix = F.softmax(self.loc_weight, dim=0)
        cls_out, loc_out = 0, 0
        for level in range(self.cfg.levels):
            cls_key, reg_key = head_key('cls', level), head_key('reg', level)
            cls_out = cls_out + cls_mix[level] * head_forward(maps[cls_key], weights[cls_key])
            loc_out = loc_out + loc_mix[level] * head_forward(maps[reg_key], weights[reg_key])
        return cls_out, loc_out

    def forward(self, z: torch.Tensor, x: torch.Tensor) -> Tuple[FeatureMap, FeatureMap]:
        maps = self.hidden_maps(self.embed(z), self.embed(x))
        return self.head_outputs(maps)


class SiameseFC(nn.Module):
    """
    Toy SiamFC-style tracker: S = phi(x) * phi(z) + b

    The template feature carries a fixed 1 / (C h w) normalisation so scores start near zero.
    """

    head_type = 'fc'

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = Backbone(3, cfg.embed_channels, cfg.backbone_layers, cfg.stride)
        self.bias = nn.Parameter(torch.zeros(()))
        self.out_scale = 1.0 / (cfg.embed_channels * cfg.template_size ** 2)

    @property
    def branches(self) -> Tuple[str, ...]:
        return ('fc',)

    def embed(self, patch: torch.Tensor) -> FeatureMap:
        return self.backbone(patch)

    def template_feature(self, z: torch.Tensor) -> FeatureMap:
        return self.embed(z) * self.out_scale

    def forward(self, z: torch.Tensor, x: torch.Tensor) -> FeatureMap:
        return similarity_map(self.embed(x), self.template_feature(z), self.bias)


def build_pipeline(cfg: BackboneConfig) -> nn.Module:
    """Instantiate the base tracker network for a model config"""
    return SiameseFC(cfg) if cfg.head_type == 'fc' else SiameseRPN(cfg)
