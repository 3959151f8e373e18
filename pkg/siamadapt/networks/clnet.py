"""
Compact Latent Network
Feature adjustment, latent encoding, deviation prediction and last-layer weight augmentation
"""

from dataclasses import dataclass
from typing import Dict, Optional, Tuple, Union

import torch
import torch.nn as nn

from siamadapt.config import BackboneConfig, CLNetConfig
from siamadapt.geometry import NEG, POS, LabelMap
from siamadapt.networks.siamese import FeatureMap, HeadWeights, head_forward, head_key, similarity_map
from siamadapt.utils.errors import ConfigurationError, EncoderInputError, InputShapeError

Labels = Union[LabelMap, torch.Tensor]


# ==================== DATA ====================

@dataclass(frozen=True)
class LatentFeature:
    """Compact latent vector with its named segments, e.g. (mu_pos, sigma_pos, mu_neg, sigma_neg)"""
    values: torch.Tensor
    parts: Tuple[Tuple[str, int], ...]

    def __len__(self) -> int:
        return self.values.shape[0]

    def segment(self, name: str) -> torch.Tensor:
        start = 0
        for part, length in self.parts:
            if part == name:
                return self.values[start:start + length]
            start += length
        raise KeyError(name)


@dataclass(frozen=True)
class WeightDelta:
    """
    Decoded deviation predictor output

    additive: `matrix` is the out x (in + 1) deviation of the full head matrix.
    cbam: `row_scale` (out,) and `col_scale` (in + 1,) attention vectors.
    film: `gamma` and `beta` coefficient maps of the full head matrix.
    Every mode carries a scalar `offset` added to the head output.
    """
    mode: str
    offset: torch.Tensor
    matrix: Optional[torch.Tensor] = None
    row_scale: Optional[torch.Tensor] = None
    col_scale: Optional[torch.Tensor] = None
    gamma: Optional[torch.Tensor] = None
    beta: Optional[torch.Tensor] = None


@dataclass(frozen=True)
class FCAdjustment:
    """Adjusted similarity head: template feature, offset and an optional fixed response delta"""
    template: FeatureMap
    bias: torch.Tensor
    response: Optional[torch.Tensor] = None

    def score(self, inst: FeatureMap) -> FeatureMap:
        out = similarity_map(inst, self.template, self.bias)
        return out if self.response is None else out + self.response


# ==================== SIZES ====================

def delta_size(out_dim: int, in_dim: int, augmentation: str = 'additive') -> int:
    """FC3 output size for a head with `out_dim` outputs and `in_dim` inputs"""
    full = out_dim * (in_dim + 1)
    if augmentation == 'additive':
        return full + 1
    if augmentation == 'cbam':
        return out_dim + in_dim + 1 + 1
    if augmentation == 'film':
        return 2 * full + 1
    raise ConfigurationError(f"unknown augmentation mode {augmentation!r}")


def fc_delta_size(model: BackboneConfig, mode: str = 'template') -> int:
    """FC3 output size for the similarity head: template delta or response delta, plus the offset"""
    if mode == 'template':
        return model.embed_channels * model.template_size ** 2 + 1
    if mode == 'response':
        return model.map_size ** 2 + 1
    raise ConfigurationError(f"unknown fc delta mode {mode!r}")


def latent_length(clnet: CLNetConfig) -> int:
    # reg encodes (mu+, sigma+) over 2 c_bar channels, the others all four segments over c_bar
    return 4 * clnet.latent_channels


def latent_channels_for(branch: str, clnet: CLNetConfig) -> int:
    return 2 * clnet.latent_channels if branch == 'reg' else clnet.latent_channels


# ==================== OPERATIONS ====================

def adjust_features(M: FeatureMap, adjuster: 'FeatureAdjuster') -> FeatureMap:
    """M_bar = g_a(M)"""
    return adjuster(M)


def _label_tensor(labels: Labels, batch: int) -> torch.Tensor:
    raw = labels.labels if isinstance(labels, LabelMap) else labels
    return raw.reshape(batch, -1)


def latent_encode(features: FeatureMap, labels: Labels, branch: str = 'cls',
                  mode: str = 'statistics') -> LatentFeature:
    """
    Number-free latent encoding of adjusted hidden vectors

    Every labelled anchor contributes the hidden vector of its cell. Means and population
    standard deviations are taken over all anchors of a set across the whole batch.

    Args:
        features: M_bar, (N, C, H, W)
        labels: Anchor labels, (N, k*H*W) or (k*H*W,) in anchor-major order
        branch: 'reg' encodes the positive set only
        mode: 'statistics' or 'pooled' (sigma segments zero-filled)

    Returns:
        LatentFeature of length 4C ('cls', 'fc') or 2C ('reg')

    Raises:
        EncoderInputError: If a required set is empty
    """
    if features.dim() != 4:
        raise InputShapeError(f"expected (N, C, H, W) features, got {tuple(features.shape)}")
    batch, channels, height, width = features.shape
    cells = height * width
    label_rows = _label_tensor(labels, batch)
    if label_rows.size(1) % cells:
        raise InputShapeError(f"{label_rows.size(1)} labels do not tile a {height}x{width} map")
    anchors = label_rows.size(1) // cells
    flat = features.reshape(batch, channels, cells)

    def statistics(value: int, name: str) -> Tuple[torch.Tensor, torch.Tensor]:
        counts = (label_rows == value).reshape(batch, anchors, cells).sum(dim=1).to(features.dtype)
        total = counts.sum()
        if total == 0:
            raise EncoderInputError(f"{branch} latent encoder needs at least one {name} sample")
        mean = torch.einsum('ncp,np->c', flat, counts) / total
        if mode == 'pooled':
            return mean, torch.zeros_like(mean)
        centered = flat - mean.view(1, channels, 1)
        var = torch.einsum('ncp,np->c', centered * centered, counts) / total
        tiny = torch.finfo(features.dtype).tiny
        std = torch.where(var > 0, var.clamp_min(tiny).sqrt(), torch.zeros_like(var))
        return mean, std

    mu_pos, sigma_pos = statistics(POS, 'positive')
    if branch == 'reg':
        values = torch.cat([mu_pos, sigma_pos])
        parts = (('mu_pos', channels), ('sigma_pos', channels))
    else:
        mu_neg, sigma_neg = statistics(NEG, 'negative')
        values = torch.cat([mu_pos, sigma_pos, mu_neg, sigma_neg])
        parts = (('mu_pos', channels), ('sigma_pos', channels), ('mu_neg', channels), ('sigma_neg', channels))
    return LatentFeature(values, parts)


def split_delta(raw: torch.Tensor, out_dim: int, in_dim: int, augmentation: str = 'additive') -> WeightDelta:
    """Partition a flat FC3 output row-major into the pieces of one augmentation mode"""
    expected = delta_size(out_dim, in_dim, augmentation)
    if raw.dim() != 1 or raw.numel() != expected:
        raise ConfigurationError(
            f"deviation vector of size {raw.numel()} does not fit a {out_dim}x{in_dim} head "
            f"({augmentation} expects {expected})"
        )
    full = out_dim * (in_dim + 1)
    offset = raw[-1]
    if augmentation == 'additive':
        return WeightDelta('additive', offset, matrix=raw[:full].reshape(out_dim, in_dim + 1))
    if augmentation == 'cbam':
        return WeightDelta('cbam', offset,
                           row_scale=1.0 + raw[:out_dim],
                           col_scale=1.0 + raw[out_dim:out_dim + in_dim + 1])
    return WeightDelta('film', offset,
                       gamma=1.0 + raw[:full].reshape(out_dim, in_dim + 1),
                       beta=raw[full:2 * full].reshape(out_dim, in_dim + 1))


def predict_delta(latent: LatentFeature, predictor: 'DeviationPredictor', out_dim: int, in_dim: int,
                  augmentation: str = 'additive') -> WeightDelta:
    """Delta = g_Delta(c), decoded for the target head"""
    if len(latent) != predictor.in_features:
        raise ConfigurationError(
            f"latent of length {len(latent)} does not match predictor input {predictor.in_features}"
        )
    return split_delta(predictor(latent.values), out_dim, in_dim, augmentation)


def augment_weights(theta: HeadWeights, delta: WeightDelta) -> HeadWeights:
    """
    theta_a from theta_1 and a decoded deviation

    additive: theta_1 + Delta; cbam: (theta_1 * delta_m) * delta_n; film: theta_1 * gamma + beta
    """
    full = theta.full
    rows, cols = full.shape
    if delta.mode == 'additive':
        if delta.matrix.shape != full.shape:
            raise ConfigurationError(f"additive delta {tuple(delta.matrix.shape)} vs head {tuple(full.shape)}")
        adjusted = full + delta.matrix
    elif delta.mode == 'cbam':
        if delta.row_scale.shape != (rows,) or delta.col_scale.shape != (cols,):
            raise ConfigurationError(
                f"cbam vectors {tuple(delta.row_scale.shape)}, {tuple(delta.col_scale.shape)} vs head {rows}x{cols}"
            )
        adjusted = full * delta.row_scale.unsqueeze(1) * delta.col_scale.unsqueeze(0)
    elif delta.mode == 'film':
        if delta.gamma.shape != full.shape or delta.beta.shape != full.shape:
            raise ConfigurationError(f"film maps do not match head {rows}x{cols}")
        adjusted = full * delta.gamma + delta.beta
    else:
        raise ConfigurationError(f"unknown augmentation mode {delta.mode!r}")
    return HeadWeights.from_full(adjusted, theta.offset + delta.offset)


def adjusted_forward(M: FeatureMap, theta_a: HeadWeights) -> FeatureMap:
    """A_a = head_1(M; theta_a)"""
    return head_forward(M, theta_a)


def split_fc_delta(raw: torch.Tensor, model: BackboneConfig, mode: str = 'template') -> Tuple[torch.Tensor, torch.Tensor]:
    """(feature-or-response delta, offset delta) from a flat FC3 output"""
    expected = fc_delta_size(model, mode)
    if raw.dim() != 1 or raw.numel() != expected:
        raise ConfigurationError(f"fc deviation of size {raw.numel()} does not match {mode} mode ({expected})")
    if mode == 'template':
        size = model.template_size
        return raw[:-1].reshape(1, model.embed_channels, size, size), raw[-1]
    return raw[:-1].reshape(1, 1, model.map_size, model.map_size), raw[-1]


def fc_adjust(S: FeatureMap, labels: Labels, inst: FeatureMap, tmpl: FeatureMap, b: torch.Tensor,
              branch: 'CLNetBranch') -> Tuple[FeatureMap, torch.Tensor, FeatureMap]:
    """
    Adjust the similarity head from its response map

    Returns:
        (adjusted template, adjusted offset, adjusted response S_f)
    """
    adjustment = branch.adjust_fc(S, labels, tmpl, b)
    return adjustment.template, adjustment.bias, adjustment.score(inst)


# ==================== MODULES ====================

class FeatureAdjuster(nn.Module):
    """g_a: stacked 1x1 conv + BN + ReLU blocks"""

    def __init__(self, in_channels: int, out_channels: int, blocks: int = 3, batch_norm: bool = True):
        super().__init__()
        self.in_channels = in_channels
        self.out_channels = out_channels
        layers = []
        channels = in_channels
        for _ in range(blocks):
            layers.extend([
                nn.Conv2d(channels, out_channels, kernel_size=1),
                nn.BatchNorm2d(out_channels) if batch_norm else nn.Identity(),
                nn.ReLU(inplace=True),
            ])
            channels = out_channels
        self.body = nn.Sequential(*layers)

    def forward(self, M: FeatureMap) -> FeatureMap:
        if M.dim() != 4 or M.size(1) != self.in_channels:
            raise ConfigurationError(
                f"feature adjuster expects {self.in_channels} channels, got {tuple(M.shape)}"
            )
        return self.body(M)


class DeviationPredictor(nn.Module):
    """g_Delta: FC1 -> ReLU -> FC2 -> ReLU -> FC3 -> Tanh"""

    def __init__(self, in_features: int, hidden: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.fc1 = nn.Linear(in_features, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, out_features)

    def forward(self, c: torch.Tensor) -> torch.Tensor:
        hidden = torch.relu(self.fc1(c))
        hidden = torch.relu(self.fc2(hidden))
        return torch.tanh(self.fc3(hidden))

    @torch.no_grad()
    def zero_(self) -> 'DeviationPredictor':
        self.fc3.weight.zero_()
        self.fc3.bias.zero_()
        return self


@dataclass(frozen=True)
class Adjustment:
    weights: HeadWeights
    delta: WeightDelta
    latent: LatentFeature


class CLNetBranch(nn.Module):
    """CLNet for one head branch at one level"""

    def __init__(self, branch: str, model: BackboneConfig, cfg: CLNetConfig):
        super().__init__()
        self.branch = branch
        self.augmentation = cfg.augmentation
        self.latent_mode = cfg.latent_mode
        self.fc_delta_mode = cfg.fc_delta_mode
        self.model_cfg = model
        self.out_dim = model.head_out(branch)
        self.in_dim = model.head_in
        self.adjuster = FeatureAdjuster(model.head_in, latent_channels_for(branch, cfg),
                                        cfg.adjust_blocks, cfg.batch_norm)
        if branch == 'fc':
            out_features = fc_delta_size(model, cfg.fc_delta_mode)
        else:
            out_features = delta_size(self.out_dim, self.in_dim, cfg.augmentation)
        self.predictor = DeviationPredictor(latent_length(cfg), cfg.hidden, out_features)

    def encode(self, M: FeatureMap, labels: Labels) -> LatentFeature:
        return latent_encode(adjust_features(M, self.adjuster), labels, self.branch, self.latent_mode)

    def adjust(self, M: FeatureMap, labels: Labels, theta: HeadWeights) -> Adjustment:
        """theta_a for this branch from its hidden map and first-frame labels"""
        latent = self.encode(M, labels)
        delta = predict_delta(latent, self.predictor, self.out_dim, self.in_dim, self.augmentation)
        return Adjustment(augment_weights(theta, delta), delta, latent)

    def adjust_fc(self, S: FeatureMap, labels: Labels, tmpl: FeatureMap, b: torch.Tensor) -> FCAdjustment:
        latent = self.encode(S, labels)
        delta, offset = split_fc_delta(self.predictor(latent.values), self.model_cfg, self.fc_delta_mode)
        if self.fc_delta_mode == 'template':
            return FCAdjustment(tmpl + delta, b + offset)
        return FCAdjustment(tmpl, b + offset, response=delta)

    def zero_predictor(self) -> 'CLNetBranch':
        self.predictor.zero_()
        return self


class CLNet(nn.Module):
    """One CLNetBranch per adapted branch per level, keyed `<branch>.<level>`"""

    def __init__(self, model: BackboneConfig, cfg: CLNetConfig):
        super().__init__()
        cfg.validate(model)
        self.model_cfg = model
        self.cfg = cfg
        levels = 1 if model.head_type == 'fc' else model.levels
        self.branches = nn.ModuleDict({
            head_key(branch, level): CLNetBranch(branch, model, cfg)
            for level in range(levels) for branch in cfg.branches
        })

    def adjust_heads(self, maps: Dict[str, FeatureMap], labels: Labels,
                     base: Dict[str, HeadWeights]) -> Dict[str, HeadWeights]:
        """Adjusted last-layer weights for every head; heads without a CLNet keep theta_1"""
        adjusted = dict(base)
        for key, branch in self.branches.items():
            adjusted[key] = branch.adjust(maps[key], labels, base[key]).weights
        return adjusted

    def adjust_similarity(self, S: FeatureMap, labels: Labels, tmpl: FeatureMap, b: torch.Tensor) -> FCAdjustment:
        return self.branches[head_key('fc', 0)].adjust_fc(S, labels, tmpl, b)

    def zero_predictor(self) -> 'CLNet':
        for branch in self.branches.values():
            branch.zero_predictor()
        return self


def clnet_parameter_count(model: BackboneConfig, cfg: CLNetConfig, branch: str) -> Dict[str, int]:
    """
    Closed-form parameter count of one CLNetBranch

    Returns:
        Dict with 'adjuster', 'predictor', 'fc3' and 'total'
    """
    width = latent_channels_for(branch, cfg)
    norm = 2 * width if cfg.batch_norm else 0
    adjuster = model.head_in * width + width + norm
    adjuster += (cfg.adjust_blocks - 1) * (width * width + width + norm)

    if branch == 'fc':
        out_features = fc_delta_size(model, cfg.fc_delta_mode)
    else:
        out_features = delta_size(model.head_out(branch), model.head_in, cfg.augmentation)
    latent = latent_length(cfg)
    fc3 = cfg.hidden * out_features + out_features
    predictor = latent * cfg.hidden + cfg.hidden + cfg.hidden * cfg.hidden + cfg.hidden + fc3
    return {'adjuster': adjuster, 'predictor': predictor, 'fc3': fc3, 'total': adjuster + predictor}


def clnet_total_parameters(model: BackboneConfig, cfg: CLNetConfig) -> int:
    levels = 1 if model.head_type == 'fc' else model.levels
    return levels * sum(clnet_parameter_count(model, cfg, branch)['total'] for branch in cfg.branches)
