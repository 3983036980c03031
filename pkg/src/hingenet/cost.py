"""FLOP and parameter accounting, and the compression ratio gamma.

Convention: one multiply-accumulate counts as 2 FLOPs; biases, activations
and pooling are ignored. Parameter counts include biases (they are stored
tensors). gamma is always measured against the original un-hinged model.

`build_plan` is the single source of truth for what a nullified model
costs: the hypothetical ratio during optimization and the report of the
final compacted model both come from it, so the two always agree.
"""

from dataclasses import dataclass, field

import numpy as np

from . import hinge
from .hinge import DECOMPOSE, PRUNE, UNTOUCHED, ConvMeta
from .net import Conv2d, HingedConv2d, Network


def conv_flops(meta: ConvMeta, in_alive: int, out_alive: int) -> int:
    if in_alive > meta.in_channels or out_alive > meta.out_channels:
        raise ValueError("alive counts exceed nominal channels")
    return 2 * in_alive * meta.kernel_h * meta.kernel_w * out_alive * meta.spatial


def conv_params(meta: ConvMeta, in_alive: int, out_alive: int) -> int:
    return in_alive * meta.kernel_h * meta.kernel_w * out_alive + out_alive


def pair_flops(meta: ConvMeta, in_alive: int, rank: int) -> int:
    """Reduced conv (in_alive -> rank) followed by a 1x1 back to the full
    output width."""
    return (2 * in_alive * meta.kernel_h * meta.kernel_w * rank * meta.spatial
            + 2 * rank * meta.out_channels * meta.spatial)


def pair_params(meta: ConvMeta, in_alive: int, rank: int) -> int:
    return (in_alive * meta.kernel_h * meta.kernel_w * rank
            + rank * meta.out_channels + meta.out_channels)


def decompose_saves(meta: ConvMeta, rank: int, in_alive: int | None = None) -> bool:
    """True iff keeping the reduced pair as two convolutions is strictly
    cheaper than multiplying them back into one full convolution."""
    if rank < 1:
        raise ValueError("rank must be >= 1")
    k = (in_alive if in_alive is not None else meta.in_channels) \
        * meta.kernel_h * meta.kernel_w
    return rank * (k + meta.out_channels) < k * meta.out_channels


def hypothetical_alive(layer: HingedConv2d, threshold: float | None) -> np.ndarray:
    """Alive-group mask after nullifying groups below `threshold` on top of
    the layer's existing mask (min one survivor). Does not mutate."""
    mask = layer.mask.copy()
    if threshold is not None:
        mask = hinge.update_mask(layer.group_norms(), mask, threshold)
    return mask


@dataclass
class LayerPlan:
    name: str
    mode: str                 # untouched | prune | decompose
    alive_in: int
    alive_out: int
    rank: int | None
    kept_pair: bool
    flops: int
    params: int
    flops_original: int
    alive_out_idx: np.ndarray | None = field(default=None, repr=False)
    alive_rank_idx: np.ndarray | None = field(default=None, repr=False)


@dataclass
class CostReport:
    flops_original: int
    flops_compressed: int
    params_original: int
    params_compressed: int
    gamma: float
    per_layer: list

    def to_dict(self) -> dict:
        return {
            "flop_convention": "2*MAC, biases and activations ignored",
            "flops_original": self.flops_original,
            "flops_compressed": self.flops_compressed,
            "params_original": self.params_original,
            "params_compressed": self.params_compressed,
            "gamma": self.gamma,
            "per_layer": [
                {"name": p.name, "mode": p.mode, "alive_in": p.alive_in,
                 "alive_out": p.alive_out, "rank": p.rank,
                 "kept_pair": p.kept_pair, "flops": p.flops, "params": p.params,
                 "flops_original": p.flops_original,
                 "ratio": p.flops / p.flops_original if p.flops_original else 1.0}
                for p in self.per_layer],
        }


def _plan_conv(name, meta, in_idx):
    flops = conv_flops(meta, len(in_idx), meta.out_channels)
    return LayerPlan(name, UNTOUCHED, len(in_idx), meta.out_channels, None, False,
                     flops, conv_params(meta, len(in_idx), meta.out_channels),
                     conv_flops(meta, meta.in_channels, meta.out_channels),
                     alive_out_idx=np.arange(meta.out_channels))


def _plan_hinged(name, layer, in_idx, threshold, mode_map):
    meta = layer.meta
    mode = hinge.scheme_mode(layer.scheme)
    if mode_map and name in mode_map:
        requested = mode_map[name]
        if requested != mode:
            raise ValueError(
                f"{name}: mode {requested!r} incompatible with {layer.scheme.kind} groups")
        mode = requested
    alive = hypothetical_alive(layer, threshold)
    alive_idx = np.flatnonzero(alive)
    orig = conv_flops(meta, meta.in_channels, meta.out_channels)
    if mode == PRUNE:
        flops = conv_flops(meta, len(in_idx), len(alive_idx))
        params = conv_params(meta, len(in_idx), len(alive_idx))
        return LayerPlan(name, PRUNE, len(in_idx), len(alive_idx), None, False,
                         flops, params, orig, alive_out_idx=alive_idx)
    rank = len(alive_idx)
    kept = decompose_saves(meta, rank, in_alive=len(in_idx))
    if kept:
        flops = pair_flops(meta, len(in_idx), rank)
        params = pair_params(meta, len(in_idx), rank)
    else:
        flops = conv_flops(meta, len(in_idx), meta.out_channels)
        params = conv_params(meta, len(in_idx), meta.out_channels)
    return LayerPlan(name, DECOMPOSE, len(in_idx), meta.out_channels, rank, kept,
                     flops, params, orig,
                     alive_out_idx=np.arange(meta.out_channels), alive_rank_idx=alive_idx)


def build_plan(net: Network, threshold: float | None = None,
               mode_map: dict | None = None) -> list:
    """Per-layer cost plan of the network after (hypothetically) nullifying
    every group with norm below `threshold` on top of the current masks.
    Channel removal propagates: a pruned output shrinks the next layer's
    input. Read-only."""
    plans = []
    in_idx = np.arange(net.arch.input_channels)
    plans.append(_plan_conv("stem", net.stem.meta, in_idx))
    in_idx = plans[-1].alive_out_idx
    for i, blk in enumerate(net.blocks):
        if blk.kind == "plain":
            name = f"block{i}.conv"
            if isinstance(blk.conv, HingedConv2d) and blk.conv.scheme is not None:
                plans.append(_plan_hinged(name, blk.conv, in_idx, threshold, mode_map))
            else:
                plans.append(_plan_conv(name, blk.conv.meta, in_idx))
            in_idx = plans[-1].alive_out_idx
        else:
            block_in = in_idx
            if blk.downsample is None and len(block_in) != blk.conv1.meta.in_channels:
                raise ValueError(
                    f"block{i}: identity skip consumes pruned input channels; "
                    "the producing layer must use row groups")
            name1, name2 = f"block{i}.conv1", f"block{i}.conv2"
            if isinstance(blk.conv1, HingedConv2d) and blk.conv1.scheme is not None:
                p1 = _plan_hinged(name1, blk.conv1, block_in, threshold, mode_map)
            else:
                p1 = _plan_conv(name1, blk.conv1.meta, block_in)
            plans.append(p1)
            if isinstance(blk.conv2, HingedConv2d) and blk.conv2.scheme is not None:
                p2 = _plan_hinged(name2, blk.conv2, p1.alive_out_idx, threshold, mode_map)
                if p2.mode == PRUNE:
                    raise ValueError(
                        f"{name2}: pruning the output of a skip-connected block")
            else:
                p2 = _plan_conv(name2, blk.conv2.meta, p1.alive_out_idx)
            plans.append(p2)
            if blk.downsample is not None:
                plans.append(_plan_conv(f"block{i}.down", blk.downsample.meta, block_in))
            in_idx = p2.alive_out_idx
    head_in = len(in_idx)
    head_full = net.head.w.shape[0]
    classes = net.head.w.shape[1]
    plans.append(LayerPlan("head", UNTOUCHED, head_in, classes, None, False,
                           2 * head_in * classes, head_in * classes + classes,
                           2 * head_full * classes, alive_out_idx=None))
    return plans


def report_from_plan(plans: list, net: Network) -> CostReport:
    flops_orig = sum(p.flops_original for p in plans)
    flops_comp = sum(p.flops for p in plans)
    params_orig = _original_params(net)
    params_comp = sum(p.params for p in plans)
    return CostReport(flops_original=flops_orig, flops_compressed=flops_comp,
                      params_original=params_orig, params_compressed=params_comp,
                      gamma=flops_comp / flops_orig, per_layer=plans)


def _original_params(net: Network) -> int:
    total = 0
    for _, layer in net.named_layers():
        if isinstance(layer, (Conv2d, HingedConv2d)):
            total += conv_params(layer.meta, layer.meta.in_channels,
                                 layer.meta.out_channels)
        else:
            total += layer.w.shape[0] * layer.w.shape[1] + layer.w.shape[1]
    return total


def compression_ratio(net: Network, threshold: float | None,
                      mode_map: dict | None = None) -> float:
    """gamma = FLOPs after hypothetical nullification at `threshold`,
    divided by the original un-hinged model's FLOPs. Pure."""
    plans = build_plan(net, threshold=threshold, mode_map=mode_map)
    return report_from_plan(plans, net).gamma
