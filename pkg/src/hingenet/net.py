"""A small CNN with hand-written reverse-mode gradients.

Convolution is realized as one matrix product over im2col patches, so a
hinged layer is literally `patches @ W @ A` and the compression math and
the network math share the same code path. Blocks are either a plain
conv+relu or a residual pair of 3x3 convs with an optional projection on
the skip path. All parameters are float64 numpy arrays; every layer caches
what its backward pass needs during forward.
"""

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import hinge, linalg
from .hinge import ConvMeta
from .linalg import matmul

WEIGHT = "weight"   # updated by plain SGD, subject to weight decay
BIAS = "bias"       # updated by plain SGD, no decay
HINGE = "hinge"     # the sparsity-inducing matrices, updated by prox steps


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold (B, C, H, W) into (B*out_h*out_w, C*kh*kw) patch rows with
    feature order (channel, kernel row, kernel col)."""
    b, c, h, w = x.shape
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    # (b, c, oh', ow', kh, kw) strided view, no copy until the final reshape
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(b * out_h * out_w, c * kh * kw)


def col2im(dcol: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter patch-row gradients back onto the image."""
    b, c, h, w = x_shape
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (w + 2 * pad - kw) // stride + 1
    dcol = dcol.reshape(b, out_h, out_w, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        i_end = i + stride * out_h
        for j in range(kw):
            j_end = j + stride * out_w
            dxp[:, :, i:i_end:stride, j:j_end:stride] += dcol[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp


class Conv2d:
    """Convolution stored as a (patch_size x out_channels) matrix plus bias."""

    def __init__(self, meta: ConvMeta, w: np.ndarray | None = None,
                 b: np.ndarray | None = None, rng: np.random.Generator | None = None):
        self.meta = meta
        if w is None:
            std = np.sqrt(2.0 / meta.patch_size)
            w = rng.normal(0.0, std, size=(meta.patch_size, meta.out_channels))
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.b = (np.zeros(meta.out_channels) if b is None
                  else np.ascontiguousarray(b, dtype=np.float64))
        self.grad_w = np.zeros_like(self.w)
        self.grad_b = np.zeros_like(self.b)
        self.needs_input_grad = True  # the stem turns this off
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        m = self.meta
        col = im2col(x, m.kernel_h, m.kernel_w, m.stride, m.padding)
        z = matmul(col, self.w) + self.b
        self._cache = (x.shape, col)
        b = x.shape[0]
        return z.reshape(b, m.out_h, m.out_w, m.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray) -> np.ndarray | None:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        m = self.meta
        x_shape, col = self._cache
        dz = dy.transpose(0, 2, 3, 1).reshape(-1, m.out_channels)
        self.grad_w += matmul(col.T, dz)
        self.grad_b += dz.sum(axis=0)
        if not self.needs_input_grad:
            return None
        dcol = matmul(dz, self.w.T)
        return col2im(dcol, x_shape, m.kernel_h, m.kernel_w, m.stride, m.padding)

    def params(self, prefix: str):
        yield f"{prefix}/W", WEIGHT, self, "w"
        yield f"{prefix}/b", BIAS, self, "b"

    def state_tensors(self, prefix: str) -> OrderedDict:
        return OrderedDict(((f"{prefix}/W", self.w), (f"{prefix}/b", self.b)))


class HingedConv2d:
    """Convolution followed by its hinge: `patches @ w @ a + b`.

    `w` is (patch_size x rank), `a` is (rank x out_channels); a freshly
    attached layer has rank == out_channels and a square `a`. `scheme` and
    `mask` exist only while the layer is being compressed; a decomposed
    compact layer reuses this class with scheme=None and a rectangular `a`.
    """

    def __init__(self, meta: ConvMeta, w: np.ndarray, a: np.ndarray,
                 b: np.ndarray | None = None,
                 scheme: linalg.GroupScheme | None = None,
                 mask: np.ndarray | None = None,
                 position: str = hinge.STANDALONE):
        self.meta = meta
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.a = np.ascontiguousarray(a, dtype=np.float64)
        if self.w.shape[0] != meta.patch_size:
            raise linalg.DimensionError(
                f"filter rows {self.w.shape[0]} != patch size {meta.patch_size}")
        if self.w.shape[1] != self.a.shape[0] or self.a.shape[1] != meta.out_channels:
            raise linalg.DimensionError(
                f"hinge shapes {self.w.shape} x {self.a.shape} do not produce "
                f"{meta.out_channels} outputs")
        self.b = (np.zeros(meta.out_channels) if b is None
                  else np.ascontiguousarray(b, dtype=np.float64))
        self.scheme = scheme
        self.mask = mask if mask is not None else (
            np.ones(scheme.group_count, dtype=bool) if scheme is not None else None)
        self.position = position
        self.grad_w = np.zeros_like(self.w)
        self.grad_a = np.zeros_like(self.a)
        self.grad_b = np.zeros_like(self.b)
        self._cache = None

    @property
    def rank(self) -> int:
        return self.a.shape[0]

    def group_norms(self) -> np.ndarray:
        return linalg.group_norms(self.a, self.scheme)

    def stats(self) -> hinge.GroupStats:
        return hinge.group_stats(self.a, self.scheme, self.mask)

    def apply_mask(self) -> None:
        """Zero every dead group of `a`; for column groups the matching
        bias entries go too, so a dead output channel is exactly zero."""
        self.a = hinge.apply_mask(self.a, self.scheme, self.mask)
        if self.scheme.kind == linalg.COLUMNS:
            self.b = self.b * self.mask.astype(np.float64)

    def forward(self, x: np.ndarray) -> np.ndarray:
        m = self.meta
        col = im2col(x, m.kernel_h, m.kernel_w, m.stride, m.padding)
        pre = matmul(col, self.w)
        z = matmul(pre, self.a) + self.b
        self._cache = (x.shape, col, pre)
        b = x.shape[0]
        return z.reshape(b, m.out_h, m.out_w, m.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        m = self.meta
        x_shape, col, pre = self._cache
        dz = dy.transpose(0, 2, 3, 1).reshape(-1, m.out_channels)
        self.grad_a += matmul(pre.T, dz)
        self.grad_b += dz.sum(axis=0)
        dpre = matmul(dz, self.a.T)
        self.grad_w += matmul(col.T, dpre)
        dcol = matmul(dpre, self.w.T)
        return col2im(dcol, x_shape, m.kernel_h, m.kernel_w, m.stride, m.padding)

    def params(self, prefix: str):
        yield f"{prefix}/W", WEIGHT, self, "w"
        yield f"{prefix}/A", HINGE, self, "a"
        yield f"{prefix}/b", BIAS, self, "b"

    def state_tensors(self, prefix: str) -> OrderedDict:
        out = OrderedDict(((f"{prefix}/W", self.w), (f"{prefix}/A", self.a)))
        if self.mask is not None:
            out[f"{prefix}/mask"] = self.mask.astype(np.uint8)
        out[f"{prefix}/b"] = self.b
        return out


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class GlobalAvgPool:
    def __init__(self):
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self._shape
        return np.broadcast_to(dy[:, :, None, None], self._shape) / (h * w)


class Linear:
    def __init__(self, in_features: int, out_features: int,
                 w: np.ndarray | None = None, b: np.ndarray | None = None,
                 rng: np.random.Generator | None = None):
        if w is None:
            std = np.sqrt(1.0 / in_features)
            w = rng.normal(0.0, std, size=(in_features, out_features))
        self.w = np.ascontiguousarray(w, dtype=np.float64)
        self.b = np.zeros(out_features) if b is None else np.ascontiguousarray(b, dtype=np.float64)
        self.grad_w = np.zeros_like(self.w)
        self.grad_b = np.zeros_like(self.b)
        self._cache = None

    def forward(self, x):
        self._cache = x
        return matmul(x, self.w) + self.b

    def backward(self, dy):
        x = self._cache
        self.grad_w += matmul(x.T, dy)
        self.grad_b += dy.sum(axis=0)
        return matmul(dy, self.w.T)

    def params(self, prefix: str):
        yield f"{prefix}/W", WEIGHT, self, "w"
        yield f"{prefix}/b", BIAS, self, "b"

    def state_tensors(self, prefix: str) -> OrderedDict:
        return OrderedDict(((f"{prefix}/W", self.w), (f"{prefix}/b", self.b)))


class PlainBlock:
    """conv -> relu, no skip."""
    kind = "plain"

    def __init__(self, conv):
        self.conv = conv
        self.relu = ReLU()

    def forward(self, x):
        return self.relu.forward(self.conv.forward(x))

    def backward(self, dy):
        return self.conv.backward(self.relu.backward(dy))

    def layers(self, prefix: str):
        yield f"{prefix}.conv", self.conv


class BasicBlock:
    """Residual pair of 3x3 convs: y = relu(conv2(relu(conv1(x))) + skip(x)).

    The skip is the identity when shapes already match, otherwise a 1x1
    projection conv. Because the block output joins the skip sum, its
    channel count must survive compression unchanged.
    """
    kind = "basic"

    def __init__(self, conv1, conv2, downsample=None):
        self.conv1 = conv1
        self.conv2 = conv2
        self.downsample = downsample
        self.relu1 = ReLU()
        self.relu2 = ReLU()

    def forward(self, x):
        h = self.relu1.forward(self.conv1.forward(x))
        f = self.conv2.forward(h)
        s = self.downsample.forward(x) if self.downsample is not None else x
        return self.relu2.forward(f + s)

    def backward(self, dy):
        dsum = self.relu2.backward(dy)
        dx = self.conv1.backward(self.relu1.backward(self.conv2.backward(dsum)))
        if self.downsample is not None:
            dx = dx + self.downsample.backward(dsum)
        else:
            dx = dx + dsum
        return dx

    def layers(self, prefix: str):
        yield f"{prefix}.conv1", self.conv1
        yield f"{prefix}.conv2", self.conv2
        if self.downsample is not None:
            yield f"{prefix}.down", self.downsample


@dataclass(frozen=True)
class BlockDef:
    kind: str            # "plain" | "basic"
    channels: int
    stride: int = 1


@dataclass(frozen=True)
class ArchSpec:
    input_channels: int
    input_h: int
    input_w: int
    classes: int
    stem_channels: int
    blocks: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.blocks) < 1:
            raise ValueError("architecture needs at least one block")
        for bd in self.blocks:
            if bd.kind not in ("plain", "basic"):
                raise ValueError(f"unsupported block kind {bd.kind!r}")


class Network:
    """Stem conv -> blocks -> global average pool -> linear classifier."""

    def __init__(self, arch: ArchSpec, stem, blocks, head):
        self.arch = arch
        self.stem = stem
        self.stem_relu = ReLU()
        self.blocks = blocks
        self.pool = GlobalAvgPool()
        self.head = head

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self.stem_relu.forward(self.stem.forward(x))
        for blk in self.blocks:
            h = blk.forward(h)
        return self.head.forward(self.pool.forward(h))

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        dh = self.pool.backward(self.head.backward(dlogits))
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        return self.stem.backward(self.stem_relu.backward(dh))

    def named_layers(self):
        yield "stem", self.stem
        for i, blk in enumerate(self.blocks):
            yield from blk.layers(f"block{i}")
        yield "head", self.head

    def hinged_layers(self):
        return [(name, layer) for name, layer in self.named_layers()
                if isinstance(layer, HingedConv2d) and layer.scheme is not None]

    def hinged_basic_pairs(self):
        """(block name, conv1, conv2) for every basic block whose convs are
        both hinged; used by the gradient-ratio learning-rate rule."""
        pairs = []
        for i, blk in enumerate(self.blocks):
            if (blk.kind == "basic"
                    and isinstance(blk.conv1, HingedConv2d) and blk.conv1.scheme is not None
                    and isinstance(blk.conv2, HingedConv2d) and blk.conv2.scheme is not None):
                pairs.append((f"block{i}", blk.conv1, blk.conv2))
        return pairs

    def params(self):
        for name, layer in self.named_layers():
            yield from layer.params(name)

    def zero_grads(self):
        for _, _, layer, attr in self.params():
            grad = getattr(layer, f"grad_{attr}")
            grad[...] = 0.0

    def state_tensors(self) -> OrderedDict:
        out = OrderedDict()
        for name, layer in self.named_layers():
            out.update(layer.state_tensors(name))
        return out

    def load_state_tensors(self, tensors) -> None:
        for name, layer in self.named_layers():
            for key in layer.state_tensors(name):
                if key not in tensors:
                    raise KeyError(f"checkpoint missing tensor {key!r}")
                value = tensors[key]
                attr = key.rsplit("/", 1)[1]
                if attr == "mask":
                    if layer.mask is None or value.shape != layer.mask.shape:
                        raise ValueError(f"mask shape mismatch for {name}")
                    layer.mask = value.astype(bool)
                    continue
                attr = {"W": "w", "A": "a", "b": "b"}[attr]
                current = getattr(layer, attr)
                if value.shape != current.shape:
                    raise ValueError(
                        f"tensor {key!r}: shape {value.shape} != expected {current.shape}")
                setattr(layer, attr, np.ascontiguousarray(value, dtype=np.float64))
                setattr(layer, f"grad_{attr}", np.zeros_like(value, dtype=np.float64))


def _conv_meta(in_ch, out_ch, kernel, stride, pad, in_h, in_w):
    out_h = (in_h + 2 * pad - kernel) // stride + 1
    out_w = (in_w + 2 * pad - kernel) // stride + 1
    return ConvMeta(in_ch, out_ch, kernel, kernel, stride, pad, out_h, out_w)


def build_network(arch: ArchSpec, seed: int) -> Network:
    """Baseline network: plain convolutions everywhere, seeded init."""
    rng = np.random.default_rng(seed)
    h, w = arch.input_h, arch.input_w
    stem = Conv2d(_conv_meta(arch.input_channels, arch.stem_channels, 3, 1, 1, h, w), rng=rng)
    stem.needs_input_grad = False
    in_ch = arch.stem_channels
    blocks = []
    for bd in arch.blocks:
        if bd.kind == "plain":
            meta = _conv_meta(in_ch, bd.channels, 3, bd.stride, 1, h, w)
            blocks.append(PlainBlock(Conv2d(meta, rng=rng)))
            last_meta = meta
        else:
            meta1 = _conv_meta(in_ch, bd.channels, 3, bd.stride, 1, h, w)
            meta2 = _conv_meta(bd.channels, bd.channels, 3, 1, 1, meta1.out_h, meta1.out_w)
            down = None
            if bd.stride != 1 or in_ch != bd.channels:
                down = Conv2d(_conv_meta(in_ch, bd.channels, 1, bd.stride, 0, h, w), rng=rng)
            blocks.append(BasicBlock(Conv2d(meta1, rng=rng), Conv2d(meta2, rng=rng), down))
            last_meta = meta2
        h, w = last_meta.out_h, last_meta.out_w
        in_ch = bd.channels
    head = Linear(in_ch, arch.classes, rng=rng)
    return Network(arch, stem, blocks, head)


def attach_hinges(net: Network, init: str = hinge.SVD_INIT,
                  first_kind: str | None = None,
                  plain_kind: str | None = None) -> Network:
    """Replace every block convolution by its hinged version in place.

    `first_kind` picks the group kind for the first conv of each basic
    block (default rows); the second conv is always rows because of the
    skip connection. `plain_kind` picks the kind for plain-block convs
    (default columns), except that a plain block feeding a basic block
    with an identity skip is forced to rows: the skip consumes its output
    channels, so they must survive. Stem, head, and skip projections stay
    unhinged.
    """
    for i, blk in enumerate(net.blocks):
        if blk.kind == "plain":
            kind = plain_kind
            nxt = net.blocks[i + 1] if i + 1 < len(net.blocks) else None
            if nxt is not None and nxt.kind == "basic" and nxt.downsample is None:
                kind = linalg.ROWS
            blk.conv = _hinge_conv(blk.conv, init, hinge.STANDALONE, kind)
        else:
            blk.conv1 = _hinge_conv(blk.conv1, init, hinge.FIRST_IN_BASIC, first_kind)
            blk.conv2 = _hinge_conv(blk.conv2, init, hinge.SECOND_IN_BASIC, None)
    return net


def _hinge_conv(conv: Conv2d, init: str, position: str, kind: str | None) -> HingedConv2d:
    w_new, a_new = hinge.attach(conv.w, init)
    scheme = hinge.make_scheme(conv.meta.out_channels, position, kind)
    return HingedConv2d(conv.meta, w_new, a_new, b=conv.b.copy(),
                        scheme=scheme, position=position)
