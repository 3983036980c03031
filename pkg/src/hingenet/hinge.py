"""Attaching sparsity-inducing matrices to convolutions.

A hinged convolution keeps its reshaped filter W (patch_size x n) and gains
a square matrix A (n x n) that acts as a 1x1 convolution after it. Group
sparsity on A's columns yields filter pruning, on its rows low-rank
decomposition. Position-dependent legality rules protect skip connections:
a block whose output feeds a residual sum may only be row-compressed.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .linalg import COLUMNS, ROWS, DimensionError, GroupScheme

IDENTITY_INIT = "identity"
SVD_INIT = "svd"

# Placement of a hinge matrix inside its block.
FIRST_IN_BASIC = "first-in-basic-block"
SECOND_IN_BASIC = "second-in-basic-block"
LEADING_1X1 = "leading-1x1"
ENDING_1X1 = "ending-1x1"
GROUPED = "grouped"
STANDALONE = "standalone"

PRUNE = "prune"
DECOMPOSE = "decompose"
UNTOUCHED = "untouched"

# Positions whose output side is protected by a skip connection admit only
# row groups; a leading 1x1 exists to select the next conv's inputs, so it
# admits only column groups.
_ALLOWED_KINDS = {
    FIRST_IN_BASIC: (ROWS, COLUMNS),
    SECOND_IN_BASIC: (ROWS,),
    LEADING_1X1: (COLUMNS,),
    ENDING_1X1: (ROWS,),
    STANDALONE: (COLUMNS, ROWS),
}


class SchemeLegalityError(ValueError):
    """The requested group kind is illegal for the layer's position."""


@dataclass(frozen=True)
class ConvMeta:
    """Static geometry of a convolution at a fixed input resolution."""
    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int
    padding: int
    out_h: int
    out_w: int

    @property
    def patch_size(self) -> int:
        return self.in_channels * self.kernel_h * self.kernel_w

    @property
    def spatial(self) -> int:
        return self.out_h * self.out_w

    def with_channels(self, in_channels=None, out_channels=None) -> "ConvMeta":
        return replace(self,
                       in_channels=self.in_channels if in_channels is None else in_channels,
                       out_channels=self.out_channels if out_channels is None else out_channels)


def attach(w: np.ndarray, init: str = SVD_INIT):
    """Split a filter matrix into the (W, A) pair whose product is the
    original filter.

    identity: (W, I). svd: (U, diag(s) Vt) so the stored filter columns are
    unit length and the singular mass moves into A's rows; requires a
    tall-or-square filter (patch_size >= out channels).
    """
    w = linalg.as_matrix(w)
    n = w.shape[1]
    if init == IDENTITY_INIT:
        return w.copy(), np.eye(n)
    if init != SVD_INIT:
        raise ValueError(f"unknown hinge init {init!r}")
    if w.shape[0] < n:
        raise DimensionError(
            f"svd init needs patch_size >= out_channels, got {w.shape}; "
            "use identity init for wide filters")
    res = linalg.svd(w)
    a = res.singular_values[:, None] * res.vt
    return res.u, a


def make_scheme(n: int, position: str, kind: str | None = None, *,
                cardinality: int | None = None,
                lead_rows: int | None = None,
                end_cols: int | None = None) -> GroupScheme:
    """Group scheme for an n x n hinge matrix at the given block position.

    `kind` overrides the position default (rows everywhere it is legal,
    columns for a leading 1x1 and for standalone layers). The grouped
    position instead builds concatenated channel groups spanning the
    leading and ending matrices of a grouped convolution; `n` is then the
    grouped channel count (cardinality * width).
    """
    if position == GROUPED:
        if cardinality is None or lead_rows is None or end_cols is None:
            raise ValueError("grouped scheme needs cardinality, lead_rows, end_cols")
        if n % cardinality != 0:
            raise DimensionError(f"grouped width not integral: {n} / {cardinality}")
        return linalg.concat_scheme(lead_rows, end_cols, cardinality, n // cardinality)
    allowed = _ALLOWED_KINDS.get(position)
    if allowed is None:
        raise ValueError(f"unknown hinge position {position!r}")
    if kind is None:
        kind = ROWS if ROWS in allowed else allowed[0]
        if position == STANDALONE:
            kind = COLUMNS
    if kind not in allowed:
        raise SchemeLegalityError(
            f"{kind} groups are illegal at position {position} "
            f"(allowed: {', '.join(allowed)})")
    return linalg.row_scheme(n, n) if kind == ROWS else linalg.column_scheme(n, n)


def scheme_mode(scheme: GroupScheme) -> str:
    """Structural consequence of nullifying this scheme's groups."""
    if scheme.kind == COLUMNS:
        return PRUNE
    if scheme.kind == ROWS:
        return DECOMPOSE
    raise ValueError(f"no single-layer mode for scheme kind {scheme.kind}")


@dataclass
class GroupStats:
    norms: np.ndarray        # alive groups only
    mean_norm: float
    alive_count: int


def group_stats(a: np.ndarray, scheme: GroupScheme, mask: np.ndarray) -> GroupStats:
    norms = linalg.group_norms(a, scheme)
    alive = norms[mask]
    mean = float(alive.mean()) if alive.size else 0.0
    return GroupStats(norms=alive, mean_norm=mean, alive_count=int(mask.sum()))


def apply_mask(a: np.ndarray, scheme: GroupScheme, mask: np.ndarray) -> np.ndarray:
    """Zero the entries of every dead group. Idempotent."""
    factors = mask.astype(np.float64)
    return linalg.scale_groups(a, scheme, factors)


def update_mask(norms: np.ndarray, mask: np.ndarray, threshold: float) -> np.ndarray:
    """Kill alive groups whose norm fell below `threshold`; dead groups stay
    dead. If nothing would survive, the largest-norm currently-alive group
    is kept so a layer is never fully nullified."""
    new_mask = mask & (norms >= threshold)
    if not new_mask.any():
        guarded = np.where(mask, norms, -np.inf)
        new_mask[int(np.argmax(guarded))] = True
    return new_mask
