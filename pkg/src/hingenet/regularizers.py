"""Group-sparsity regularizers and their closed-form proximal operators.

Each operator acts on the L2 norms of the groups of a matrix: the group
direction is preserved and only its norm shrinks (possibly to exactly
zero). The scalar norm maps are exposed separately so the vector operators
are the scalar maps composed with the unit direction by construction.

`prox_oracle` is an independent numeric solver for the same scalar
problems (dense grid plus ternary refinement, and a multi-start descent
for the coupled l1-l2 case); it is the ground truth the closed forms are
checked against.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .linalg import GroupScheme, group_norms, scale_groups

L1 = "l1"
L_HALF = "l_half"
L1_MINUS_2 = "l1_minus_2"
LOGSUM = "logsum"
KINDS = (L1, L_HALF, L1_MINUS_2, LOGSUM)

# Per-regularizer strength defaults for full-scale training runs.
DEFAULT_LAMBDA = {L1: 2e-4, L1_MINUS_2: 2e-4, L_HALF: 4e-4, LOGSUM: 9e-5}

HALF_CUTOFF_COEFF = 54.0 ** (1.0 / 3.0) / 4.0


class DegenerateGroupsError(ValueError):
    """Every group norm is at or below the shrinkage step (l1-l2 only)."""


class ParameterError(ValueError):
    """A regularizer parameter violates its validity range."""


@dataclass(frozen=True)
class RegularizerSpec:
    kind: str
    lam: float
    epsilon: float | None = None  # logsum only; default derived per step

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown regularizer kind {self.kind!r}")
        if self.lam < 0:
            raise ParameterError("lambda must be non-negative")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ParameterError("epsilon must be positive")

    @classmethod
    def default(cls, kind: str) -> "RegularizerSpec":
        return cls(kind=kind, lam=DEFAULT_LAMBDA[kind])


def logsum_epsilon(step: float, epsilon: float | None) -> float:
    """Resolve the logsum epsilon for a given shrinkage step.

    Must satisfy 0 < epsilon < sqrt(step); when unset it tracks the step as
    0.5*sqrt(step).
    """
    if step <= 0:
        raise ParameterError("logsum prox requires step > 0")
    bound = math.sqrt(step)
    if epsilon is None:
        return 0.5 * bound
    if not 0.0 < epsilon < bound:
        raise ParameterError(
            f"logsum epsilon {epsilon} outside (0, sqrt(step)={bound:.6g})")
    return epsilon


# --------------------------------------------------------------------------
# Scalar norm maps: new group norm as a function of the old one.
# --------------------------------------------------------------------------

def l1_norm_map(norm: float, step: float) -> float:
    """Soft thresholding: subtract `step`, clamp at zero."""
    if norm <= step:
        return 0.0
    return norm * (1.0 - step / norm)


def l_half_norm_map(norm: float, step: float) -> float:
    """Half thresholding; zero at or below (54^(1/3)/4)*step^(2/3)."""
    if step == 0.0:
        return norm
    cutoff = HALF_CUTOFF_COEFF * step ** (2.0 / 3.0)
    if norm <= cutoff:
        return 0.0
    phi = math.acos((step / 8.0) * (norm / 3.0) ** (-1.5))
    return (2.0 / 3.0) * norm * (1.0 + math.cos(2.0 * math.pi / 3.0 - (2.0 / 3.0) * phi))


def logsum_norm_map(norm: float, step: float, epsilon: float) -> float:
    """Quadratic-root shrinkage with an energy tie-break against zero.

    The positive stationary point (c1 + sqrt(c2))/2 exists whenever
    c2 > 0, but near the existence boundary it can be a local, not global,
    minimizer of the underlying scalar objective; returning it there would
    disagree with the true prox. The tie-break keeps the operator equal to
    the global argmin for every input.
    """
    if step == 0.0:
        return norm
    c1 = norm - epsilon
    c2 = c1 * c1 - 4.0 * (step - epsilon * norm)
    if c2 <= 0.0:
        return 0.0
    t = 0.5 * (c1 + math.sqrt(c2))
    if t <= 0.0:
        return 0.0
    energy_t = step * math.log1p(t / epsilon) + 0.5 * (t - norm) ** 2
    energy_0 = 0.5 * norm * norm
    return t if energy_t <= energy_0 else 0.0


def l1_minus_2_norm_map(norms: np.ndarray, step: float) -> np.ndarray:
    """Joint map over all group norms of one layer: soft-threshold each
    group, then re-expand by (1 + step/||c||) where c is the vector of
    thresholded norms. Couples the groups."""
    norms = np.asarray(norms, dtype=np.float64)
    if step == 0.0:
        return norms.copy()
    c = np.maximum(norms - step, 0.0)
    c_norm = float(np.linalg.norm(c))
    if c_norm == 0.0:
        raise DegenerateGroupsError(
            "l1-l2 prox undefined: every group norm is <= the step")
    expand = 1.0 + step / c_norm
    with np.errstate(divide="ignore", invalid="ignore"):
        shrink = np.where(norms > step, 1.0 - step / np.where(norms > 0, norms, 1.0), 0.0)
    return expand * shrink * norms


# --------------------------------------------------------------------------
# Matrix-level operators.
# --------------------------------------------------------------------------

def _apply_norm_factors(a, scheme, old_norms, new_norms):
    factors = np.ones_like(old_norms)
    nz = old_norms > 0
    factors[nz] = new_norms[nz] / old_norms[nz]
    factors[~nz] = 0.0  # zero groups stay zero
    return scale_groups(a, scheme, factors)


def prox_l1(a: np.ndarray, scheme: GroupScheme, step: float) -> np.ndarray:
    if step < 0:
        raise ParameterError("step must be non-negative")
    norms = group_norms(a, scheme)
    new = np.array([l1_norm_map(n, step) for n in norms])
    return _apply_norm_factors(a, scheme, norms, new)


def prox_l_half(a: np.ndarray, scheme: GroupScheme, step: float) -> np.ndarray:
    if step < 0:
        raise ParameterError("step must be non-negative")
    norms = group_norms(a, scheme)
    new = np.array([l_half_norm_map(n, step) for n in norms])
    return _apply_norm_factors(a, scheme, norms, new)


def prox_l1_minus_2(a: np.ndarray, scheme: GroupScheme, step: float) -> np.ndarray:
    if step < 0:
        raise ParameterError("step must be non-negative")
    norms = group_norms(a, scheme)
    new = l1_minus_2_norm_map(norms, step)
    return _apply_norm_factors(a, scheme, norms, new)


def prox_logsum(a: np.ndarray, scheme: GroupScheme, step: float,
                epsilon: float | None = None) -> np.ndarray:
    if step < 0:
        raise ParameterError("step must be non-negative")
    if step == 0.0:
        return np.array(a, dtype=np.float64, copy=True)
    eps = logsum_epsilon(step, epsilon)
    norms = group_norms(a, scheme)
    new = np.array([logsum_norm_map(n, step, eps) for n in norms])
    return _apply_norm_factors(a, scheme, norms, new)


def prox(a: np.ndarray, scheme: GroupScheme, spec: RegularizerSpec,
         step: float) -> np.ndarray:
    """Dispatch on spec.kind; `step` is the full shrinkage strength
    (regularization factor times learning rate)."""
    if spec.kind == L1:
        return prox_l1(a, scheme, step)
    if spec.kind == L_HALF:
        return prox_l_half(a, scheme, step)
    if spec.kind == L1_MINUS_2:
        return prox_l1_minus_2(a, scheme, step)
    return prox_logsum(a, scheme, step, spec.epsilon)


def regularizer_value(a: np.ndarray, scheme: GroupScheme,
                      spec: RegularizerSpec) -> float:
    """Monitoring value of the penalty (the prox operators are the
    authority for the optimization itself). For logsum the epsilon defaults
    to 0.5*sqrt(lam) when unset, mirroring the prox convention at step=lam."""
    norms = group_norms(a, scheme)
    if spec.kind == L1:
        return float(np.sum(norms))
    if spec.kind == L_HALF:
        return float(np.sum(np.sqrt(norms)))
    if spec.kind == L1_MINUS_2:
        return float(np.sum(norms) - np.linalg.norm(norms))
    eps = spec.epsilon if spec.epsilon is not None else 0.5 * math.sqrt(max(spec.lam, 1e-300))
    return float(np.sum(np.log1p(norms / eps)))


# --------------------------------------------------------------------------
# Independent numeric oracle.
# --------------------------------------------------------------------------

# Scalar penalties under the (t - x)^2 / (2*step) normalization. The half
# thresholding operator is the exact prox of sqrt(t)/2 under this
# normalization (equivalently of sqrt(t) against (t-x)^2/step); the /2 keeps
# the oracle consistent with the closed form's 54^(1/3)/4 cutoff.
def _scalar_penalty(kind: str, epsilon: float | None):
    if kind == L1:
        return lambda t: t
    if kind == L_HALF:
        return lambda t: 0.5 * np.sqrt(t)
    if kind == LOGSUM:
        return lambda t: np.log1p(t / epsilon)
    raise ParameterError(f"no scalar penalty for kind {kind!r}")


def prox_oracle(group_norm: float, spec: RegularizerSpec, step: float,
                grid: int = 100_000, refine_tol: float = 1e-9) -> float:
    """Numerically minimize penalty(t) + (t - group_norm)^2/(2*step) over
    t >= 0 by dense grid search followed by ternary refinement.

    This is the pre-build verification oracle for the scalar closed forms
    (l1, l_half, logsum). The coupled l1-l2 case needs the joint oracle
    `prox_oracle_l1_minus_2`.
    """
    if group_norm < 0:
        raise ParameterError("group_norm must be non-negative")
    if spec.lam == 0.0 or step == 0.0:
        return group_norm
    eps = logsum_epsilon(step, spec.epsilon) if spec.kind == LOGSUM else None
    penalty = _scalar_penalty(spec.kind, eps)
    hi = 2.0 * group_norm + 1.0
    ts = np.linspace(0.0, hi, grid)
    vals = penalty(ts) + (ts - group_norm) ** 2 / (2.0 * step)
    k = int(np.argmin(vals))
    lo_b = ts[max(k - 1, 0)]
    hi_b = ts[min(k + 1, grid - 1)]

    def f(t):
        return float(penalty(np.asarray(t, dtype=np.float64))
                     + (t - group_norm) ** 2 / (2.0 * step))

    while hi_b - lo_b > refine_tol:
        m1 = lo_b + (hi_b - lo_b) / 3.0
        m2 = hi_b - (hi_b - lo_b) / 3.0
        if f(m1) <= f(m2):
            hi_b = m2
        else:
            lo_b = m1
    return 0.5 * (lo_b + hi_b)


def prox_oracle_l1_minus_2(group_norms_in: np.ndarray, step: float,
                           n_random_starts: int = 4, seed: int = 0) -> np.ndarray:
    """Multi-start bound-constrained descent on the joint objective
    step*(sum(t) - ||t||) + 0.5*||t - x||^2 over t >= 0."""
    x = np.asarray(group_norms_in, dtype=np.float64)
    if step == 0.0:
        return x.copy()

    def obj(t):
        return step * (t.sum() - np.linalg.norm(t)) + 0.5 * np.sum((t - x) ** 2)

    def grad(t):
        nt = np.linalg.norm(t)
        direction = t / nt if nt > 0 else np.zeros_like(t)
        return step * (1.0 - direction) + (t - x)

    rng = np.random.default_rng(seed)
    starts = [x, np.maximum(x - step, 1e-6)]
    for _ in range(n_random_starts):
        starts.append(np.abs(x + rng.normal(0.0, 0.3 + 0.3 * step, x.shape)))
    best = None
    for t0 in starts:
        res = minimize(obj, t0, jac=grad, method="L-BFGS-B",
                       bounds=[(0.0, None)] * x.size,
                       options={"ftol": 1e-16, "gtol": 1e-13, "maxiter": 1000})
        if best is None or res.fun < best.fun:
            best = res
    return np.asarray(best.x, dtype=np.float64)
