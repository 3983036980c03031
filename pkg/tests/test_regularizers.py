import numpy as np
import pytest

from hingenet import regularizers as reg
from hingenet.linalg import group_norms, row_scheme
from hingenet.regularizers import (DegenerateGroupsError, ParameterError,
                                   RegularizerSpec, prox_l1, prox_l1_minus_2,
                                   prox_l_half, prox_logsum, prox_oracle,
                                   prox_oracle_l1_minus_2, regularizer_value)

HALF_CUTOFF = 54.0 ** (1.0 / 3.0) / 4.0  # = 0.9449407874211548


def group_matrix(rng, norms, width=5):
    """Rows are groups with the requested L2 norms."""
    norms = np.atleast_1d(np.asarray(norms, float))
    a = np.zeros((norms.size, width))
    for i, n in enumerate(norms):
        row = rng.normal(size=width)
        a[i] = row * (n / np.linalg.norm(row)) if n > 0 else 0.0
    return a, row_scheme(norms.size, width)


class TestProxL1:
    def test_zero_step_identity(self, rng):
        a, scheme = group_matrix(rng, [1.0, 2.0])
        assert np.array_equal(prox_l1(a, scheme, 0.0), a)

    def test_scale_at_norm5(self, rng):
        a, scheme = group_matrix(rng, [5.0])
        out = prox_l1(a, scheme, 1.0)
        assert np.abs(out - 0.8 * a).max() <= 1e-12

    def test_below_threshold_zeroed(self, rng):
        a, scheme = group_matrix(rng, [0.5])
        assert np.all(prox_l1(a, scheme, 1.0) == 0.0)

    def test_cutoff_exactly_at_step(self, rng):
        a, scheme = group_matrix(rng, [1.0])
        assert np.all(prox_l1(a, scheme, 1.0) == 0.0)
        out = group_norms(prox_l1(a * (1 + 1e-9), scheme, 1.0), scheme)
        assert out[0] > 0.0


class TestProxLHalf:
    def test_zero_step_identity(self, rng):
        a, scheme = group_matrix(rng, [0.3, 3.0])
        assert np.array_equal(prox_l_half(a, scheme, 0.0), a)

    def test_nullification_cutoff(self, rng):
        # at step 1 the cutoff is 54^(1/3)/4
        a_below, scheme = group_matrix(rng, [HALF_CUTOFF - 1e-9])
        assert np.all(prox_l_half(a_below, scheme, 1.0) == 0.0)
        a_above, scheme = group_matrix(rng, [HALF_CUTOFF + 1e-6])
        assert group_norms(prox_l_half(a_above, scheme, 1.0), scheme)[0] > 0.5

    def test_scale_at_norm3(self, rng):
        # frozen from the numeric prox oracle (grid + ternary refinement)
        a, scheme = group_matrix(rng, [3.0])
        out = group_norms(prox_l_half(a, scheme, 1.0), scheme)
        assert abs(out[0] - 2.851963773464224) <= 1e-9
        assert abs(out[0] / 3.0 - 0.9506545911547413) <= 1e-9


class TestProxL1Minus2:
    def test_zero_step_identity(self, rng):
        a, scheme = group_matrix(rng, [1.0, 2.0])
        assert np.array_equal(prox_l1_minus_2(a, scheme, 0.0), a)

    def test_two_groups_34(self, rng):
        a, scheme = group_matrix(rng, [3.0, 4.0])
        out = prox_l1_minus_2(a, scheme, 1.0)
        expand = 1.0 + 1.0 / np.sqrt(13.0)
        factors = group_norms(out, scheme) / np.array([3.0, 4.0])
        assert np.abs(factors - expand * np.array([2.0 / 3.0, 3.0 / 4.0])).max() <= 1e-12
        # frozen from the joint descent oracle
        assert np.abs(factors - np.array([0.85156673, 0.95801257])).max() <= 1e-7

    def test_single_group_reexpands_to_identity(self, rng):
        a, scheme = group_matrix(rng, [2.0])
        out = prox_l1_minus_2(a, scheme, 1.0)
        assert np.abs(out - a).max() <= 1e-12  # (1 + 1/1) * (1/2) == 1

    def test_degenerate_all_below(self, rng):
        a, scheme = group_matrix(rng, [0.3, 0.5])
        with pytest.raises(DegenerateGroupsError):
            prox_l1_minus_2(a, scheme, 1.0)


class TestProxLogsum:
    def test_example_norm3(self, rng):
        a, scheme = group_matrix(rng, [3.0])
        out = group_norms(prox_logsum(a, scheme, 1.0, epsilon=0.5), scheme)
        want = (2.5 + np.sqrt(8.25)) / 2.0  # = 2.686140661634507
        assert abs(out[0] - want) <= 1e-12
        assert abs(out[0] / 3.0 - 0.8953802205448357) <= 1e-12

    def test_small_group_zeroed(self, rng):
        a, scheme = group_matrix(rng, [0.05])
        assert np.all(prox_logsum(a, scheme, 1.0, epsilon=0.5) == 0.0)

    def test_step_to_zero_is_continuous(self, rng):
        a, scheme = group_matrix(rng, [2.0])
        out = group_norms(prox_logsum(a, scheme, 1e-8), scheme)
        assert abs(out[0] / 2.0 - 1.0) <= 1e-7

    def test_epsilon_validation(self, rng):
        a, scheme = group_matrix(rng, [1.0])
        with pytest.raises(ParameterError):
            prox_logsum(a, scheme, 1.0, epsilon=1.5)   # >= sqrt(step)
        with pytest.raises(ParameterError):
            prox_logsum(a, scheme, 1.0, epsilon=-0.1)

    def test_default_epsilon_tracks_step(self, rng):
        assert reg.logsum_epsilon(0.04, None) == pytest.approx(0.1)


class TestRegularizerValue:
    def test_l1(self, rng):
        a, scheme = group_matrix(rng, [5.0, 0.0])
        spec = RegularizerSpec("l1", 2e-4)
        assert regularizer_value(a, scheme, spec) == pytest.approx(5.0, abs=1e-12)

    def test_l_half(self, rng):
        a, scheme = group_matrix(rng, [4.0])
        spec = RegularizerSpec("l_half", 4e-4)
        assert regularizer_value(a, scheme, spec) == pytest.approx(2.0, abs=1e-12)

    def test_l1_minus_2(self, rng):
        a, scheme = group_matrix(rng, [3.0, 4.0])
        spec = RegularizerSpec("l1_minus_2", 2e-4)
        assert regularizer_value(a, scheme, spec) == pytest.approx(2.0, abs=1e-12)

    def test_default_factors_per_kind(self):
        assert RegularizerSpec.default("l1").lam == 2e-4
        assert RegularizerSpec.default("l1_minus_2").lam == 2e-4
        assert RegularizerSpec.default("l_half").lam == 4e-4
        assert RegularizerSpec.default("logsum").lam == 9e-5


class TestProxOracle:
    def test_lambda_zero_identity(self):
        spec = RegularizerSpec("l1", 0.0)
        assert prox_oracle(3.7, spec, 1.0) == 3.7

    def test_l1_case(self):
        spec = RegularizerSpec("l1", 1.0)
        assert abs(prox_oracle(5.0, spec, 1.0) - 4.0) <= 1e-6

    def test_l_half_below_cutoff(self):
        spec = RegularizerSpec("l_half", 1.0)
        assert prox_oracle(0.9, spec, 1.0) <= 1e-6


KINDS_AND_OPS = [
    ("l1", prox_l1),
    ("l_half", prox_l_half),
    ("logsum", lambda a, s, st: prox_logsum(a, s, st)),
]


class TestProperties:
    @pytest.mark.parametrize("kind,op", KINDS_AND_OPS)
    def test_closed_form_matches_oracle(self, rng, kind, op):
        spec = RegularizerSpec(kind, 1.0)
        worst = 0.0
        for _ in range(150):
            step = float(rng.uniform(0.01, 2.0))
            norm = float(rng.uniform(0.0, 4.0) * np.sqrt(step))
            a, scheme = group_matrix(rng, [norm])
            got = group_norms(op(a, scheme, step), scheme)[0]
            want = prox_oracle(norm, spec, step)
            worst = max(worst, abs(got - want))
        assert worst <= 1e-6

    def test_l1_minus_2_matches_joint_oracle(self, rng):
        worst = 0.0
        for _ in range(60):
            g = int(rng.integers(2, 9))
            step = float(rng.uniform(0.05, 1.0))
            norms = rng.uniform(0.0, 3.0, g) * np.sqrt(step)
            if norms.max() <= step:
                norms[0] = 2.0 * step
            a, scheme = group_matrix(rng, norms)
            got = group_norms(prox_l1_minus_2(a, scheme, step), scheme)
            want = prox_oracle_l1_minus_2(norms, step, seed=int(rng.integers(2 ** 31)))
            worst = max(worst, np.abs(got - want).max())
        assert worst <= 1e-6

    @pytest.mark.parametrize("kind,op", KINDS_AND_OPS + [
        ("l1_minus_2", lambda a, s, st: prox_l1_minus_2(a, s, st))])
    def test_direction_preserved(self, rng, kind, op):
        # vector prox == scalar prox of the norm times the unit direction
        for _ in range(200):
            step = float(rng.uniform(0.01, 1.5))
            norm = float(rng.uniform(0.05, 3.0))
            a, scheme = group_matrix(rng, [norm] if kind != "l1_minus_2"
                                     else [norm, 2.0 * step + norm])
            out = op(a, scheme, step)
            new_norms = group_norms(out, scheme)
            rebuilt = a * (new_norms / group_norms(a, scheme))[:, None]
            assert np.abs(out - rebuilt).max() <= 1e-12

    @pytest.mark.parametrize("kind,op", KINDS_AND_OPS)
    def test_monotone_in_input_norm(self, rng, kind, op):
        step = 0.7
        norms = np.sort(rng.uniform(0.0, 4.0, 60))
        outs = []
        for n in norms:
            a, scheme = group_matrix(rng, [n])
            outs.append(group_norms(op(a, scheme, step), scheme)[0])
        assert np.all(np.diff(outs) >= -1e-12)

    @pytest.mark.parametrize("kind,op", KINDS_AND_OPS)
    def test_zero_group_stays_zero(self, rng, kind, op):
        a, scheme = group_matrix(rng, [0.0, 2.0])
        out = op(a, scheme, 0.5)
        assert np.all(out[0] == 0.0)

    def test_zero_group_stays_zero_l1_minus_2(self, rng):
        a, scheme = group_matrix(rng, [0.0, 2.0])
        out = prox_l1_minus_2(a, scheme, 0.5)
        assert np.all(out[0] == 0.0)


def test_spec_validation():
    with pytest.raises(ParameterError):
        RegularizerSpec("l3", 1.0)
    with pytest.raises(ParameterError):
        RegularizerSpec("l1", -1.0)
    with pytest.raises(ParameterError):
        RegularizerSpec("logsum", 1.0, epsilon=0.0)
