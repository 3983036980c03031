import numpy as np
import pytest

from hingenet import hinge
from hingenet.hinge import (GROUPED, FIRST_IN_BASIC, SECOND_IN_BASIC, LEADING_1X1,
                            ENDING_1X1, STANDALONE, SchemeLegalityError, attach,
                            group_stats, make_scheme, update_mask)
from hingenet.linalg import (COLUMNS, CONCAT_GROUPS, ROWS, DimensionError,
                             column_scheme, group_norms)


class TestAttach:
    def test_identity_init(self, rng):
        w = rng.normal(size=(18, 4))
        w_new, a = attach(w, "identity")
        assert np.array_equal(w_new, w)
        assert np.array_equal(a, np.eye(4))

    def test_svd_reconstruction(self, rng):
        w = rng.normal(size=(36, 8))
        w_new, a = attach(w, "svd")
        assert np.linalg.norm(w_new @ a - w) <= 1e-8
        assert np.abs(np.linalg.norm(w_new, axis=0) - 1.0).max() <= 1e-10

    def test_svd_row_norms_are_singular_values(self, rng):
        w = rng.normal(size=(20, 5))
        _, a = attach(w, "svd")
        sv = np.linalg.svd(w, compute_uv=False)
        assert np.abs(np.linalg.norm(a, axis=1) - sv).max() <= 1e-9

    @pytest.mark.parametrize("init", ["identity", "svd"])
    def test_forward_preserved(self, rng, init):
        w = rng.normal(size=(27, 6))
        x = rng.normal(size=(40, 27))
        w_new, a = attach(w, init)
        ref = x @ w
        rel = np.linalg.norm(ref - x @ w_new @ a) / np.linalg.norm(ref)
        assert rel <= 1e-8

    def test_rank_deficient_allowed(self, rng):
        w = np.outer(rng.normal(size=12), rng.normal(size=5))
        w_new, a = attach(w, "svd")
        assert np.linalg.norm(w_new @ a - w) <= 1e-8

    def test_wide_filter_rejected_for_svd(self, rng):
        with pytest.raises(DimensionError):
            attach(rng.normal(size=(4, 9)), "svd")
        w_new, a = attach(rng.normal(size=(4, 9)), "identity")
        assert a.shape == (9, 9)


class TestMakeScheme:
    def test_second_in_basic_is_rows(self):
        scheme = make_scheme(6, SECOND_IN_BASIC)
        assert scheme.kind == ROWS
        assert scheme.group_count == 6

    def test_columns_illegal_on_second(self):
        with pytest.raises(SchemeLegalityError):
            make_scheme(6, SECOND_IN_BASIC, kind=COLUMNS)

    def test_rows_illegal_on_leading(self):
        with pytest.raises(SchemeLegalityError):
            make_scheme(6, LEADING_1X1, kind=ROWS)
        assert make_scheme(6, LEADING_1X1).kind == COLUMNS

    def test_ending_is_rows(self):
        assert make_scheme(6, ENDING_1X1).kind == ROWS

    def test_first_in_basic_defaults_rows_but_allows_columns(self):
        assert make_scheme(6, FIRST_IN_BASIC).kind == ROWS
        assert make_scheme(6, FIRST_IN_BASIC, kind=COLUMNS).kind == COLUMNS

    def test_standalone_defaults_columns(self):
        assert make_scheme(6, STANDALONE).kind == COLUMNS
        assert make_scheme(6, STANDALONE, kind=ROWS).kind == ROWS

    def test_columns_scheme_8x8(self):
        scheme = make_scheme(8, STANDALONE, kind=COLUMNS)
        assert scheme.group_count == 8
        assert all(len(g) == 8 for g in scheme.groups)

    def test_grouped_concat(self):
        scheme = make_scheme(8, GROUPED, cardinality=4, lead_rows=5, end_cols=3)
        assert scheme.kind == CONCAT_GROUPS
        assert scheme.group_count == 4
        # each group: width 2 columns over a (5+3)-row carrier
        assert all(len(g) == 2 * 8 for g in scheme.groups)
        covered = sorted(int(i) for g in scheme.groups for i in g)
        assert covered == list(range(8 * 8))

    def test_grouped_needs_integral_width(self):
        with pytest.raises(DimensionError):
            make_scheme(7, GROUPED, cardinality=4, lead_rows=5, end_cols=3)

    def test_unknown_position(self):
        with pytest.raises(ValueError):
            make_scheme(4, "middle")


class TestGroupStats:
    def test_identity_columns(self):
        a = np.eye(4)
        scheme = column_scheme(4, 4)
        stats = group_stats(a, scheme, np.ones(4, dtype=bool))
        assert np.allclose(stats.norms, 1.0)
        assert stats.mean_norm == pytest.approx(1.0)
        assert stats.alive_count == 4

    def test_masked_groups_excluded(self):
        a = np.eye(4)
        scheme = column_scheme(4, 4)
        mask = np.array([True, False, True, False])
        stats = group_stats(a, scheme, mask)
        assert stats.alive_count == 2
        assert stats.norms.shape == (2,)

    def test_mean_matches_recompute(self, rng):
        a = rng.normal(size=(6, 6))
        scheme = column_scheme(6, 6)
        mask = rng.random(6) > 0.3
        mask[0] = True
        stats = group_stats(a, scheme, mask)
        want = group_norms(a, scheme)[mask].mean()
        assert stats.mean_norm == pytest.approx(want, rel=1e-12)


class TestMasking:
    def test_apply_mask_idempotent(self, rng):
        a = rng.normal(size=(5, 5))
        scheme = column_scheme(5, 5)
        mask = np.array([True, False, True, True, False])
        once = hinge.apply_mask(a, scheme, mask)
        twice = hinge.apply_mask(once, scheme, mask)
        assert np.array_equal(once, twice)
        assert np.all(once[:, [1, 4]] == 0.0)

    def test_update_mask_thresholds(self):
        norms = np.array([0.5, 0.001, 2.0, 0.004])
        mask = np.ones(4, dtype=bool)
        out = update_mask(norms, mask, 0.005)
        assert out.tolist() == [True, False, True, False]

    def test_update_mask_permanent(self):
        norms = np.array([1.0, 1.0])
        mask = np.array([True, False])
        out = update_mask(norms, mask, 0.005)
        assert out.tolist() == [True, False]  # dead stays dead

    def test_update_mask_min_alive(self):
        norms = np.array([0.001, 0.003, 0.002])
        out = update_mask(norms, np.ones(3, dtype=bool), 0.005)
        assert out.tolist() == [False, True, False]  # largest survivor kept
