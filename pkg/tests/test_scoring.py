import numpy as np
import pytest

from tilesparse.core import as_matrix, select_prune_units
from tilesparse.errors import InvalidInputError
from tilesparse.scoring import MAGNITUDE, ScoreProvider, score_elements, score_group


class TestScoreElements:
    def test_magnitude_is_absolute_value(self):
        out = score_elements(as_matrix([[-3.0, 1.0]]))
        assert np.array_equal(out, [[3.0, 1.0]])

    def test_taylor_product(self):
        p = ScoreProvider("taylor", gradient=[[0.5]])
        out = score_elements(as_matrix([[2.0]]), p)
        assert np.array_equal(out, [[1.0]])

    def test_all_zero_weights_score_zero(self):
        out = score_elements(np.zeros((3, 4), dtype=np.float32))
        assert np.count_nonzero(out) == 0

    def test_gradient_shape_mismatch(self):
        p = ScoreProvider("taylor", gradient=[[0.5, 1.0]])
        with pytest.raises(InvalidInputError):
            score_elements(as_matrix([[2.0]]), p)

    def test_taylor_requires_gradient(self):
        with pytest.raises(InvalidInputError):
            ScoreProvider("taylor")

    def test_unknown_kind_rejected(self):
        with pytest.raises(InvalidInputError):
            ScoreProvider("hessian")


class TestScoreGroup:
    def test_column_units(self):
        w = as_matrix([[1, -1], [2, -2]])
        out = score_group(w, (2, 1))
        assert out.shape == (1, 2)
        assert np.array_equal(out.ravel(), [3.0, 3.0])

    def test_1x1_units_reduce_to_elements(self):
        rng = np.random.default_rng(0)
        w = as_matrix(rng.normal(size=(5, 7)))
        assert np.array_equal(score_group(w, (1, 1)), score_elements(w))

    def test_ragged_trailing_unit(self):
        out = score_group(as_matrix([[1, 2, 3]]), (1, 2))
        assert np.array_equal(out.ravel(), [3.0, 3.0])

    def test_unit_larger_than_matrix_in_both_dims(self):
        with pytest.raises(InvalidInputError):
            score_group(as_matrix([[1.0, 2.0], [3.0, 4.0]]), (3, 3))

    def test_unit_larger_in_one_dim_is_ragged(self):
        out = score_group(as_matrix([[1.0, 2.0]]), (2, 1))
        assert np.array_equal(out.ravel(), [1.0, 2.0])

    def test_scores_non_negative(self):
        rng = np.random.default_rng(1)
        w = as_matrix(rng.normal(size=(8, 8)))
        for provider in (MAGNITUDE, ScoreProvider("taylor", rng.normal(size=(8, 8)))):
            assert np.all(score_elements(w, provider) >= 0)
            assert np.all(score_group(w, (2, 4), provider) >= 0)

    def test_additivity_over_disjoint_units(self):
        rng = np.random.default_rng(2)
        w = as_matrix(rng.normal(size=(6, 8)))
        per_block = score_group(w, (3, 2))
        whole = score_group(w, (6, 8))
        assert np.isclose(per_block.sum(), whole[0, 0], rtol=1e-12)

    def test_positive_scaling_preserves_selection(self):
        rng = np.random.default_rng(3)
        w = as_matrix(rng.normal(size=(4, 6)))
        base = score_elements(w).ravel()
        scaled = score_elements(as_matrix(2.5 * w)).ravel()
        ids = np.arange(base.size)
        a = select_prune_units(list(zip(ids.tolist(), base.tolist())), 0.5)
        b = select_prune_units(list(zip(ids.tolist(), scaled.tolist())), 0.5)
        assert np.array_equal(a.pruned, b.pruned)
