"""Tests for observables and fiberwise centering."""
import numpy as np
import pytest

from quenched_limits.bv_calculus import midpoints
from quenched_limits.errors import CenteringError
from quenched_limits.observables import FiberCentering, Observable, cosine, indicator
from quenched_limits.spectral import center_observable

N = 256


class TestObservable:
    """Evaluation of the observable kinds."""

    def test_cosine(self):
        g = Observable(kind="cosine", harmonics=((1, 1.0), (2, 0.5)))
        x = np.array([0.0, 0.25, 0.5])
        assert g.evaluate(0, x) == pytest.approx([1.5, -0.5, -0.5])
        assert g.M == 1.5

    def test_indicator(self):
        g = indicator(0.5, scale=2.0, offset=-1.0)
        assert g.evaluate(0, np.array([0.1, 0.5, 0.9])).tolist() == [-1.0, 1.0, 1.0]
        assert g.M == 1.0

    def test_table(self):
        g = Observable(kind="table", tables=(np.array([0.0, 1.0]), np.array([2.0, 3.0])))
        assert g.evaluate(1, np.array([0.2, 0.7])).tolist() == [2.0, 3.0]
        assert g.grid_values(0, 2).tolist() == [0.0, 1.0]
        assert g.M == 3.0

    def test_table_needs_tables(self):
        with pytest.raises(ValueError):
            Observable(kind="table")

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Observable(kind="sine")

    def test_zero(self):
        g = Observable(kind="zero")
        assert np.all(g.grid_values(0, 8) == 0.0)
        assert g.M == 0.0

    def test_uncentered_offsets_are_zero(self):
        g = cosine(1)
        assert not g.centered
        assert np.all(g.offsets(-5, 10) == 0.0)
        assert g.raw is not g

    def test_with_eta(self):
        assert indicator().with_eta([0, 1]).eta == (0.0, 1.0)


class TestCentering:
    """Fiberwise centering against the equivariant density."""

    def test_cosine_offset_is_zero(self, doubling_family, single_driving, cos_observable):
        """The first harmonic has Lebesgue mean zero."""
        g = center_observable(cos_observable, doubling_family, single_driving, (0, 20), n_cells=N)
        assert g.centered
        assert np.max(np.abs(g.offsets(0, 20))) < 1e-12

    def test_indicator_offset_is_one_half(self, doubling_family, single_driving, lattice_observable):
        g = center_observable(lattice_observable, doubling_family, single_driving, (0, 20), n_cells=N)
        assert g.offsets(0, 20) == pytest.approx([0.5] * 20, abs=1e-12)
        assert g.sup_bound(0, 20) == pytest.approx(1.5)

    def test_two_map_offsets_are_lebesgue_means(self, mixed_family, fair_driving):
        """Both maps preserve Lebesgue, so every offset is the grid mean."""
        raw = indicator(0.3)
        g = center_observable(raw, mixed_family, fair_driving, (0, 50), n_cells=N)
        expected = float(np.mean(midpoints(N) >= 0.3))
        assert g.offsets(0, 50) == pytest.approx([expected] * 50, abs=1e-9)

    def test_offsets_do_not_depend_on_request_order(self, mixed_family, fair_driving):
        """Late blocks computed first give the same offsets."""
        a = FiberCentering(cosine(1, 1.0), mixed_family, fair_driving, 64, block=16)
        b = FiberCentering(cosine(1, 1.0), mixed_family, fair_driving, 64, block=16)
        late = a.offsets(40, 10)
        b.offsets(0, 60)
        assert np.array_equal(late, b.offsets(40, 10))

    def test_residual_check(self, doubling_family, single_driving, cos_observable):
        centering = FiberCentering(cos_observable, doubling_family, single_driving, 64)
        centering.max_residual = 1e-3
        with pytest.raises(CenteringError):
            centering.check(1e-10)
