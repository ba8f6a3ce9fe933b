"""Desk-scale acceptance runs against closed-form oracles.

Doubling with cos(2 pi x) has sigma^2 = 1/2 because cos(2 pi x) and
cos(2 pi 2^j x) are orthogonal; the centered indicator of [1/2, 1) sums
i.i.d. fair bits, sigma^2 = 1/4 on the integer lattice.
"""
import math
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from quenched_limits.bv_calculus import check_variation_axioms
from quenched_limits.config import parse_config
from quenched_limits.limit_theorems import (
    aperiodicity_scan,
    birkhoff_samples,
    clt_experiment,
    eta_bar,
    lclt_experiment,
    lclt_periodic_experiment,
    ldp_experiment,
    ldp_trend,
    legendre_rate,
)
from quenched_limits.observables import cosine, indicator
from quenched_limits.rds_model import BernoulliShift, MapFamily, doubling, tripling
from quenched_limits.runner import run
from quenched_limits.spectral import (
    center_observable,
    correlation_decay,
    decay_rate,
    lambda_curve,
    lyapunov_exponent,
    normalizer_logs,
    refinement_study,
    variance,
)

pytestmark = pytest.mark.slow

SEED = 20240
DOUBLING = MapFamily.from_maps(doubling())
MIXED = MapFamily.from_maps(doubling(), tripling())
ONE = BernoulliShift((1.0,), seed=SEED)
FAIR = BernoulliShift((0.5, 0.5), seed=SEED)
FAMILIES = [(DOUBLING, ONE), (MIXED, FAIR)]


@pytest.fixture(scope="module")
def doubling_cos_4096():
    """Centered cos on the window of a 2e4-step curve at N=4096."""
    return center_observable(cosine(1), DOUBLING, ONE, (-20256, 1024), n_cells=4096)


@pytest.fixture(scope="module")
def doubling_curve(doubling_cos_4096):
    return lambda_curve(DOUBLING, ONE, doubling_cos_4096, n_orbit=20000, n_burn=256, n_cells=4096)


@pytest.fixture(scope="module")
def doubling_cos_1024():
    return center_observable(cosine(1), DOUBLING, ONE, (-20256, 12000), n_cells=1024)


@pytest.fixture(scope="module")
def doubling_indicator_1024():
    return center_observable(indicator(0.5), DOUBLING, ONE, (-20256, 12000), n_cells=1024)


class TestZeroTwist:
    """lambda^0 = 1 per step and Lambda(0) = 0."""

    @pytest.mark.parametrize("n_cells", [256, 1024, 4096])
    @pytest.mark.parametrize("family,driving", FAMILIES)
    def test_exact(self, family, driving, n_cells):
        logs = normalizer_logs(family, driving, 0.0, None, 64, n_cells)
        assert np.max(np.abs(np.expm1(logs))) <= 1e-12
        assert abs(lyapunov_exponent(family, driving, 0.0, None, 64, 16, n_cells)) <= 1e-10


class TestCurveAtZero:
    """Derivatives of Lambda at 0."""

    def test_centering_kills_the_drift(self, doubling_curve):
        assert abs(doubling_curve.d1_at_0) <= 1e-3

    def test_second_derivative_is_sigma2(self, doubling_curve):
        assert doubling_curve.d2_at_0 == pytest.approx(0.5, rel=0.02)
        assert doubling_curve.convexity_violations == []

    def test_series_matches_orthogonality(self, doubling_cos_4096, doubling_curve):
        est = variance(DOUBLING, ONE, doubling_cos_4096, n_cells=4096, curve=doubling_curve)
        assert est.sigma2_series == pytest.approx(0.5, abs=1e-6)

    def test_two_map_estimators_agree(self):
        g = center_observable(cosine(1), MIXED, FAIR, (-20256, 1100), n_cells=1024)
        curve = lambda_curve(MIXED, FAIR, g, theta_grid=(-0.1, 0.0, 0.1), n_orbit=20000, n_burn=256,
                             n_cells=1024)
        est = variance(MIXED, FAIR, g, n_cells=1024, curve=curve)
        assert est.sigma2_curve == pytest.approx(est.sigma2_series, rel=0.05)


class TestSpectralGap:
    """Decay of the mean-zero part and of correlations."""

    def test_doubling_rate(self):
        """Matrix powers contract mean-zero vectors by 1/2."""
        fit = decay_rate(DOUBLING, ONE, 0.0, None, n_cells=256)
        assert fit.r_hat <= 0.51

    @pytest.mark.parametrize("family,driving", FAMILIES)
    def test_correlations(self, family, driving):
        fit = correlation_decay(family, driving, n_cells=1024)
        assert fit.rho < 1.0
        assert fit.residual < 0.1


class TestClt:
    """Gaussian fluctuations of doubling + cos."""

    def test_ks_and_variance(self, doubling_cos_1024):
        batch = birkhoff_samples(DOUBLING, ONE, doubling_cos_1024, 0, 2000, 100000, SEED, n_cells=1024, workers=4)
        result = clt_experiment(batch, 0.5)
        assert result.ks <= 0.02
        assert result.var_emp == pytest.approx(0.5, rel=0.03)


class TestLdp:
    """Tail rates of doubling + cos."""

    def test_rates(self, doubling_cos_1024):
        curve = lambda_curve(DOUBLING, ONE, doubling_cos_1024, n_orbit=20000, n_burn=256, n_cells=1024)
        rate = legendre_rate(curve, [0.05, 0.1])
        assert rate.c_at(0.05) == pytest.approx(0.0025, rel=0.2)
        batches = [birkhoff_samples(DOUBLING, ONE, doubling_cos_1024, 0, n, 1000000, SEED, n_cells=1024, workers=4)
                   for n in (200, 400)]
        table = ldp_experiment(batches, rate)
        assert ldp_trend(table)["improving"].all()
        assert not table["low_stat"].any()
        # At n <= 400 the polynomial prefactor of the tail is not negligible:
        # compare against the exact Gaussian tail at the same n.
        for row in table.itertuples():
            z = row.epsilon * math.sqrt(row.n / 0.5)
            gaussian_rate = -stats.norm.logsf(z) / row.n
            assert row.rate_hat == pytest.approx(gaussian_rate, rel=0.25)
            assert row.rate_hat > row.c_eps


class TestLclt:
    """Local limit statistics at n = 10^4."""

    def test_aperiodic(self, doubling_cos_1024):
        n = 10000
        batch = birkhoff_samples(DOUBLING, ONE, doubling_cos_1024, 0, n, 1000000, SEED, n_cells=1024, workers=4)
        reach = 3.0 * math.sqrt(0.5 * n)
        report = lclt_experiment(batch, 0.5, (-0.25, 0.25), np.linspace(-reach, reach, 25))
        assert report.sup_error <= 0.05

    def test_periodic(self, doubling_indicator_1024):
        n = 10000
        batch = birkhoff_samples(DOUBLING, ONE, doubling_indicator_1024, 0, n, 1000000, SEED, n_cells=1024,
                                 workers=4)
        shift = eta_bar(doubling_indicator_1024, DOUBLING, ONE, 0, n)
        assert shift == pytest.approx(-n / 2)
        reach = 3.0 * math.sqrt(0.25 * n)
        report = lclt_periodic_experiment(batch, 0.25, (-0.25, 0.25), np.linspace(-reach, reach, 25), shift, 1.0)
        assert report.off_lattice_mass == 0.0
        assert report.sup_error <= 0.05


class TestAperiodicity:
    """Classification on 20 frequencies in [0.5, pi] over orbits of 2e4 fibers."""

    def test_cosine(self, doubling_cos_1024):
        report = aperiodicity_scan(DOUBLING, ONE, doubling_cos_1024, np.linspace(0.5, math.pi, 20),
                                   n_orbit=20000, n_burn=256, n_cells=1024, workers=4)
        assert report.classification == "aperiodic_evidence"
        assert max(report.lambda_it) <= -1e-3

    def test_lattice(self, doubling_indicator_1024):
        report = aperiodicity_scan(DOUBLING, ONE, doubling_indicator_1024, np.linspace(0.5, math.pi, 20),
                                   n_orbit=20000, n_burn=256, n_cells=1024, workers=4)
        assert report.classification == "periodic_lattice"
        assert report.span == 1.0
        assert report.lambda_at_lattice >= -1e-3


class TestAxiomsAndRefinement:
    def test_axiom_suite(self):
        report = check_variation_axioms(count=100, n_cells=256, seed=SEED)
        assert report.violations == []

    @pytest.mark.parametrize("family,driving", FAMILIES)
    def test_refinement(self, family, driving):
        report = refinement_study(family, driving, cosine(1), theta=0.1, n_coarse=2048, n_fine=4096)
        assert report.lambda_gap <= 1e-3
        assert report.density_l1_gap <= 1e-3


SMALL_EXPERIMENT = """\
n_orbit = 100
n_burn = 16
variance_orbit = 100
j_max = 8
theta_grid = linspace(-0.2, 0.2, 5)
n = 50
ns = 20, 40
count = 3000
epsilons = 0.05, 0.1
t_grid = 0.5, 1.0
sigma2 = 0.5
assume_aperiodic = true
"""


class TestDeterminism:
    """Every kind writes the same CSV bytes for 1 and 3 workers."""

    @pytest.mark.parametrize("kind", ["density", "lambda", "variance", "ldp", "clt", "lclt", "aperiodicity", "validate"])
    def test_byte_identical(self, kind, temp_dir):
        text = (f"[model]\nmaps = doubling | tripling\nseed = {SEED}\n\n[discretization]\nn_cells = 64\n\n"
                f"[experiment]\nkind = {kind}\n{SMALL_EXPERIMENT}")
        plan = parse_config(text)
        folders = [Path(temp_dir) / "w1", Path(temp_dir) / "w3"]
        for folder, workers in zip(folders, (1, 3)):
            run(plan.with_overrides(workers=workers), out_dir=str(folder))
        first = sorted(p.name for p in folders[0].glob("*.csv"))
        assert first
        assert first == sorted(p.name for p in folders[1].glob("*.csv"))
        for name in first:
            assert (folders[0] / name).read_bytes() == (folders[1] / name).read_bytes()
