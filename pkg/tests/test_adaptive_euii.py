import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from euii.adaptive_euii import (
    Cell,
    Moments,
    OutcomeCells,
    euii_adaptive,
    euii_from_cells,
    mixture_moments,
    posterior_weights,
)
from euii.errors import DataInsufficiencyError, DomainError
from euii.evidence import dor, euii_fixed


def fixed_cells(n, t1e, power):
    return OutcomeCells(
        Cell(n, 0.0, t1e), Cell(n, 0.0, 1 - t1e), Cell(n, 0.0, power), Cell(n, 0.0, 1 - power)
    )


def discrete_cell(values, probs, mass):
    v, p = np.asarray(values, float), np.asarray(probs, float)
    m = p @ v
    return Cell(float(m), float(p @ (v - m) ** 2), mass)


class TestFixedDesignLimit:
    @pytest.mark.parametrize("prior", [0.01, 0.1, 0.5])
    def test_constant_n_reduces_to_root_of_dor(self, prior):
        a = euii_from_cells(fixed_cells(31.4, 0.05, 0.8), prior)
        assert a.euii_first == pytest.approx(euii_fixed(dor(0.8, 0.05), 31.4), rel=1e-12)
        assert a.euii_second == pytest.approx(a.euii_first, rel=1e-12)
        assert a.cv_n_plus == 0.0


class TestPosteriorWeights:
    @given(st.floats(0.0, 0.99), st.floats(0.001, 0.5), st.floats(0.01, 0.999))
    def test_match_direct_bayes(self, prior, t1e, power):
        assume(power > t1e)
        lr_p, lr_m = power / t1e, (1 - power) / (1 - t1e)
        w_sig, w_non = posterior_weights(prior, lr_p, lr_p / lr_m)
        sig = prior * power / (prior * power + (1 - prior) * t1e)
        non = prior * (1 - power) / (prior * (1 - power) + (1 - prior) * (1 - t1e))
        assert w_sig == pytest.approx(sig, rel=1e-9, abs=1e-14)
        assert w_non == pytest.approx(non, rel=1e-9, abs=1e-14)

    def test_bad_prior(self):
        with pytest.raises(DomainError):
            posterior_weights(1.0, 16, 76)


class TestMixtureMoments:
    def test_law_of_total_variance_against_pooled_sample(self):
        h0 = discrete_cell([16, 24, 32], [0.5, 0.3, 0.2], 0.05)
        h1 = discrete_cell([16, 24, 32], [0.2, 0.3, 0.5], 0.8)
        w = 0.3
        pooled_v = np.array([16, 24, 32] * 2, float)
        pooled_p = np.concatenate([(1 - w) * np.array([0.5, 0.3, 0.2]), w * np.array([0.2, 0.3, 0.5])])
        mean = pooled_p @ pooled_v
        var = pooled_p @ (pooled_v - mean) ** 2
        cells = OutcomeCells(h0, Cell(32, 0.0, 0.95), h1, Cell(32, 0.0, 0.2))
        m = mixture_moments(cells, (w, 0.1))
        assert m.e_plus == pytest.approx(mean)
        assert m.var_plus == pytest.approx(var)
        assert m.e_minus == 32 and m.var_minus == 0.0

    def test_empty_cell_with_weight_raises(self):
        cells = OutcomeCells(Cell.empty_cell(), Cell(32, 0, 1.0), Cell(20, 4, 0.8), Cell(32, 0, 0.2))
        with pytest.raises(DataInsufficiencyError):
            mixture_moments(cells, (0.9, 0.1))

    def test_empty_cell_without_weight_is_skipped(self):
        cells = OutcomeCells(Cell(20, 4, 0.05), Cell(32, 0, 0.95), Cell(22, 9, 1.0), Cell.empty_cell())
        m = mixture_moments(cells, (0.5, 0.0))
        assert m.e_minus == 32

    def test_masses_must_sum_to_one(self):
        with pytest.raises(DomainError):
            OutcomeCells(Cell(1, 0, 0.1), Cell(1, 0, 0.1), Cell(1, 0, 0.5), Cell(1, 0, 0.5))


class TestOrders:
    @given(
        st.floats(1.01, 1e3), st.floats(1e-3, 0.99),
        st.floats(2.0, 200.0), st.floats(0.0, 2.0),
        st.floats(2.0, 200.0), st.floats(0.0, 2.0),
    )
    def test_second_order_at_least_first_when_informative(self, lr_p, lr_m, e_p, cv_p, e_m, cv_m):
        mom = Moments(e_p, (cv_p * e_p) ** 2, e_m, (cv_m * e_m) ** 2)
        a = euii_adaptive(lr_p, lr_m, mom)
        assert a.euii_second >= a.euii_first * (1 - 1e-12)

    def test_first_order_formula(self):
        mom = Moments(20.0, 16.0, 32.0, 0.0)
        a = euii_adaptive(16.0, 0.2, mom)
        assert a.euii_first == pytest.approx(16 ** (1 / 20) / 0.2 ** (1 / 32))
        assert a.euii_second == pytest.approx(16 ** (1.04 / 20) / 0.2 ** (1 / 32))
        assert a.cv_n_plus == pytest.approx(0.2)

    def test_rates_out_of_range(self):
        with pytest.raises(DomainError):
            euii_from_cells(fixed_cells(10, 0.05, 0.8), 0.5, power=1.0)

    def test_reports_posteriors(self):
        a = euii_from_cells(fixed_cells(10, 0.05, 0.8), 0.5)
        assert a.pr_h1_given_sig == pytest.approx(0.8 / 0.85)
        assert not math.isnan(a.pr_h1_given_nonsig)
