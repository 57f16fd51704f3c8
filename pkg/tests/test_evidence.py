from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from euii import evidence as ev
from euii.errors import DegenerateEvidenceError, DomainError

rates = st.floats(1e-6, 1 - 1e-6)


def exact_dor(power, t1e):
    p, a = Fraction(power), Fraction(t1e)
    return (p / (1 - p)) / (a / (1 - a))


class TestLikelihoodRatios:
    def test_table_row(self):
        lr = ev.likelihood_ratios(0.8, 0.05)
        assert lr.lr_plus == pytest.approx(16.0)
        assert lr.lr_minus == pytest.approx(0.2 / 0.95)
        assert lr.dor == pytest.approx(76.0, rel=1e-12)

    @given(rates, rates)
    def test_dor_is_ratio_of_lrs(self, power, t1e):
        lr = ev.likelihood_ratios(power, t1e)
        assert lr.dor == pytest.approx(ev.dor(power, t1e), rel=1e-9)

    @given(rates, rates)
    def test_dor_matches_rational_arithmetic(self, power, t1e):
        assert ev.dor(power, t1e) == pytest.approx(float(exact_dor(power, t1e)), rel=1e-12)

    def test_power_equal_alpha_is_uninformative(self):
        assert ev.dor(0.05, 0.05) == 1.0
        assert ev.euii_fixed(1.0, 30) == 1.0

    @pytest.mark.parametrize("power", [0.0, 1.0])
    def test_degenerate_power(self, power):
        with pytest.raises(DegenerateEvidenceError):
            ev.likelihood_ratios(power, 0.05)

    @pytest.mark.parametrize("t1e", [0.0, 1.0, -0.2])
    def test_bad_t1e(self, t1e):
        with pytest.raises(DomainError):
            ev.dor(0.8, t1e)


class TestEuii:
    @given(st.floats(0.01, 1e6), st.floats(0.5, 1e4))
    def test_root_inverts(self, d, n):
        assert ev.euii_fixed(d, n) ** n == pytest.approx(d, rel=1e-9)

    @given(st.floats(1.0001, 1e6), st.floats(1.0, 1e3), st.floats(0.1, 100.0))
    def test_decreasing_in_n(self, d, n, step):
        assert ev.euii_fixed(d, n + step) < ev.euii_fixed(d, n)

    def test_summarize(self):
        s = ev.summarize(0.8, 0.05, 31.4)
        assert s.dor == pytest.approx(76.0)
        assert s.euii == pytest.approx(76 ** (1 / 31.4))

    def test_bad_n(self):
        with pytest.raises(DomainError):
            ev.euii_fixed(76, 0)


class TestOdds:
    @given(st.floats(0.0, 0.999999))
    def test_round_trip(self, p):
        assert ev.prob(ev.odds(p)) == pytest.approx(p, abs=1e-12)

    @given(st.floats(0.0, 0.99), rates, rates)
    def test_bayes_update(self, prior, power, t1e):
        post = ev.update_odds(prior, power / t1e)
        direct = prior * power / (prior * power + (1 - prior) * t1e)
        assert post == pytest.approx(direct, rel=1e-9, abs=1e-15)

    def test_prior_one_rejected(self):
        with pytest.raises(DomainError):
            ev.update_odds(1.0, 2.0)
