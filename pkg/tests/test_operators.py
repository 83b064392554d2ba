import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scbf.errors import AdmissibilityError, ConfigurationError
from scbf.operators import (
    CBFParameters,
    b_antisymmetry_ratio,
    bilinear_B,
    c_monotonicity_fuzz,
    check_periodic_inequalities,
    drift_coeffs,
    eta_constant,
    full_G,
    fuzz_field_pair,
    hemicontinuity_probe,
    identity_case,
    lr1_power,
    monotonicity_fuzz,
    monotonicity_gap,
    nonlinear_C,
)
from scbf.spectral import (
    SpectralField,
    inner,
    leray_project,
    make_domain,
    norm,
    random_divfree_field,
)

TWO_PI = 2 * np.pi


@pytest.fixture(scope="module")
def dom():
    return make_domain(2, 16, 2)


class TestParameters:
    @pytest.mark.parametrize("kw", [dict(mu=0, beta=1, r=3), dict(mu=1, beta=-1, r=3),
                                    dict(mu=1, beta=1, r=2.5), dict(mu=1, beta=1, r=3, alpha=1)])
    def test_validation(self, kw):
        with pytest.raises(ConfigurationError):
            CBFParameters(**kw)

    @pytest.mark.parametrize("mu,beta,r,eta", [
        (1.0, 1.0, 5.0, 0.125),
        (2.0, 0.5, 4.0, 1.0 / 27.0),
        (0.2, 1.0, 5.0, 3.125),
    ])
    def test_eta_values(self, mu, beta, r, eta):
        assert eta_constant(CBFParameters(mu, beta, r)) == pytest.approx(eta, rel=1e-14)

    def test_eta_zero_in_critical_case(self):
        assert eta_constant(CBFParameters(1.0, 1.0, 3.0)) == 0.0
        assert eta_constant(CBFParameters(0.5, 1.0, 3.0)) == 0.0

    def test_critical_case_needs_two_beta_mu(self):
        with pytest.raises(AdmissibilityError) as exc:
            eta_constant(CBFParameters(0.4, 1.0, 3.0))
        assert exc.value.condition == "2βμ ≥ 1"


class TestConvection:
    def test_shear_is_steady(self, dom):
        u = SpectralField.from_function(dom, lambda x, y: (np.sin(y), 0 * x))
        assert norm(bilinear_B(u), "H") < 1e-14

    def test_known_product(self, dom):
        # u = (sin y, 0), v = (0, sin x): (u . grad) v = (0, sin y cos x)
        u = SpectralField.from_function(dom, lambda x, y: (np.sin(y), 0 * x))
        v = SpectralField.from_function(dom, lambda x, y: (0 * y, np.sin(x)))
        b = bilinear_B(u, v)
        raw = SpectralField.from_function(dom, lambda x, y: (0 * x, np.sin(y) * np.cos(x)))
        np.testing.assert_allclose(b.coeffs, leray_project(raw).coeffs, atol=1e-15)

    def test_skew_symmetry(self, dom):
        u = random_divfree_field(dom, 2.0, 1.0, 1)
        v = random_divfree_field(dom, 2.0, 1.0, 2)
        w = random_divfree_field(dom, 2.0, 1.0, 3)
        assert inner(bilinear_B(u, v), w) == pytest.approx(-inner(bilinear_B(u, w), v), abs=1e-12)
        assert b_antisymmetry_ratio(u, v) < 1e-13

    def test_rotational_drift_matches_convective_form(self, dom):
        u = random_divfree_field(dom, 2.0, 1.0, 4)
        nl, lr1 = drift_coeffs(u.coeffs[None], dom, 0.7, 4.0)
        expected = -(bilinear_B(u).coeffs + 0.7 * nonlinear_C(u, 4.0).coeffs)
        np.testing.assert_allclose(nl[0], expected, atol=1e-13)
        assert lr1[0] == pytest.approx(lr1_power(u, 4.0), rel=1e-12)

    def test_rotational_drift_3d(self):
        d3 = make_domain(3, 8, 2)
        u = random_divfree_field(d3, 2.5, 1.0, 4)
        nl, _ = drift_coeffs(u.coeffs[None], d3, 1.0, 3.0)
        expected = -(bilinear_B(u).coeffs + nonlinear_C(u, 3.0).coeffs)
        np.testing.assert_allclose(nl[0], expected, atol=1e-13)


class TestAbsorption:
    @pytest.mark.parametrize("r", [3.0, 3.5, 4.0, 5.0])
    def test_pairing_identity(self, dom, r):
        u = random_divfree_field(dom, 2.0, 1.0, 7)
        assert inner(nonlinear_C(u, r), u) == pytest.approx(lr1_power(u, r), rel=1e-12)

    def test_constant_modulus_field(self):
        d3 = make_domain(3, 8, 2)
        u = SpectralField.from_function(d3, lambda x, y, z: (2 * np.sin(z), 2 * np.cos(z), 0 * z))
        # |u| = 2 everywhere, so C(u) = 2^(r-1) u
        np.testing.assert_allclose(nonlinear_C(u, 5.0).coeffs, 16 * u.coeffs, atol=1e-12)
        assert lr1_power(u, 5.0) == pytest.approx(2 ** 6 * TWO_PI ** 3, rel=1e-12)

    def test_identity_case_keys(self, dom):
        rec = identity_case(random_divfree_field(dom, 2.0, 1.0, 1))
        assert set(rec) == {"b_ratio", "c_rel", "a_rel"}
        assert max(rec["c_rel"].values()) < 1e-12


class TestMonotonicity:
    @pytest.mark.parametrize("r", [4.0, 5.0])
    def test_fuzz(self, dom, r):
        recs = monotonicity_fuzz(dom, CBFParameters(1.0, 1.0, r), 40, seed=3)
        assert all(x["passed"] for x in recs)

    def test_critical_fuzz(self, dom):
        recs = monotonicity_fuzz(dom, CBFParameters(1.0, 1.0, 3.0), 40, seed=3)
        assert all(x["passed"] and x["lhs"] >= -1e-9 for x in recs)

    def test_identical_pair(self, dom):
        u = random_divfree_field(dom, 2.0, 1.0, 1)
        rep = monotonicity_gap(u, u, CBFParameters(1.0, 1.0, 5.0))
        assert rep.passed and abs(rep.gap) < 1e-15

    def test_c_monotonicity(self, dom):
        recs = c_monotonicity_fuzz(dom, 4.0, 30, seed=1)
        assert all(x["passed"] for x in recs)

    def test_fuzz_pairs_are_deterministic_and_varied(self, dom):
        a = fuzz_field_pair(dom, 5, 3)
        b = fuzz_field_pair(dom, 5, 3)
        np.testing.assert_array_equal(a[1].coeffs, b[1].coeffs)
        # index 3 is a near-equal pair
        assert norm(a[0] - a[1], "H") < 0.2 * norm(a[0], "H")


class TestOtherChecks:
    def test_hemicontinuity(self, dom):
        u, v = fuzz_field_pair(dom, 1, 0)
        w = random_divfree_field(dom, 2.0, 1.0, 3)
        vals = hemicontinuity_probe(u, v, w, CBFParameters(1.0, 1.0, 4.0),
                                    [1e-1, 1e-2, 1e-3, 1e-4])
        assert np.all(np.diff(vals) < 0)
        # |<G(u + lam v) - G(u), w>| is O(lam)
        assert vals[-1] < 2e-3 * vals[0]

    @pytest.mark.parametrize("r", [3.0, 4.0, 5.0])
    def test_periodic_sandwich(self, dom, r):
        u = random_divfree_field(dom, 2.0, 1.0, 2)
        rec = check_periodic_inequalities(u, r)
        scale = 1e-10 * max(1.0, rec.weighted_grad)
        assert rec.lower_gap >= -scale
        assert rec.upper_gap >= -scale
        assert rec.ratio_3r is not None and rec.ratio_3r > 0

    def test_periodic_zero_field(self, dom):
        rec = check_periodic_inequalities(SpectralField.zeros(dom), 3.0)
        assert rec.ratio_3r is None

    def test_full_g_vanishes_for_matched_forcing(self, dom):
        # the shear flow has B(u) = 0, so f = mu A u + beta C(u) makes it stationary
        u = SpectralField.from_function(dom, lambda x, y: (np.sin(y), 0 * x))
        p = CBFParameters(0.7, 1.3, 3.0)
        f = u * p.mu + nonlinear_C(u, 3.0) * p.beta
        assert norm(full_G(u, p, f), "H") < 1e-13


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31), amp=st.floats(0.01, 5.0), r=st.sampled_from([3.0, 4.0, 5.0]))
def test_c_homogeneity(seed, amp, r):
    dom = make_domain(2, 8, 2)
    u = random_divfree_field(dom, 1.5, 1.0, seed)
    lhs = nonlinear_C(u * amp, r).coeffs
    np.testing.assert_allclose(lhs, amp ** r * nonlinear_C(u, r).coeffs,
                               atol=1e-12 * amp ** r * np.abs(nonlinear_C(u, r).coeffs).max())


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_monotonicity_property(seed):
    dom = make_domain(2, 8, 2)
    u, v = fuzz_field_pair(dom, seed, seed % 4)
    for r in (3.0, 4.0, 5.0):
        assert monotonicity_gap(u, v, CBFParameters(1.0, 1.0, r)).passed
