import numpy as np
import pytest

from scbf.errors import AdmissibilityError, ConfigurationError
from scbf.operators import CBFParameters, nonlinear_C
from scbf.spectral import SpectralField, make_domain, norm, random_divfree_field
from scbf.stationary import (
    decay_slope,
    deterministic_decay_experiment,
    dual_norm,
    require_uniqueness_regime,
    solve_stationary,
    stationary_residual,
    uniqueness_probe,
)


@pytest.fixture(scope="module")
def dom():
    return make_domain(2, 8, 2)


class TestSolver:
    def test_zero_forcing_gives_zero(self, dom):
        st = solve_stationary(CBFParameters(1.0, 1.0, 3.0), SpectralField.zeros(dom))
        assert st.converged and st.iterations == 0 and norm(st.u_inf, "H") == 0.0

    def test_recovers_manufactured_solution(self, dom):
        # the shear flow has no convection, so f = mu A u + beta C(u) has u as its solution
        u = SpectralField.from_function(dom, lambda x, y: (0.8 * np.sin(y), 0 * x))
        p = CBFParameters(1.0, 2.0, 4.0)
        f = u * p.mu + nonlinear_C(u, p.r) * p.beta
        st = solve_stationary(p, f, tol=1e-12)
        assert st.converged
        assert norm(st.u_inf - u, "H") < 1e-10
        assert st.record()["converged"] is True

    def test_random_forcing(self, dom):
        p = CBFParameters(1.0, 1.0, 5.0)
        f = random_divfree_field(dom, 2.0, 0.5, 3)
        st = solve_stationary(p, f, tol=1e-11)
        assert st.converged
        assert stationary_residual(st.u_inf, p, f) <= 1e-11
        assert st.history[0] > st.history[-1]

    def test_newton_refinement(self, dom):
        p = CBFParameters(1.0, 1.0, 3.0)
        f = random_divfree_field(dom, 2.0, 1.0, 4)
        rough = solve_stationary(p, f, tol=1e-4)
        fine = solve_stationary(p, f, init=rough.u_inf, tol=1e-12, max_iter=1, refine="newton")
        assert fine.residual_norm < 1e-10

    def test_bad_arguments(self, dom):
        with pytest.raises(ConfigurationError):
            solve_stationary(CBFParameters(1.0, 1.0, 3.0), SpectralField.zeros(dom), tol=0.0)
        with pytest.raises(ConfigurationError):
            solve_stationary(CBFParameters(1.0, 1.0, 3.0), random_divfree_field(dom, 2, 1, 1),
                             refine="bfgs")

    def test_dual_norm_of_single_mode(self, dom):
        u = SpectralField.from_function(dom, lambda x, y: (np.sin(2 * y), 0 * x))
        assert dual_norm(u) == pytest.approx(norm(u, "H") / 2.0, rel=1e-13)


class TestUniqueness:
    def test_regime_checks(self):
        assert require_uniqueness_regime(CBFParameters(1.0, 1.0, 3.0)) == 0.0
        with pytest.raises(AdmissibilityError):
            require_uniqueness_regime(CBFParameters(0.4, 1.0, 3.0))
        # eta(0.2, 1, 5) = 3.125 > mu / 2
        with pytest.raises(AdmissibilityError) as exc:
            require_uniqueness_regime(CBFParameters(0.2, 1.0, 5.0))
        assert exc.value.condition == "μ > 2η/λ₁"

    def test_probe_finds_one_state(self, dom):
        f = random_divfree_field(dom, 2.0, 0.5, 5)
        probe = uniqueness_probe(CBFParameters(1.0, 1.0, 5.0), f, 3, seed=1, tol=1e-11)
        assert probe.conclusive
        assert probe.max_distance < 1e-9


class TestDecay:
    def test_slope(self):
        t = np.linspace(0, 2, 11)
        assert decay_slope(t, 3 * np.exp(-0.7 * t)) == pytest.approx(-0.7)
        assert decay_slope(t, np.zeros(11)) == -np.inf

    def test_deterministic_decay(self, dom):
        p = CBFParameters(1.0, 1.0, 5.0)
        f = random_divfree_field(dom, 2.0, 0.5, 3)
        u0 = random_divfree_field(dom, 2.0, 2.0, 8)
        rep = deterministic_decay_experiment(p, f, u0, T=2.0, dt=2e-3)
        assert rep.passed and rep.offending_time is None
        assert rep.kappa == pytest.approx(0.75)
        assert rep.slope <= -rep.kappa
