import numpy as np
import pytest

from scbf.ergodicity import (
    ObservableSeries,
    capped_norm,
    ergodicity_cross_check,
    mixing_rate_experiment,
    observable_function,
    require_invariant_regime,
    running_average,
    tightness_diagnostic,
    time_average_experiment,
)
from scbf.errors import AdmissibilityError, ConfigurationError
from scbf.integrator import SimulationConfig
from scbf.noise import JumpModel, MarkDistribution, MarkProfile
from scbf.operators import CBFParameters
from scbf.spectral import SpectralField, make_domain, norm, random_divfree_field



@pytest.fixture(scope="module")
def dom():
    return make_domain(2, 8, 2)


@pytest.fixture(scope="module")
def phi(dom):
    c = np.zeros((2,) + dom.shape, dtype=complex)
    c[0, 0, 1], c[0, 0, -1] = -0.5j, 0.5j
    u = SpectralField(dom, c)
    return u * (1.0 / norm(u, "H"))


def additive(phi, rate=1.0):
    return JumpModel.additive(MarkDistribution.two_point(-1.0, 1.0, rate), MarkProfile.identity(),
                              phi)


P = CBFParameters(1.0, 1.0, 3.0)


class TestObservables:
    def test_norms(self, dom):
        u = random_divfree_field(dom, 2.0, 1.0, 1)
        c = u.coeffs[None]
        assert observable_function("norm_H_sq", dom)(c)[0] == pytest.approx(norm(u, "H") ** 2)
        assert observable_function("norm_V_sq", dom)(c)[0] == pytest.approx(norm(u, "V") ** 2)
        assert observable_function("norm_Lr1", dom, 3.0)(c)[0] == pytest.approx(norm(u, 4),
                                                                                rel=1e-12)

    def test_mode_energy_of_single_mode(self, dom, phi):
        fn = observable_function("mode_energy(0,1)", dom)
        assert fn(phi.coeffs[None])[0] == pytest.approx(1.0, rel=1e-14)
        assert observable_function("mode_energy(1,0)", dom)(phi.coeffs[None])[0] == 0.0

    @pytest.mark.parametrize("name", ["mode_energy(0,4)", "mode_energy(0,0)", "mode_energy(1)",
                                      "enstrophy"])
    def test_rejects_unknown(self, dom, name):
        with pytest.raises(ConfigurationError):
            observable_function(name, dom)

    def test_running_average(self):
        t = np.linspace(0, 2, 201)
        avg = running_average(t, t)
        # left-endpoint rule for int_0^t s ds / t = t/2
        np.testing.assert_allclose(avg[1:], t[1:] / 2 - 0.005, atol=1e-12)
        assert avg[0] == 0.0

    def test_series_csv_and_halves(self, tmp_path):
        t = np.linspace(0, 4, 5)
        s = ObservableSeries.build("x", t, np.array([1.0, 1.0, 3.0, 3.0, 3.0]))
        assert s.half_averages() == (1.0, 3.0)
        assert s.average == pytest.approx(2.0)
        s.write_csv(tmp_path / "s.csv")
        assert (tmp_path / "s.csv").read_text().splitlines()[0] == "t,value,running_avg"

    def test_capped_norm(self, dom, phi):
        fn = capped_norm(dom, 0.5)
        assert fn((phi * 3.0).coeffs[None])[0] == 0.5
        assert fn((phi * 0.2).coeffs[None])[0] == pytest.approx(0.2)


class TestRegime:
    def test_forcing_refused(self, dom, phi):
        cfg = SimulationConfig(dom, P, forcing=phi, T=1.0, dt=0.1)
        with pytest.raises(ConfigurationError):
            require_invariant_regime(cfg)

    def test_large_noise_refused(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi * 2.0), T=1.0, dt=0.1)
        with pytest.raises(AdmissibilityError) as exc:
            require_invariant_regime(cfg)
        assert exc.value.condition == "μ > K/(2λ₁)"

    def test_returns_k(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi * 0.5), T=1.0, dt=0.1)
        assert require_invariant_regime(cfg) == pytest.approx(0.25)


class TestTimeAverages:
    def test_multiplicative_noise_degenerates_to_zero(self, dom):
        # u = 0 is invariant and attracting, so the invariant measure is the point mass at 0
        mult = JumpModel.multiplicative(MarkDistribution.two_point(-0.3, 0.3, 1.0),
                                        MarkProfile.identity())
        cfg = SimulationConfig(dom, P, noise=mult, T=100.0, dt=0.05, record_every=4)
        rep = time_average_experiment(cfg, random_divfree_field(dom, 2.0, 1.0, 1),
                                      ["norm_H_sq", "norm_V_sq"])
        assert rep.passed
        assert rep.series[0].average < 1e-12

    def test_additive_noise_gives_positive_average(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi), T=200.0, dt=0.025, record_every=4)
        rep = time_average_experiment(cfg, SpectralField.zeros(dom), ["norm_H_sq"], tol=0.1)
        avg = rep.series[0].average
        assert 0.05 < avg < 0.5
        assert set(rep.verdict()) >= {"averages", "halves_gap", "last_half_change"}

    def test_burn_in_checked(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi), T=1.0, dt=0.1)
        with pytest.raises(ConfigurationError):
            time_average_experiment(cfg, phi, ["norm_H_sq"], burn_in=1.0)


class TestTightness:
    def test_bound_holds(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi), T=5.0, dt=0.01)
        rep = tightness_diagnostic(cfg, random_divfree_field(dom, 2.0, 1.0, 2), 20)
        assert rep.passed and rep.K == pytest.approx(1.0)
        assert rep.ratio < 1.0

    def test_noiseless_zero(self, dom):
        cfg = SimulationConfig(dom, P, T=1.0, dt=0.1)
        rep = tightness_diagnostic(cfg, SpectralField.zeros(dom), 2)
        assert rep.passed and rep.lhs == 0.0 and rep.ratio == 0.0


class TestCrossCheckAndMixing:
    def test_cross_check_groups_use_disjoint_streams(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi), T=20.0, dt=0.02, record_every=5)
        starts = [SpectralField.zeros(dom), SpectralField.zeros(dom)]
        rep = ergodicity_cross_check(cfg, starts, paths=4, tol=0.5)
        assert not np.array_equal(rep.per_path[0], rep.per_path[1])
        assert len(rep.averages) == 2 and rep.verdict()["tol"] == 0.5

    def test_identical_starts_have_no_gap(self, dom, phi):
        cfg = SimulationConfig(dom, P, noise=additive(phi), T=2.0, dt=0.01)
        u0 = random_divfree_field(dom, 2.0, 1.0, 1)
        rep = mixing_rate_experiment(cfg, u0, u0, 6)
        assert rep.passed and np.all(rep.gap == 0) and np.all(rep.coupling_distance == 0)

    def test_mixing(self, dom, phi, tmp_path):
        cfg = SimulationConfig(dom, P, noise=additive(phi), T=3.0, dt=0.01, record_every=5)
        u0 = random_divfree_field(dom, 2.0, 1.0, 1)
        rep = mixing_rate_experiment(cfg, u0, SpectralField.zeros(dom), 20, cap=2.0)
        assert rep.passed and rep.lipschitz_ok
        assert rep.rate == pytest.approx(0.5)
        assert rep.fitted_rate >= rep.rate
        rep.write_csv(tmp_path / "m.csv")
        rep.write_verdict(tmp_path / "v.json")
        assert (tmp_path / "m.csv").read_text().startswith("t,gap,stderr,envelope")

    def test_mixing_refused_outside_regime(self, dom, phi):
        cfg = SimulationConfig(dom, CBFParameters(0.2, 1.0, 5.0), T=1.0, dt=0.1)
        with pytest.raises(AdmissibilityError):
            mixing_rate_experiment(cfg, phi, phi, 2)
