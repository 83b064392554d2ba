import numpy as np
import pytest

from scbf.errors import BlowUpError, ConfigurationError
from scbf.integrator import (
    SimulationConfig,
    beltrami_field,
    bernoulli_amplitude,
    deterministic_step,
    energy_estimate_check,
    resolve_threads,
    run_coupled,
    run_ensemble,
    simulate_path,
)
from scbf.noise import JumpModel, MarkDistribution, MarkProfile
from scbf.operators import CBFParameters
from scbf.spectral import SpectralField, make_domain, norm, random_divfree_field

TWO_PI = 2 * np.pi


@pytest.fixture(scope="module")
def dom():
    return make_domain(2, 8, 2)


@pytest.fixture(scope="module")
def u0(dom):
    return random_divfree_field(dom, 2.0, 1.0, 3)


def mult_noise(rate=2.0, a=-0.5, b=0.5):
    return JumpModel.multiplicative(MarkDistribution.two_point(a, b, rate), MarkProfile.identity())


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(dt=0.0), dict(T=0.1, dt=0.2), dict(kmax=5),
                                    dict(record_every=0), dict(chunk_size=0)])
    def test_validation(self, dom, kw):
        with pytest.raises(ConfigurationError):
            SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), **kw)

    def test_forcing_domain_checked(self, dom):
        other = make_domain(2, 16, 2)
        with pytest.raises(ConfigurationError):
            SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), forcing=SpectralField.zeros(other))

    def test_step_grid(self, dom):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), T=1.0, dt=0.3, record_every=2)
        t = cfg.step_times()
        assert cfg.n_steps == 4 and t[-1] == 1.0
        assert cfg.record_steps().tolist() == [0, 2, 4]

    def test_threads(self, monkeypatch):
        monkeypatch.setenv("SCBF_THREADS", "3")
        assert resolve_threads() == 3
        assert resolve_threads(2) == 2
        with pytest.raises(ConfigurationError):
            resolve_threads(0)


class TestDeterministic:
    def test_bernoulli_oracle_first_order(self):
        d3 = make_domain(3, 8, 2)
        p = CBFParameters(1.0, 1.0, 3.0)
        u = beltrami_field(d3, 1.0)
        errs = []
        for dt in (2e-3, 1e-3):
            res = run_ensemble(SimulationConfig(d3, p, T=0.5, dt=dt), u)
            exact = bernoulli_amplitude(1.0, 1.0, 1.0, 3.0, res.times)
            num = res.norm_H[0] / (TWO_PI ** 1.5)
            errs.append(np.max(np.abs(num - exact)))
        assert errs[1] < 1e-3
        assert 1.7 < errs[0] / errs[1] < 2.3

    def test_bernoulli_closed_form(self):
        t = np.linspace(0, 1, 5)
        a = bernoulli_amplitude(2.0, 1.0, 0.0 + 1e-300, 3.0, t)
        np.testing.assert_allclose(a, 2.0 * np.exp(-t), rtol=1e-12)
        assert bernoulli_amplitude(0.0, 1.0, 1.0, 3.0, t).tolist() == [0.0] * 5
        # derivative check for r = 5
        h = 1e-6
        a0 = bernoulli_amplitude(0.7, 1.2, 0.8, 5.0, 0.3)
        da = (bernoulli_amplitude(0.7, 1.2, 0.8, 5.0, 0.3 + h)
              - bernoulli_amplitude(0.7, 1.2, 0.8, 5.0, 0.3 - h)) / (2 * h)
        assert da == pytest.approx(-1.2 * a0 - 0.8 * a0 ** 5, rel=1e-7)

    def test_beltrami_needs_3d(self, dom):
        with pytest.raises(ConfigurationError):
            beltrami_field(dom)

    def test_deterministic_step_matches_ensemble(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 4.0), T=0.01, dt=0.01)
        one = deterministic_step(u0, 0.01, cfg)
        res = run_ensemble(cfg, u0)
        np.testing.assert_allclose(res.final[0], one.coeffs, atol=1e-15)

    def test_zero_stays_zero(self, dom):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(), T=1.0,
                               dt=0.01)
        res = run_ensemble(cfg, SpectralField.zeros(dom), paths=3)
        assert np.all(res.norm_H == 0)

    def test_kmax_truncation(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), kmax=1, T=0.1, dt=0.01)
        res = run_ensemble(cfg, u0)
        kx = np.abs(np.fft.fftfreq(8, 1 / 8))
        outside = (kx[:, None] > 1) | (kx[None, :] > 1)
        assert np.all(res.final[0][:, outside] == 0)


class TestLedger:
    def test_noiseless_ledger_is_first_order(self, dom, u0):
        p = CBFParameters(1.0, 1.0, 3.0)
        f = random_divfree_field(dom, 2.0, 0.5, 9)
        out = []
        for dt in (4e-3, 2e-3):
            res = run_ensemble(SimulationConfig(dom, p, forcing=f, T=1.0, dt=dt), u0)
            out.append(abs(res.ledger(0).residual))
        assert out[1] < 1e-2 * res.initial_energy[0]
        assert 1.6 < out[0] / out[1] < 2.4

    def test_jump_ledger(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(), T=1.0,
                               dt=1e-3, seed=5)
        res = run_ensemble(cfg, u0, paths=4)
        led = [res.ledger(i) for i in range(4)]
        assert any(x.jump_qv > 0 for x in led)
        for x in led:
            assert abs(x.residual) < 5e-3 * x.initial_energy
            assert x.to_dict()["residual"] == x.residual

    def test_trajectory_contains_jumps(self, dom, u0, tmp_path):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(rate=5.0),
                               T=1.0, dt=0.01, seed=1)
        traj, ledger = simulate_path(cfg, 0, u0)
        n_jumps = len(traj.jump_times)
        assert traj.is_jump.sum() == n_jumps > 0
        assert np.all(np.diff(traj.times) >= 0)
        assert np.all(np.abs(traj.jump_marks) == 0.5)
        traj.write_csv(tmp_path / "t.csv")
        traj.write_jump_log(tmp_path / "j.csv")
        lines = (tmp_path / "t.csv").read_text().splitlines()
        assert lines[0] == "t,norm_H,norm_V,norm_Lr1,is_jump"
        assert len(lines) == 1 + 101 + n_jumps
        assert len((tmp_path / "j.csv").read_text().splitlines()) == 1 + n_jumps


class TestEnsembles:
    def test_thread_count_does_not_change_results(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(), T=0.5,
                               dt=0.01, seed=2, chunk_size=3)
        a = run_ensemble(cfg, u0, paths=10, threads=1)
        b = run_ensemble(cfg, u0, paths=10, threads=4)
        np.testing.assert_array_equal(a.norm_H, b.norm_H)
        np.testing.assert_array_equal(a.final, b.final)

    def test_paths_follow_their_own_stream(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(), T=0.5,
                               dt=0.01, seed=2)
        full = run_ensemble(cfg, u0, paths=6)
        sub = run_ensemble(cfg, u0, indices=[4])
        np.testing.assert_array_equal(full.norm_H[4], sub.norm_H[0])

    def test_observable_max_covers_the_interval(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), T=1.0, dt=0.01,
                               record_every=10)
        res = run_ensemble(cfg, u0, observables={"e": lambda c: np.sum(np.abs(c) ** 2,
                                                                       axis=(1, 2, 3))})
        vals, mx = res.observables["e"][0], res.observable_max["e"][0]
        # the energy decreases, so each window maximum is its left endpoint
        np.testing.assert_allclose(mx[1:], vals[:-1], rtol=1e-12)

    def test_blow_up_guard(self, dom, u0):
        noise = JumpModel.multiplicative(MarkDistribution.single(100.0, 5.0),
                                         MarkProfile.identity())
        cfg = SimulationConfig(dom, CBFParameters(0.01, 0.01, 3.0), noise=noise, T=2.0, dt=0.01,
                               blowup_factor=2.0, seed=0)
        res = run_ensemble(cfg, u0, paths=3)
        assert res.blown_up.all() and np.all(np.isfinite(res.blowup_time))
        with pytest.raises(BlowUpError) as exc:
            simulate_path(cfg, 0, u0)
        assert exc.value.time is not None

    def test_energy_estimate(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(), T=0.5,
                               dt=0.01)
        rep = energy_estimate_check(cfg, u0, 20)
        assert rep.passed and rep.blowups == 0
        assert "samples" not in rep.to_dict()

    def test_energy_estimate_needs_no_forcing(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), forcing=u0, T=0.1, dt=0.01)
        with pytest.raises(ConfigurationError):
            energy_estimate_check(cfg, u0, 2)

    def test_shape_checks(self, dom):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), T=0.1, dt=0.01)
        with pytest.raises(ConfigurationError):
            run_ensemble(cfg, np.zeros((2, 2, 4, 4), complex))


class TestCoupling:
    def test_identical_starts_stay_together(self, dom, u0):
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=mult_noise(), T=0.5,
                               dt=0.01, chunk_size=5)
        res = run_coupled(cfg, u0, u0, 4)
        assert np.all(res.distance_sq == 0)
        assert not res.blown_up.any()

    def test_additive_noise_cancels_in_difference(self, dom, u0):
        phi = random_divfree_field(dom, 2.0, 1.0, 8)
        noise = JumpModel.additive(MarkDistribution.two_point(-1, 1, 5.0), MarkProfile.identity(),
                                   phi)
        v0 = random_divfree_field(dom, 2.0, 1.0, 4)
        cfg = SimulationConfig(dom, CBFParameters(1.0, 1.0, 3.0), noise=noise, T=0.5, dt=0.005)
        res = run_coupled(cfg, u0, v0, 2)
        d = res.distance_sq
        assert np.all(np.isfinite(d))
        # the kicks cancel in u - v, and with r = 3, 2 beta mu >= 1 the drift is monotone,
        # so the distance can only shrink
        assert np.all(np.diff(d, axis=1) <= 1e-9 * d[:, :1])
        np.testing.assert_allclose(d[:, 0], norm(u0 - v0, "H") ** 2, rtol=1e-12)
