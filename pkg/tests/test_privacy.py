import math

import numpy as np
import pytest

from ldpagg.privacy import (PrivacyAccount, SensitivityParams, budget,
                            calibrate_noise, closed_form_constants,
                            contraction_coefficients, empirical_bound_check,
                            infinite_horizon_bound, sensitivity_step,
                            sensitivity_trajectory)
from ldpagg.schedules import NoiseSchedule, StepsizeSchedule


def fixture_params(**over):
    """The reference parameter set used by the budget fixture config."""
    kw = dict(
        L_l=0.1, L_h=1.0, Lbar_l=0.0, Lbar_h=1.0, d_l=0.1, d_z=1.0,
        w_bar=0.6, n_i=2, r=2,
        lambda_x=StepsizeSchedule(0.01, 0.95),
        lambda_y=StepsizeSchedule(0.5, 0.1),
        lambda_z=StepsizeSchedule(0.08, 0.12),
    )
    kw.update(over)
    return SensitivityParams(**kw)


def fixture_noise():
    return (NoiseSchedule(1.0, 0.03), NoiseSchedule(1e6, 0.05),
            NoiseSchedule(1e6, 0.06))


class TestSensitivityStep:
    def test_zero_state_forcing_only(self):
        p = fixture_params()
        dx, dy, dz = sensitivity_step(0.0, 0.0, 0.0, 0, p)
        lam_y, lam_z, lam_x = 0.5, 0.08, 0.01
        sr, sn = math.sqrt(2), math.sqrt(2)
        exp_dy = 2 * 0.1 * lam_y
        exp_dz = (sr * 1.0 * lam_z / lam_y) * exp_dy + 2 * sr * 1.0 * lam_z
        exp_dx = ((sn * 1.0 * lam_x / lam_y) * exp_dy
                  + (sn * 0.1 * lam_x / lam_z) * exp_dz
                  + 2 * sn * 1.0 * lam_x
                  + 2 * sn * 1.0 * 0.1 * lam_x / lam_z)
        assert dy == pytest.approx(exp_dy, rel=1e-14)
        assert dz == pytest.approx(exp_dz, rel=1e-14)
        assert dx == pytest.approx(exp_dx, rel=1e-14)

    def test_zero_constants_stay_zero(self):
        p = fixture_params(L_l=0.0, L_h=0.0, Lbar_h=0.0, d_l=0.0, d_z=0.0)
        traj = sensitivity_trajectory(50, p, warn=False)
        assert np.all(traj.dx == 0) and np.all(traj.dy == 0) and np.all(traj.dz == 0)

    def test_dl_only_scales_linearly(self):
        # with only the d_l forcing active, the whole trajectory is
        # homogeneous of degree 1 in d_l
        base = fixture_params(L_h=0.0, d_z=0.0)
        doubled = fixture_params(L_h=0.0, d_z=0.0, d_l=0.2)
        a = sensitivity_trajectory(100, base, warn=False)
        b = sensitivity_trajectory(100, doubled, warn=False)
        assert np.allclose(b.dy, 2 * a.dy, rtol=1e-13)
        assert np.allclose(b.dz, 2 * a.dz, rtol=1e-13)
        assert np.allclose(b.dx, 2 * a.dx, rtol=1e-13)

    def test_scalar_recursion_oracle(self):
        # independent scalar reimplementation of the recursion, written
        # directly from the update formulas
        p = fixture_params()
        dx = dy = dz = 0.0
        sr = sn = math.sqrt(2)
        for t in range(200):
            ly = 0.5 / (t + 1) ** 0.1
            lz = 0.08 / (t + 1) ** 0.12
            lx = 0.01 / (t + 1) ** 0.95
            dy2 = (1 - 0.6) * dy + 0.1 * sr * ly * dx + 2 * 0.1 * ly / (t + 1)
            dz2 = ((1 - 0.6) * dz + sr * 1.0 * lz * dx
                   + (sr * 1.0 * lz / ly) * (dy2 + dy) + 2 * sr * 1.0 * lz / (t + 1))
            cx = 1 - 0.6 + sn * 1.0 * lx + sn * 0.0 * 1.0 * lx / lz
            dx2 = (cx * dx + (sn * 1.0 * lx / ly) * (dy2 + dy)
                   + (sn * 0.1 * lx / lz) * (dz2 + dz)
                   + 2 * sn * 1.0 * lx / (t + 1)
                   + 2 * sn * 1.0 * 0.1 * lx / (lz * (t + 1)))
            ax, ay, az = sensitivity_step(dx, dy, dz, t, p)
            assert ax == pytest.approx(dx2, rel=1e-14, abs=1e-300)
            assert ay == pytest.approx(dy2, rel=1e-14, abs=1e-300)
            assert az == pytest.approx(dz2, rel=1e-14, abs=1e-300)
            dx, dy, dz = dx2, dy2, dz2

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            sensitivity_step(0, 0, 0, -1, fixture_params())

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            fixture_params(L_l=-1.0)
        with pytest.raises(ValueError):
            fixture_params(w_bar=1.0)
        with pytest.raises(ValueError):
            fixture_params(n_i=0)


class TestContraction:
    def test_fixture_contracts_immediately(self):
        p = fixture_params()
        assert max(contraction_coefficients(0, p)) < 1.0
        traj = sensitivity_trajectory(100, p)
        assert traj.t_contract == 0 and traj.contraction_ok

    def test_large_stepsize_delays_contraction(self):
        p = fixture_params(lambda_x=StepsizeSchedule(5.0, 0.95))
        assert contraction_coefficients(0, p)[2] >= 1.0
        with pytest.warns(RuntimeWarning):
            traj = sensitivity_trajectory(1000, p)
        assert traj.t_contract > 0 and not traj.contraction_ok
        assert max(contraction_coefficients(traj.t_contract, p)) < 1.0

    def test_warn_flag_suppresses(self):
        import warnings
        p = fixture_params(lambda_x=StepsizeSchedule(5.0, 0.95))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            sensitivity_trajectory(1000, p, warn=False)


class TestClosedForm:
    def test_dominates_recursion(self):
        p = fixture_params()
        c = closed_form_constants(p)
        traj = sensitivity_trajectory(10000, p)
        ts = np.arange(1, 10001) + 1.0
        assert np.all(traj.dy[1:] <= c.Cy / ts ** (1 + 0.1) + 1e-15)
        assert np.all(traj.dx[1:] <= c.Cx / ts ** (1 + 0.95 - 0.12) + 1e-15)
        assert np.all(traj.dz[1:] <= c.Cz / ts ** (1 + 0.12) + 1e-15)

    def test_constant_values_regression(self):
        c = closed_form_constants(fixture_params())
        assert c.C0 == pytest.approx(0.38991378, rel=1e-6)
        assert c.C1 == pytest.approx(32.58044, rel=1e-5)
        assert c.C2 == pytest.approx(2.40379, rel=1e-5)
        assert c.C3 == pytest.approx(3.60843, rel=1e-5)
        assert c.C4 == pytest.approx(483.0018, rel=1e-5)

    def test_requires_exponent_ordering(self):
        p = fixture_params(lambda_z=StepsizeSchedule(0.08, 0.05))  # vz < vy
        with pytest.raises(ValueError):
            closed_form_constants(p)


class TestBudget:
    def test_zero_horizon(self):
        acc = budget(0, fixture_params(), *fixture_noise())
        assert acc.eps_total == 0.0
        assert acc.T == 0

    def test_monotone_in_T(self):
        p = fixture_params()
        nx, ny, nz = fixture_noise()
        prev = 0.0
        for T in (10, 100, 1000):
            acc = budget(T, p, nx, ny, nz)
            assert acc.eps_total > prev
            prev = acc.eps_total

    def test_three_way_dominance(self):
        p = fixture_params()
        nx, ny, nz = fixture_noise()
        for T in (100, 1000, 10000):
            rec = budget(T, p, nx, ny, nz, source="recursion")
            cf = budget(T, p, nx, ny, nz, source="closed_form")
            assert rec.eps_total <= cf.eps_total + 1e-12
            assert cf.eps_total <= cf.bound_inf + 1e-12

    def test_tail_convergence(self):
        p = fixture_params()
        nx, ny, nz = fixture_noise()
        e3 = budget(1000, p, nx, ny, nz).eps_total
        e4 = budget(10000, p, nx, ny, nz).eps_total
        e5 = budget(100000, p, nx, ny, nz).eps_total
        assert e5 - e4 < 0.2 * (e4 - e3)

    def test_closed_form_sums_match_direct_expression(self):
        # independent recomputation of the closed-form budget components
        p = fixture_params()
        nx, ny, nz = fixture_noise()
        T = 5000
        cf = budget(T, p, nx, ny, nz, source="closed_form")
        c = closed_form_constants(p)
        ts = np.arange(2.0, T + 2.0)
        ex = np.sum(math.sqrt(2) * c.Cx / (1.0 * ts ** (1 + 0.95 - 0.12 - 0.03)))
        ey = np.sum(math.sqrt(2) * c.Cy / (1e6 * ts ** (1 + 0.1 - 0.05)))
        ez = np.sum(math.sqrt(2) * c.Cz / (1e6 * ts ** (1 + 0.12 - 0.06)))
        assert cf.eps_x == pytest.approx(ex, rel=1e-12)
        assert cf.eps_y == pytest.approx(ey, rel=1e-12)
        assert cf.eps_z == pytest.approx(ez, rel=1e-12)

    def test_inf_bound_matches_analytic_formula(self):
        p = fixture_params()
        nx, ny, nz = fixture_noise()
        c = closed_form_constants(p)
        expect = (math.sqrt(2) * c.Cx / (1.0 * (0.95 - 0.12 - 0.03))
                  + math.sqrt(2) * c.Cy / (1e6 * (0.1 - 0.05))
                  + math.sqrt(2) * c.Cz / (1e6 * (0.12 - 0.06)))
        assert infinite_horizon_bound(p, nx, ny, nz) == pytest.approx(expect, rel=1e-14)
        # and the infinite bound dominates every finite closed-form budget
        cf = budget(100000, p, nx, ny, nz, source="closed_form")
        assert cf.eps_total <= cf.bound_inf

    def test_inf_bound_infinite_when_gap_closed(self):
        p = fixture_params()
        nx = NoiseSchedule(1.0, 0.83)  # vx - vz = 0.83 leaves zero gap
        _, ny, nz = fixture_noise()
        assert infinite_horizon_bound(p, nx, ny, nz) == float("inf")

    def test_rejects_nonpositive_sigma(self):
        p = fixture_params()
        _, ny, nz = fixture_noise()
        with pytest.raises(ValueError):
            budget(10, p, NoiseSchedule(0.0, 0.03), ny, nz)

    def test_rejects_unknown_source(self):
        with pytest.raises(ValueError):
            budget(10, fixture_params(), *fixture_noise(), source="exact")

    def test_eps_total_is_component_sum(self):
        acc = PrivacyAccount(T=5, eps_x=1.0, eps_y=2.0, eps_z=3.5,
                             bound_inf=10.0, source="recursion")
        assert acc.eps_total == 6.5


class TestCalibration:
    def test_round_trip_meets_target(self):
        p = fixture_params()
        for eps_hat in (0.1, 1.0, 10.0):
            sx, sy, sz = calibrate_noise(eps_hat, p, 0.03, 0.05, 0.06)
            bound = infinite_horizon_bound(
                p, NoiseSchedule(sx, 0.03), NoiseSchedule(sy, 0.05),
                NoiseSchedule(sz, 0.06))
            assert bound <= eps_hat + 1e-12
            c = closed_form_constants(p)
            gx = 0.95 - 0.12 - 0.03
            comp_x = math.sqrt(2) * c.Cx / (sx * gx)
            assert comp_x <= eps_hat / 3 + 1e-12

    def test_halving_target_doubles_sigmas(self):
        p = fixture_params()
        s1 = calibrate_noise(1.0, p, 0.03, 0.05, 0.06)
        s2 = calibrate_noise(0.5, p, 0.03, 0.05, 0.06)
        for a, b in zip(s1, s2):
            assert b == pytest.approx(2 * a, rel=1e-14)

    def test_rejects_closed_gap(self):
        with pytest.raises(ValueError):
            calibrate_noise(1.0, fixture_params(), 0.9, 0.05, 0.06)

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ValueError):
            calibrate_noise(0.0, fixture_params(), 0.03, 0.05, 0.06)


class TestEmpiricalBoundCheck:
    class FakeRecord:
        def __init__(self, z, l):
            self.z_norm_max = np.asarray(z)
            self.l_norm1_max = np.asarray(l)

    def test_pass(self):
        rep = empirical_bound_check(self.FakeRecord([0.4, 0.9], [0.05, 0.08]),
                                    fixture_params())
        assert rep.ok
        assert rep.empirical_d_z == pytest.approx(0.9)

    def test_flags_violation(self):
        rep = empirical_bound_check(self.FakeRecord([1.5], [0.05]),
                                    fixture_params())
        assert not rep.ok
        assert rep.configured_d_z == 1.0
