import numpy as np
import pytest

from ldpagg.algorithm import (_AgentStreams, _consensus, _split_weights,
                              baseline_gradient_tracking, iterate, run)
from ldpagg.problems import QuadraticProblem, make_quadratic_problem
from ldpagg.reference import centralized_trajectory
from ldpagg.schedules import (ConvexityCase, LaplaceStream, ScheduleSet,
                              StepsizeSchedule, agent_rng, broadcast_noise,
                              corollary1_preset, laplace_from_uniform)
from ldpagg.topology import ring_topology, trivial_topology


def noisefree_schedules(m, lambda0=(0.5, 1.0, 1.0)):
    return corollary1_preset(ConvexityCase.STRONGLY_CONVEX, 0.01, m=m,
                             lambda0=lambda0, sigma=(0.0, 0.0, 0.0))


def clean_quadratic(m=5, seed=7, **over):
    kw = dict(m=m, ni=2, r=2, gamma=1.0, noise_std_g=0.0, noise_std_f=0.0,
              box=(-10, 10), seed=seed)
    kw.update(over)
    return make_quadratic_problem(**kw)


class TestCentralizedReduction:
    def test_noise_free_single_agent_matches_reference(self):
        prob = clean_quadratic(m=1, ni=4, r=2)
        s = noisefree_schedules(1)
        x0 = np.full((1, 4), 0.5)
        rec = run(prob, trivial_topology(), s, 2000, master_seed=0, x0=x0,
                  record_frames=True)
        ref = centralized_trajectory(prob, s, 2000, x0[0])
        dev = max(np.max(np.abs(st[0][0] - ref[t]))
                  for t, st in enumerate(rec.states))
        assert dev < 1e-10

    def test_converges_to_reference_optimum(self):
        prob = clean_quadratic(m=1, ni=4, r=2)
        s = noisefree_schedules(1)
        rec = run(prob, trivial_topology(), s, 20000, master_seed=0,
                  x0=np.zeros((1, 4)))
        assert np.max(np.abs(rec.final_x[0] - prob.x_star)) < 1e-4


class TestIterate:
    def test_descent_noise_free(self):
        prob = clean_quadratic()
        topo = ring_topology(5, 0.3)
        s = noisefree_schedules(5)
        rec = run(prob, topo, s, 5000, master_seed=1)
        err = rec.columns["err_to_opt_sq"]
        assert err[-1] < 1e-3 * err[0]
        fgap = rec.columns["F_gap"]
        assert fgap[-1] < 1e-3 * abs(fgap[0]) + 1e-12

    def test_identical_agents_stay_symmetric(self):
        # identical local data and identical starts: the noise-free
        # dynamics cannot break the permutation symmetry
        m, ni, r = 4, 2, 2
        rng = np.random.default_rng(3)
        A = np.tile(0.3 * rng.standard_normal((1, r, ni)), (m, 1, 1))
        b = np.tile(rng.standard_normal((1, r)), (m, 1))
        c = np.tile(rng.standard_normal((1, ni)), (m, 1))
        d = np.tile(rng.standard_normal((1, r)), (m, 1))
        prob = QuadraticProblem(A, b, c, d, gamma=1.0, box=(-10, 10))
        # identical estimates of the full stacked vector as well
        own = np.tile(np.linspace(-1, 1, ni), m)
        x0 = np.tile(own, (m, 1))
        s = noisefree_schedules(m)
        rec = run(prob, ring_topology(m, 0.3), s, 500, master_seed=2, x0=x0)
        # cyclic equivariance: rotating the agent index rotates the
        # stacked estimate by one block
        for i in range(m):
            assert np.max(np.abs(np.roll(rec.final_x[i], -i * ni)
                                 - rec.final_x[0])) < 1e-11
        assert np.max(np.abs(rec.final_y - rec.final_y[0])) < 1e-11

    def test_tracker_mean_invariant(self):
        # zero-sum mixing preserves the agent mean of y up to the exact
        # per-round injection lambda_y * mean(g); checked step by step
        prob = clean_quadratic(noise_std_g=0.2, noise_std_f=0.2)
        topo = ring_topology(5, 0.3)
        s = noisefree_schedules(5)
        W0, diagw = _split_weights(topo)
        streams = _AgentStreams(11, 5)
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, (5, prob.n))
        Y = np.zeros((5, 2))
        Z = np.zeros((5, 2))
        store = prob.new_store()
        from ldpagg.algorithm import BroadcastFrame
        for t in range(30):
            frame = BroadcastFrame(x=X, y=Y, z=Z)  # noise-free frames
            prob.draw(store, streams.data)
            ev = prob.erm_eval(store, prob.own_block(X))
            expect = Y.mean(axis=0) + s.lambda_y.value(t) * ev.g.mean(axis=0)
            X, Y, Z = iterate(X, Y, Z, frame, t, s, W0, diagw, prob, store)
            assert np.max(np.abs(Y.mean(axis=0) - expect)) < 1e-12

    def test_consensus_identity_matches_neighbor_sum(self):
        topo = ring_topology(6, 0.2)
        W = np.asarray(topo.weights)
        W0, diagw = _split_weights(topo)
        rng = np.random.default_rng(5)
        hat = rng.normal(0, 1, (6, 3))
        raw = rng.normal(0, 1, (6, 3))
        out = _consensus(W0, diagw, hat, raw)
        for i in range(6):
            direct = sum(W[i, j] * (hat[j] - raw[i])
                         for j in topo.neighbor_sets[i])
            assert np.allclose(out[i], direct, atol=1e-14)


class TestRunMechanics:
    def test_zero_horizon(self):
        prob = clean_quadratic()
        rec = run(prob, ring_topology(5, 0.3), noisefree_schedules(5), 0,
                  master_seed=0)
        assert np.array_equal(rec.ts, [0.0])
        assert rec.final_x.shape == (5, prob.n)
        assert rec.aborted_at is None

    def test_determinism_same_seed(self):
        prob = make_quadratic_problem(m=3, ni=2, r=2, gamma=1.0,
                                      box=(-10, 10), seed=7)
        topo = ring_topology(3, 0.3)
        s = corollary1_preset(ConvexityCase.STRONGLY_CONVEX, 0.01, m=3,
                              lambda0=(0.5, 1, 1), sigma=(0.5, 0.5, 0.5))
        a = run(prob, topo, s, 300, master_seed=42)
        b = run(prob, topo, s, 300, master_seed=42)
        assert np.array_equal(a.final_x, b.final_x)
        assert np.array_equal(a.columns["err_to_opt_sq"],
                              b.columns["err_to_opt_sq"])

    def test_different_seed_differs(self):
        prob = clean_quadratic(m=3)
        topo = ring_topology(3, 0.3)
        s = corollary1_preset(ConvexityCase.STRONGLY_CONVEX, 0.01, m=3,
                              lambda0=(0.5, 1, 1), sigma=(0.5, 0.5, 0.5))
        a = run(prob, topo, s, 100, master_seed=1)
        b = run(prob, topo, s, 100, master_seed=2)
        assert not np.array_equal(a.final_x, b.final_x)

    def test_agent_count_mismatch_rejected(self):
        prob = clean_quadratic(m=3)
        with pytest.raises(ValueError):
            run(prob, ring_topology(4, 0.3), noisefree_schedules(4), 10,
                master_seed=0)

    def test_nonfinite_raises_with_index(self):
        # unbounded box so blow-up is not clipped away
        prob = clean_quadratic(m=3, box=(-np.inf, np.inf))
        s = corollary1_preset(ConvexityCase.STRONGLY_CONVEX, 0.01, m=3,
                              lambda0=(1e150, 1, 1), sigma=(0.0, 0.0, 0.0))
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError, match="iteration"):
                run(prob, ring_topology(3, 0.3), s, 100, master_seed=0)

    def test_nonfinite_recorded(self):
        prob = clean_quadratic(m=3, box=(-np.inf, np.inf))
        s = corollary1_preset(ConvexityCase.STRONGLY_CONVEX, 0.01, m=3,
                              lambda0=(1e150, 1, 1), sigma=(0.0, 0.0, 0.0))
        with np.errstate(over="ignore", invalid="ignore"):
            rec = run(prob, ring_topology(3, 0.3), s, 100, master_seed=0,
                      on_nonfinite="record")
        assert rec.aborted_at is not None and rec.aborted_at >= 1

    def test_z_and_l_suprema_tracked(self):
        prob = clean_quadratic(m=3)
        rec = run(prob, ring_topology(3, 0.3), noisefree_schedules(3), 200,
                  master_seed=0)
        assert rec.z_norm_max.shape == (3,)
        assert np.all(rec.z_norm_max >= 0)
        assert np.all(rec.l_norm1_max > 0)


class TestFrameAudit:
    def test_frames_are_state_plus_replayed_noise(self):
        # privacy hygiene: every broadcast equals raw state plus Laplace
        # noise that an auditor can replay exactly from the seed
        prob = make_quadratic_problem(m=3, ni=2, r=2, gamma=1.0,
                                      box=(-10, 10), seed=7)
        topo = ring_topology(3, 0.3)
        s = corollary1_preset(ConvexityCase.STRONGLY_CONVEX, 0.01, m=3,
                              lambda0=(0.5, 1, 1), sigma=(0.8, 0.8, 0.8))
        T = 50
        rec = run(prob, topo, s, T, master_seed=9, record_frames=True)
        assert len(rec.frames) == T + 1 and len(rec.states) == T + 1

        theta = [LaplaceStream(agent_rng(9, i, "theta")) for i in range(3)]
        chi = [LaplaceStream(agent_rng(9, i, "chi")) for i in range(3)]
        zeta = [LaplaceStream(agent_rng(9, i, "zeta")) for i in range(3)]
        for t, (frame, (X, Y, Z)) in enumerate(zip(rec.frames, rec.states)):
            for i in range(3):
                nx = laplace_from_uniform(theta[i].draw_centered(prob.n),
                                          s.noise_x[i].laplace_param(t))
                ny = laplace_from_uniform(chi[i].draw_centered(prob.r),
                                          s.noise_y[i].laplace_param(t))
                nz = laplace_from_uniform(zeta[i].draw_centered(prob.r),
                                          s.noise_z[i].laplace_param(t))
                assert np.array_equal(frame.x[i], X[i] + nx)
                assert np.array_equal(frame.y[i], Y[i] + ny)
                assert np.array_equal(frame.z[i], Z[i] + nz)
                assert np.array_equal(frame.noise_x[i], nx)

    def test_frames_not_kept_by_default(self):
        prob = clean_quadratic(m=3)
        rec = run(prob, ring_topology(3, 0.3), noisefree_schedules(3), 10,
                  master_seed=0)
        assert rec.frames == [] and rec.states == []


class TestBaseline:
    def test_zero_noise_baseline_converges(self):
        prob = clean_quadratic(m=5)
        topo = ring_topology(5, 0.3)
        s = ScheduleSet(
            lambda_x=StepsizeSchedule(0.05, 0.9),  # lambda0 used as constant
            lambda_y=StepsizeSchedule(1.0, 0.02),
            lambda_z=StepsizeSchedule(1.0, 0.03),
            noise_x=broadcast_noise(0.0, 0.0, 5),
            noise_y=broadcast_noise(0.0, 0.0, 5),
            noise_z=broadcast_noise(0.0, 0.0, 5),
        )
        rec = baseline_gradient_tracking(prob, topo, s, 20000, master_seed=0)
        assert rec.baseline
        xown = prob.own_block(rec.final_x).reshape(prob.n)
        assert np.max(np.abs(xown - prob.x_star)) < 1e-6
        assert rec.columns["tracker_err"][-1] < 1e-10

    def test_noise_accumulates_in_tracker(self):
        prob = clean_quadratic(m=5, noise_std_g=0.0)
        topo = ring_topology(5, 0.3)
        s = ScheduleSet(
            lambda_x=StepsizeSchedule(0.01, 0.9),
            lambda_y=StepsizeSchedule(1.0, 0.02),
            lambda_z=StepsizeSchedule(1.0, 0.03),
            noise_x=broadcast_noise(0.05, 0.0, 5),
            noise_y=broadcast_noise(0.05, 0.0, 5),
            noise_z=broadcast_noise(0.05, 0.0, 5),
        )
        recs = [baseline_gradient_tracking(prob, topo, s, 2000, master_seed=k)
                for k in range(5)]
        err = np.mean([r.columns["tracker_err"] for r in recs], axis=0)
        ts = recs[0].ts
        late = err[ts >= 500].mean()
        early = err[(ts >= 10) & (ts < 100)].mean()
        assert late > 2 * early
