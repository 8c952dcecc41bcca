import numpy as np
import pytest

from enkf_lab import (
    CoupledState,
    Ensemble,
    GaussianState,
    LinearModel,
    StepSpec,
    coupled_run,
    coupled_step,
    enkf_analysis,
    enkf_forecast,
    ensemble_gain,
    kf_gain,
    kf_run,
    perturb_data,
    reference_analysis,
    sample_cov,
    sample_mean,
)


class TestForecastAndGain:
    def test_identity_dynamics(self, rng):
        step = StepSpec(A=np.eye(3), b=np.zeros(3), H=np.eye(3), R=np.eye(3),
                        data=np.zeros(3))
        model = LinearModel(steps=(step,), state_dim=3, obs_dim=3)
        ens = Ensemble(rng.standard_normal((3, 6)))
        assert np.array_equal(enkf_forecast(model, 1, ens).members, ens.members)

    def test_duplicated_member_stays_duplicated(self, scalar):
        model, _ = scalar
        ens = Ensemble(np.full((1, 5), 3.0))
        out = enkf_forecast(model, 1, ens)
        assert np.array_equal(out.members, np.full((1, 5), 7.0))

    def test_gain_is_kf_gain_on_same_input(self, rng):
        q = rng.standard_normal((3, 3))
        q = q @ q.T
        h = rng.standard_normal((2, 3))
        r = np.eye(2)
        assert np.array_equal(ensemble_gain(q, h, r), kf_gain(q, h, r))

    def test_scalar_gain_value(self):
        gain = ensemble_gain(np.array([[3.0]]), np.array([[1.0]]), np.array([[1.0]]))
        assert gain[0, 0] == 0.75

    def test_zero_cov_zero_gain(self):
        gain = ensemble_gain(np.zeros((2, 2)), np.ones((1, 2)), np.eye(1))
        assert np.array_equal(gain, np.zeros((2, 1)))

    def test_forecast_is_apply_model_on_the_matrix(self, reference, rng):
        from enkf_lab import apply_model

        model, _ = reference
        ens = Ensemble(rng.standard_normal((4, 5)))
        assert np.array_equal(
            enkf_forecast(model, 2, ens).members, apply_model(model, 2, ens.members)
        )


class TestAnalysis:
    def test_zero_gain_keeps_forecast(self, rng):
        xf = Ensemble(rng.standard_normal((2, 4)))
        d = Ensemble(rng.standard_normal((1, 4)))
        out = enkf_analysis(xf, d, np.zeros((2, 1)), np.ones((1, 2)))
        assert np.array_equal(out.members, xf.members)

    def test_zero_innovation_keeps_forecast(self, rng):
        xf = Ensemble(rng.standard_normal((2, 5)))
        h = rng.standard_normal((1, 2))
        d = Ensemble(h @ xf.members)
        gain = rng.standard_normal((2, 1))
        out = enkf_analysis(xf, d, gain, h)
        assert np.abs(out.members - xf.members).max() < 1e-15

    def test_hand_worked_update(self):
        xf = Ensemble([[0.0, 2.0]])
        d = Ensemble([[1.0, 1.0]])
        out = enkf_analysis(xf, d, np.array([[0.5]]), np.array([[1.0]]))
        # members 0 + 0.5*(1-0) and 2 + 0.5*(1-2)
        assert np.array_equal(out.members, [[0.5, 1.5]])

    def test_member_count_mismatch(self, rng):
        xf = Ensemble(rng.standard_normal((2, 4)))
        d = Ensemble(rng.standard_normal((1, 5)))
        with pytest.raises(ValueError, match="members"):
            enkf_analysis(xf, d, np.zeros((2, 1)), np.ones((1, 2)))

    def test_reference_analysis_same_formula(self, rng):
        xf = Ensemble(rng.standard_normal((2, 4)))
        d = Ensemble(rng.standard_normal((1, 4)))
        gain = rng.standard_normal((2, 1))
        h = rng.standard_normal((1, 2))
        assert np.array_equal(
            reference_analysis(xf, d, gain, h).members,
            enkf_analysis(xf, d, gain, h).members,
        )

    def test_reference_members_follow_filtering_law(self, scalar, scalar_kf):
        # advancing one member chain with the exact gain yields samples of
        # the filtering distribution
        model, init = scalar
        n = 10**4
        run = coupled_run(model, init, seed=21, replicate=0, n=n,
                          kf_trajectory=scalar_kf)
        for k in range(1, 4):
            exact = scalar_kf.analysis(k)
            u = run[k].reference_ensemble
            tol = 4 * np.sqrt(exact.cov[0, 0] / n)
            assert abs(sample_mean(u)[0] - exact.mean[0]) <= tol


class TestCoupledStep:
    def test_first_step_difference_identity(self, reference, reference_kf):
        model, init = reference
        seed, rep, n = 3, 2, 32
        run = coupled_run(model, init, seed, rep, n, kf_trajectory=reference_kf)
        state = run[1]
        # X - U after the first analysis is (K - L)(D - H X^f), since X^f = U^f
        xf = enkf_forecast(model, 1, run[0].enkf_ensemble)
        d = perturb_data(seed, rep, 1, n, model.step(1).data, model.step(1).R)
        expected = (state.ensemble_gain - state.exact_gain) @ (
            d.members - model.step(1).H @ xf.members
        )
        actual = state.enkf_ensemble.members - state.reference_ensemble.members
        assert np.abs(actual - expected).max() < 1e-12

    def test_degenerate_prior_gives_zero_ensemble_gain(self, scalar, ):
        model, _ = scalar
        init = GaussianState(mean=[1.0], cov=[[0.0]])
        trajectory = kf_run(model, init)
        seed, rep, n = 0, 0, 16
        run = coupled_run(model, init, seed, rep, n, kf_trajectory=trajectory)
        state = run[1]
        assert np.array_equal(state.ensemble_gain, np.zeros((1, 1)))
        # divergence is (0 - L)(D - H X^f)
        xf = enkf_forecast(model, 1, run[0].enkf_ensemble)
        d = perturb_data(seed, rep, 1, n, model.step(1).data, model.step(1).R)
        expected = -state.exact_gain @ (d.members - model.step(1).H @ xf.members)
        actual = state.enkf_ensemble.members - state.reference_ensemble.members
        assert np.abs(actual - expected).max() < 1e-12

    def test_scalar_gain_close_at_large_n(self, scalar, scalar_kf):
        model, init = scalar
        run = coupled_run(model, init, seed=0, replicate=0, n=4096,
                          kf_trajectory=scalar_kf)
        assert abs(run[1].ensemble_gain[0, 0] - run[1].exact_gain[0, 0]) < 0.1

    def test_step_beyond_model_rejected(self, scalar, scalar_kf):
        model, init = scalar
        run = coupled_run(model, init, 0, 0, 8, kf_trajectory=scalar_kf)
        with pytest.raises(ValueError, match="out of range"):
            coupled_step(run[3], model, 0, 0, scalar_kf)


class TestCoupledRun:
    def test_empty_model_single_state(self, empty_scalar):
        model, init = empty_scalar
        run = coupled_run(model, init, 0, 0, 8)
        assert len(run) == 1
        assert run[0].step == 0
        assert run[0].enkf_ensemble is run[0].reference_ensemble

    def test_initial_ensembles_bit_identical(self, reference, reference_kf):
        model, init = reference
        run = coupled_run(model, init, 0, 0, 16, kf_trajectory=reference_kf)
        assert np.array_equal(
            run[0].enkf_ensemble.members, run[0].reference_ensemble.members
        )

    def test_deterministic_reruns(self, reference, reference_kf):
        model, init = reference
        a = coupled_run(model, init, 5, 7, 32, kf_trajectory=reference_kf)
        b = coupled_run(model, init, 5, 7, 32, kf_trajectory=reference_kf)
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.enkf_ensemble.members, sb.enkf_ensemble.members)
            assert np.array_equal(
                sa.reference_ensemble.members, sb.reference_ensemble.members
            )

    def test_reference_trajectory_prefix_stable_in_n(self, reference, reference_kf):
        # the exact gain does not depend on N and the data draws share
        # prefixes, so the U chain of the first members is size-independent;
        # the X chain is not (its gain sees every member)
        model, init = reference
        small = coupled_run(model, init, 0, 3, 8, kf_trajectory=reference_kf)
        big = coupled_run(model, init, 0, 3, 512, kf_trajectory=reference_kf)
        for k in range(len(small)):
            assert np.array_equal(
                big[k].reference_ensemble.members[:, :8],
                small[k].reference_ensemble.members,
            )

    def test_coupling_identity_every_step(self, reference, reference_kf):
        model, init = reference
        run = coupled_run(model, init, 1, 0, 24, kf_trajectory=reference_kf)
        for k in range(1, len(run)):
            a = model.step(k).A
            xf = enkf_forecast(model, k, run[k - 1].enkf_ensemble).members
            uf = enkf_forecast(model, k, run[k - 1].reference_ensemble).members
            prev_diff = (
                run[k - 1].enkf_ensemble.members
                - run[k - 1].reference_ensemble.members
            )
            assert np.abs((xf - uf) - a @ prev_diff).max() < 1e-12

    def test_relabeling_members_permutes_trajectories(self, reference, reference_kf):
        # the update map treats members symmetrically: permuting the initial
        # members and the data-perturbation draws identically permutes every
        # later ensemble and leaves the statistics and gains unchanged
        model, init = reference
        seed, rep, n = 11, 0, 10
        run = coupled_run(model, init, seed, rep, n, kf_trajectory=reference_kf)
        perm = np.random.default_rng(0).permutation(n)

        x = Ensemble(run[0].enkf_ensemble.members[:, perm])
        u = x
        for k in range(1, len(run)):
            step = model.step(k)
            xf = enkf_forecast(model, k, x)
            uf = enkf_forecast(model, k, u)
            d = perturb_data(seed, rep, k, n, step.data, step.R)
            d = Ensemble(d.members[:, perm])
            gain = ensemble_gain(sample_cov(xf), step.H, step.R)
            x = enkf_analysis(xf, d, gain, step.H)
            u = reference_analysis(uf, d, reference_kf.gain(k), step.H)

            orig = run[k]
            assert np.abs(x.members - orig.enkf_ensemble.members[:, perm]).max() < 1e-12
            assert np.abs(
                u.members - orig.reference_ensemble.members[:, perm]
            ).max() < 1e-12
            assert np.abs(gain - orig.ensemble_gain).max() < 1e-12
            assert np.abs(
                sample_mean(x) - sample_mean(orig.enkf_ensemble)
            ).max() < 1e-12
            assert np.abs(sample_cov(x) - sample_cov(orig.enkf_ensemble)).max() < 1e-12

    def test_exact_cov_hook_collapses_both_chains(self, reference, reference_kf):
        model, init = reference
        run = coupled_run(
            model, init, 0, 0, 16, kf_trajectory=reference_kf,
            forecast_cov_override=lambda k: reference_kf.forecast(k).cov,
        )
        for state in run[1:]:
            assert np.array_equal(state.ensemble_gain, state.exact_gain)
            assert np.array_equal(
                state.enkf_ensemble.members, state.reference_ensemble.members
            )

    def test_reference_law_pooled_over_replicates(self, scalar, scalar_kf):
        # pooled members of U across replicates behave as exact filtering
        # samples: mean within 4 sigma / sqrt(R*N), variance within 10%
        model, init = scalar
        reps, n, k = 50, 50, 3
        pooled = np.hstack(
            [
                coupled_run(model, init, 4, r, n, kf_trajectory=scalar_kf)[k]
                .reference_ensemble.members
                for r in range(reps)
            ]
        )
        exact = scalar_kf.analysis(k)
        sigma = np.sqrt(exact.cov[0, 0])
        assert abs(pooled.mean() - exact.mean[0]) <= 4 * sigma / np.sqrt(reps * n)
        assert abs(pooled.var() - exact.cov[0, 0]) <= 0.1 * exact.cov[0, 0]


class TestCoupledState:
    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="identical shape"):
            CoupledState(
                enkf_ensemble=Ensemble(rng.standard_normal((2, 4))),
                reference_ensemble=Ensemble(rng.standard_normal((2, 5))),
                step=0,
            )

    def test_initial_state_requires_identical_ensembles(self, rng):
        x = rng.standard_normal((2, 4))
        with pytest.raises(ValueError, match="bit-identical"):
            CoupledState(
                enkf_ensemble=Ensemble(x),
                reference_ensemble=Ensemble(x + 1e-12),
                step=0,
            )
