import numpy as np
import pytest

from pifm.data import TaskSpec, make_task_input
from pifm.flow import (CapacityError, DegenerateBaseError, FlowConfig, TrainingDiverged,
                       VelocityNet, build_A0, euler_sample, interpolate, log_density,
                       mse_distortion, train_flow, velocity_forward)
from pifm.graphs import (AdjacencyState, GraphRecord, NodePermutation, ObservationMask,
                         permute, permute_matrix)
from pifm.metrics import UndefinedMetricError
from pifm.nn import ConfigurationError
from pifm.priors import GaussianPrior, prior_predict


def binary_state(a):
    return AdjacencyState(np.asarray(a, dtype=float), is_binary=True)


def random_graph(n, rng, density=0.5, gid=0):
    a = (rng.random((n, n)) < density).astype(float)
    a = np.triu(a, 1)
    return GraphRecord(binary_state(a + a.T), graph_id=gid)


def random_mask(n, rng, hide=0.5):
    m = (rng.random((n, n)) >= hide).astype(float)
    m = np.triu(m, 1)
    m = m + m.T
    np.fill_diagonal(m, 1.0)
    return ObservationMask(m)


def random_prior(n, rng):
    p = rng.random((n, n))
    p = np.triu(p, 1)
    p = p + p.T
    return AdjacencyState(p)


def randomized_net(cfg=None, seed=0, scale=0.1):
    net = VelocityNet(cfg or FlowConfig(dropout=0.0), seed=seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in net.params.items():
        p.data = p.data + scale * rng.normal(size=p.data.shape)
    return net


def matrix_prior(raw):
    """Stub prior returning one fixed symmetric probability matrix."""
    from pifm.priors import _assemble_prediction

    m = np.triu(np.asarray(raw, dtype=float), 1)
    m = m + m.T

    class _Fixed:
        variant = "fixed"
        is_fitted = True

        def predict(self, a_obs, xi):
            return _assemble_prediction(a_obs, xi, m)

    return _Fixed()


class TestBuildA0:
    def test_fully_observed_returns_truth(self):
        rng = np.random.default_rng(0)
        g = random_graph(6, rng)
        xi = ObservationMask.all_observed(6)
        prior = random_prior(6, rng)
        a0 = build_A0(g.adjacency, xi, prior, 0.5, TaskSpec("linkpred", 0.5), rng)
        assert np.array_equal(a0.values, g.adjacency.values)

    def test_zero_sigma_hidden_equals_prior(self):
        rng = np.random.default_rng(1)
        g = random_graph(7, rng)
        task = TaskSpec("linkpred", 0.5, seed=2)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(7, rng)
        a0 = build_A0(a_obs, xi, prior, 0.0, task, None)
        hidden = np.triu(xi.values == 0, 1)
        assert np.allclose(a0.values[hidden], prior.values[hidden])
        observed = np.triu(xi.values == 1, 1)
        assert np.array_equal(a0.values[observed], g.adjacency.values[observed])

    def test_matches_published_expansion_form(self):
        # A0 = A_obs + (1 - A_obs) * (prior + eps) entrywise off-diagonal
        rng = np.random.default_rng(2)
        g = random_graph(8, rng, density=0.6)
        task = TaskSpec("expansion", 0.5, seed=3)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(8, rng)
        a0 = build_A0(a_obs, xi, prior, 0.0, task, None)
        ref = a_obs.values + (1.0 - a_obs.values) * prior.values
        np.fill_diagonal(ref, 0.0)
        assert np.allclose(a0.values, ref)

    def test_matches_published_denoising_form(self):
        # A0 = A_obs * (prior + eps); with prior = 1 and sigma 0 this is A_obs
        rng = np.random.default_rng(3)
        g = random_graph(8, rng, density=0.3)
        task = TaskSpec("denoise", 0.2, seed=4)
        a_obs, xi = make_task_input(g, task, rng)
        ones = AdjacencyState(1.0 - np.eye(8))
        a0 = build_A0(a_obs, xi, ones, 0.0, task, None)
        assert np.array_equal(a0.values, a_obs.values)
        prior = random_prior(8, rng)
        a0 = build_A0(a_obs, xi, prior, 0.0, task, None)
        ref = a_obs.values * prior.values
        assert np.allclose(a0.values, ref)

    def test_noise_touches_hidden_region_only(self):
        rng = np.random.default_rng(4)
        g = random_graph(9, rng)
        task = TaskSpec("linkpred", 0.4, seed=5)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(9, rng)
        a0 = build_A0(a_obs, xi, prior, 0.7, task, rng)
        observed = xi.values == 1
        np.fill_diagonal(observed, False)
        assert np.array_equal(a0.values[observed], a_obs.values[observed])
        assert np.array_equal(a0.values, a0.values.T)
        assert np.all(np.diag(a0.values) == 0)

    def test_negative_sigma_rejected(self):
        rng = np.random.default_rng(5)
        g = random_graph(4, rng)
        with pytest.raises(ConfigurationError):
            build_A0(g.adjacency, ObservationMask.all_observed(4),
                     random_prior(4, rng), -0.1, TaskSpec("linkpred", 0.5), rng)


class TestInterpolate:
    def test_endpoints_bitwise(self):
        rng = np.random.default_rng(6)
        a0 = random_prior(6, rng)
        a1 = random_graph(6, rng).adjacency
        assert interpolate(a0, a1, 0.0) is a0
        assert interpolate(a0, a1, 1.0) is a1

    def test_midpoint(self):
        n = 5
        a0 = AdjacencyState(np.zeros((n, n)))
        a1 = AdjacencyState(1.0 - np.eye(n))
        mid = interpolate(a0, a1, 0.5)
        off = ~np.eye(n, dtype=bool)
        assert np.all(mid.values[off] == 0.5)

    def test_out_of_range_rejected(self):
        a = AdjacencyState(np.zeros((3, 3)))
        with pytest.raises(ValueError):
            interpolate(a, a, 1.5)


class TestVelocityForward:
    def test_fresh_net_outputs_zero(self):
        net = VelocityNet(FlowConfig(dropout=0.0), seed=0)
        rng = np.random.default_rng(7)
        a = random_graph(8, rng).adjacency
        assert np.all(velocity_forward(net, a, 0.3) == 0.0)

    def test_equivariance(self):
        net = randomized_net()
        rng = np.random.default_rng(8)
        for _ in range(10):
            g = random_graph(10, rng).adjacency
            p = NodePermutation.random(10, rng)
            v = velocity_forward(net, g, 0.4)
            vp = velocity_forward(net, permute(g, p), 0.4)
            assert np.max(np.abs(vp - permute_matrix(v, p))) <= 1e-8

    def test_eval_mode_bitwise_deterministic(self):
        net = randomized_net(FlowConfig(dropout=0.2), seed=3)
        rng = np.random.default_rng(9)
        a = random_graph(7, rng).adjacency
        assert np.array_equal(velocity_forward(net, a, 0.6),
                              velocity_forward(net, a, 0.6))

    def test_output_symmetric_zero_diagonal(self):
        net = randomized_net(seed=5)
        rng = np.random.default_rng(10)
        a = random_prior(9, rng)
        v = velocity_forward(net, AdjacencyState(a.values), 0.2)
        assert np.array_equal(v, v.T)
        assert np.all(np.diag(v) == 0)

    def test_capacity_error(self):
        net = VelocityNet(FlowConfig(max_nodes=6), seed=0)
        a = AdjacencyState(np.zeros((7, 7)))
        with pytest.raises(CapacityError):
            velocity_forward(net, a, 0.1)


class TestEulerSample:
    def test_zero_velocity_returns_source(self):
        net = VelocityNet(FlowConfig(dropout=0.0), seed=0)
        rng = np.random.default_rng(11)
        g = random_graph(7, rng)
        task = TaskSpec("linkpred", 0.5, seed=6)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(7, rng)
        a0 = build_A0(a_obs, xi, prior, 0.0, task, None)
        out = euler_sample(net, a_obs, xi, prior, k=20, sigma_s_sample=0.0, rng=None)
        assert np.array_equal(out.final.values, a0.values)

    def test_k1_is_single_exact_update(self):
        net = randomized_net(seed=9)
        rng = np.random.default_rng(12)
        g = random_graph(8, rng)
        task = TaskSpec("linkpred", 0.5, seed=7)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(8, rng)
        a0 = build_A0(a_obs, xi, prior, 0.0, task, None)
        out = euler_sample(net, a_obs, xi, prior, k=1, sigma_s_sample=0.0, rng=None)
        expected = a0.values + velocity_forward(net, a0, 0.0)
        assert np.array_equal(out.final.values, expected)

    def test_trajectory_snapshots(self):
        net = randomized_net(seed=4)
        rng = np.random.default_rng(13)
        g = random_graph(6, rng)
        task = TaskSpec("linkpred", 0.5, seed=8)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(6, rng)
        out = euler_sample(net, a_obs, xi, prior, k=5, sigma_s_sample=0.0, rng=None,
                           keep_trajectory=True)
        assert len(out.trajectory) == 6
        assert np.array_equal(out.trajectory[-1].values, out.final.values)

    def test_clamp_observed_pins_entries(self):
        net = randomized_net(seed=6)
        rng = np.random.default_rng(14)
        g = random_graph(8, rng)
        task = TaskSpec("linkpred", 0.5, seed=9)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(8, rng)
        out = euler_sample(net, a_obs, xi, prior, k=10, sigma_s_sample=0.0, rng=None,
                           clamp_observed=True)
        observed = xi.values == 1
        np.fill_diagonal(observed, False)
        assert np.array_equal(out.final.values[observed], a_obs.values[observed])

    def test_equivariance_with_zero_noise(self):
        net = randomized_net(seed=8)
        rng = np.random.default_rng(15)
        g = random_graph(9, rng)
        task = TaskSpec("linkpred", 0.5, seed=10)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(9, rng)
        out = euler_sample(net, a_obs, xi, prior, k=4, sigma_s_sample=0.0, rng=None)
        p = NodePermutation.random(9, rng)
        out_p = euler_sample(net, binary_state(permute_matrix(a_obs.values, p)),
                             ObservationMask(permute_matrix(xi.values, p)),
                             AdjacencyState(permute_matrix(prior.values, p)),
                             k=4, sigma_s_sample=0.0, rng=None)
        assert np.max(np.abs(out_p.final.values - permute_matrix(out.final.values, p))) <= 1e-8

    def test_k_zero_rejected(self):
        net = VelocityNet(FlowConfig(), seed=0)
        a = AdjacencyState(np.zeros((4, 4)))
        with pytest.raises(ConfigurationError):
            euler_sample(net, binary_state(np.zeros((4, 4))), ObservationMask.all_observed(4),
                         a, k=0, sigma_s_sample=0.0, rng=None)


class TestTrainFlow:
    def test_overfit_single_graph(self):
        # fixed mask, fixed non-constant prior, sigma 0: one training sample
        rng = np.random.default_rng(16)
        g = random_graph(8, rng)
        task = TaskSpec("linkpred", 0.5, seed=11)
        prior = matrix_prior(0.2 + 0.6 * rng.random((8, 8)))
        cfg = FlowConfig(dropout=0.0, train_steps=6000, batch_size=8, lr=2e-3,
                         sigma_s_train=0.0, resample_masks=False, val_every=2000)
        net, info = train_flow([g], [g], prior, task, cfg,
                               np.random.default_rng(17))
        assert min(info["train_curve"]) < 1e-3
        # velocity matches A1 - A0 along the path for freshly sampled times
        a_obs, xi = make_task_input(g, task, np.random.default_rng(task.seed * 100003 + g.graph_id))
        probs = prior_predict(prior, a_obs, xi)
        a0 = build_A0(a_obs, xi, probs, 0.0, task, None)
        target = g.adjacency.values - a0.values
        iu, ju = np.triu_indices(8, 1)
        t_rng = np.random.default_rng(99)
        for t in t_rng.uniform(size=20):
            at = interpolate(a0, g.adjacency, float(t))
            v = velocity_forward(net, at, float(t))
            resid = np.sqrt(np.mean((v[iu, ju] - target[iu, ju]) ** 2))
            assert resid <= 1e-2, f"residual {resid} at t={t}"

    def test_zero_target_learns_zero_velocity(self):
        # fully observed task: A0 == A1 always, so the optimal velocity is 0
        rng = np.random.default_rng(18)
        graphs = [random_graph(8, rng, gid=i) for i in range(4)]
        task = TaskSpec("linkpred", 0.0, seed=12)
        cfg = FlowConfig(dropout=0.0, train_steps=300, batch_size=4, lr=1e-3,
                         sigma_s_train=0.0, val_every=150)
        net, info = train_flow(graphs, graphs[:1], GaussianPrior(), task, cfg,
                               np.random.default_rng(19))
        v = velocity_forward(net, graphs[0].adjacency, 0.5)
        assert np.abs(v).max() < 5e-2
        assert info["train_curve"][-1] < 1e-3

    def test_validation_curve_non_increasing_on_overfit(self):
        rng = np.random.default_rng(20)
        g = random_graph(9, rng)
        task = TaskSpec("linkpred", 0.5, seed=13)
        cfg = FlowConfig(dropout=0.0, train_steps=800, batch_size=8, lr=2e-3,
                         sigma_s_train=0.0, resample_masks=False, val_every=200)
        net, info = train_flow([g], [g], GaussianPrior(), task, cfg,
                               np.random.default_rng(21))
        vals = [v for _, v in info["val_curve"]]
        assert vals[-1] <= vals[0]

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_raises_with_checkpoint(self):
        rng = np.random.default_rng(22)
        g = random_graph(6, rng)
        task = TaskSpec("linkpred", 0.5, seed=14)
        cfg = FlowConfig(dropout=0.0, train_steps=50, batch_size=2, lr=1e200,
                         sigma_s_train=0.0, val_every=10)
        with pytest.raises(TrainingDiverged) as exc_info:
            train_flow([g], [g], GaussianPrior(), task, cfg, np.random.default_rng(23))
        assert isinstance(exc_info.value.checkpoint, dict)
        assert "mlp2_w" in exc_info.value.checkpoint

    def test_empty_training_set_rejected(self):
        with pytest.raises(ConfigurationError):
            train_flow([], [], GaussianPrior(), TaskSpec("linkpred", 0.5),
                       FlowConfig(), np.random.default_rng(0))


class TestLogDensity:
    def make_instance(self, n=6, seed=24):
        rng = np.random.default_rng(seed)
        g = random_graph(n, rng)
        task = TaskSpec("linkpred", 0.5, seed=15)
        a_obs, xi = make_task_input(g, task, rng)
        prior = random_prior(n, rng)
        a0 = build_A0(a_obs, xi, prior, 0.2, task, rng)
        return g, a_obs, xi, prior, a0

    def test_zero_velocity_equals_gaussian_base(self):
        net = VelocityNet(FlowConfig(dropout=0.0), seed=0)
        g, a_obs, xi, prior, a0 = self.make_instance()
        got = log_density(net, g.adjacency, a0, xi, prior, quad_steps=16, sigma_s=0.2)
        iu, ju = np.where(np.triu(xi.values == 0, 1))
        resid = a0.values[iu, ju] - prior.values[iu, ju]
        base = np.sum(-0.5 * np.log(2 * np.pi * 0.2 ** 2) - resid ** 2 / (2 * 0.2 ** 2))
        assert np.isclose(got, base, atol=1e-10)

    def test_quadrature_convergence(self):
        net = randomized_net(seed=11, scale=0.05)
        g, a_obs, xi, prior, a0 = self.make_instance(n=5, seed=26)
        v64 = log_density(net, g.adjacency, a0, xi, prior, quad_steps=64, sigma_s=0.2)
        v128 = log_density(net, g.adjacency, a0, xi, prior, quad_steps=128, sigma_s=0.2)
        assert abs(v64 - v128) <= 1e-3

    def test_permutation_invariance(self):
        net = randomized_net(seed=12)
        g, a_obs, xi, prior, a0 = self.make_instance(n=6, seed=27)
        base = log_density(net, g.adjacency, a0, xi, prior, quad_steps=24, sigma_s=0.2)
        rng = np.random.default_rng(28)
        for _ in range(3):
            p = NodePermutation.random(6, rng)
            got = log_density(
                net,
                permute(g.adjacency, p),
                AdjacencyState(permute_matrix(a0.values, p)),
                ObservationMask(permute_matrix(xi.values, p)),
                AdjacencyState(permute_matrix(prior.values, p)),
                quad_steps=24, sigma_s=0.2)
            assert abs(got - base) <= 1e-4

    def test_zero_sigma_rejected(self):
        net = VelocityNet(FlowConfig(), seed=0)
        g, a_obs, xi, prior, a0 = self.make_instance()
        with pytest.raises(DegenerateBaseError):
            log_density(net, g.adjacency, a0, xi, prior, quad_steps=8, sigma_s=0.0)


class TestMseDistortion:
    def test_exact_match_is_zero(self):
        rng = np.random.default_rng(29)
        g = random_graph(6, rng)
        xi = random_mask(6, rng)
        assert mse_distortion(g.adjacency, g.adjacency, xi) == 0.0

    def test_constant_half_prediction(self):
        rng = np.random.default_rng(30)
        g = random_graph(7, rng)
        xi = random_mask(7, rng)
        half = AdjacencyState(0.5 * (1.0 - np.eye(7)))
        assert np.isclose(mse_distortion(half, g.adjacency, xi), 0.25)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(31)
        g = random_graph(6, rng)
        xi = random_mask(6, rng)
        pred = random_prior(6, rng)
        total, count = 0.0, 0
        for i in range(6):
            for j in range(i + 1, 6):
                if xi.values[i, j] == 0:
                    total += (pred.values[i, j] - g.adjacency.values[i, j]) ** 2
                    count += 1
        assert np.isclose(mse_distortion(pred, g.adjacency, xi), total / count)

    def test_empty_hidden_region_rejected(self):
        g = random_graph(5, np.random.default_rng(32))
        with pytest.raises(UndefinedMetricError):
            mse_distortion(g.adjacency, g.adjacency, ObservationMask.all_observed(5))


class TestCheckpoint:
    def test_velocity_net_roundtrip(self, tmp_path):
        net = randomized_net(seed=13)
        path = tmp_path / "net.ckpt"
        net.save(path)
        loaded = VelocityNet.load(path)
        rng = np.random.default_rng(33)
        a = random_graph(7, rng).adjacency
        assert np.array_equal(velocity_forward(net, a, 0.5),
                              velocity_forward(loaded, a, 0.5))
