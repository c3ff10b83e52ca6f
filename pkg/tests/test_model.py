import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mea_netinfer.errors import DataError
from mea_netinfer.model import (
    HyperParams,
    NetworkSample,
    activation,
    activations,
    filter_spike_history,
    firing_probability,
    history_kernel,
    load_matrix,
    load_network,
    log_firing_probability,
    log_likelihood,
    prior_network,
    random_network,
    save_matrix,
    save_network,
    simulate_spike_train,
    stable_network,
)
from mea_netinfer.spikedata import SpikeTrain


def brute_filter(x, tau_bins, window):
    """Truncated exponential history by direct double loop."""
    n_bins, n = x.shape
    F = np.zeros((n_bins, n))
    for t in range(n_bins):
        for m in range(n):
            for d in range(1, window + 1):
                if t - d >= 0:
                    F[t, m] += math.exp(-d / tau_bins) * x[t - d, m]
    return F


def random_train(seed, n_bins, n, p=0.2):
    rng = np.random.default_rng(seed)
    return SpikeTrain((rng.random((n_bins, n)) < p).astype(np.uint8))


def random_net(seed, n):
    rng = np.random.default_rng(seed)
    return NetworkSample((rng.random((n, n)) < 0.5).astype(np.int8),
                         rng.normal(size=(n, n)), rng.normal(-2, 0.5, size=n))


# -- hyperparameters -----------------------------------------------------------

def test_default_hyperparameters():
    hp = HyperParams()
    assert hp.window_bins == 100 and hp.mu_w == 1.0 and hp.S_b == 1.0
    assert hp.tau_ms == 15.0
    assert (hp.niw_mean, hp.niw_kappa, hp.niw_scale, hp.niw_dof) == (0.0, 1.0, 1.0, 3.0)


def test_real_data_hyperparameters():
    hp = HyperParams.real_data()
    assert (hp.window_bins, hp.mu_w, hp.S_b, hp.S_w, hp.mu_b, hp.rho) == (100, 1.0, 1.0, 1.0, -2.0, 0.1)


@pytest.mark.parametrize("kw", [dict(rho=1.5), dict(tau_ms=0), dict(window_bins=0),
                                dict(S_w=0), dict(niw_kappa=0), dict(niw_dof=0)])
def test_invalid_hyperparameters(kw):
    with pytest.raises(DataError):
        HyperParams(**kw)


# -- filtered regressors -------------------------------------------------------

def test_all_zero_train_gives_zero_regressors():
    F = filter_spike_history(SpikeTrain(np.zeros((50, 3), dtype=np.uint8)), HyperParams())
    assert not F.any()


def test_single_spike_kernel():
    t0, T = 10, 100
    x = np.zeros((300, 2), dtype=np.uint8)
    x[t0, 1] = 1
    F = filter_spike_history(SpikeTrain(x), HyperParams(tau_ms=15, window_bins=T))
    expect = np.zeros(300)
    lags = np.arange(1, T + 1)
    expect[t0 + lags] = np.exp(-lags / 15)
    np.testing.assert_allclose(F[:, 1], expect, rtol=1e-12, atol=0)
    assert not F[:, 0].any()


def test_filter_matches_brute_force():
    tr = random_train(3, 200, 5)
    hp = HyperParams(window_bins=100)
    F = filter_spike_history(tr, hp)
    ref = brute_filter(tr.data.astype(float), hp.tau_ms, hp.window_bins)
    np.testing.assert_allclose(F, ref, rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.integers(1, 4),
       st.sampled_from([0.5, 1.0, 2.0]), st.floats(2.0, 30.0))
def test_filter_property(seed, window, n, bin_ms, tau):
    rng = np.random.default_rng(seed)
    tr = SpikeTrain(rng.random((80, n)) < 0.3, bin_ms=bin_ms)
    hp = HyperParams(window_bins=window, tau_ms=tau)
    F = filter_spike_history(tr, hp)
    ref = brute_filter(tr.data.astype(float), tau / bin_ms, window)
    np.testing.assert_allclose(F, ref, rtol=1e-10, atol=1e-12)
    assert F.min() >= 0


def test_approximate_filter_is_untruncated():
    tr = random_train(4, 150, 2)
    hp = HyperParams(window_bins=10)
    approx = filter_spike_history(tr, hp, approximate=True)
    ref = brute_filter(tr.data.astype(float), hp.tau_ms, 150)
    np.testing.assert_allclose(approx, ref, rtol=1e-10, atol=1e-12)
    assert not np.allclose(approx, filter_spike_history(tr, hp))


def test_history_kernel_uses_bin_width():
    k = history_kernel(HyperParams(tau_ms=15, window_bins=3), bin_ms=2.0)
    np.testing.assert_allclose(k, np.exp(-np.array([2.0, 4.0, 6.0]) / 15))


# -- activation ----------------------------------------------------------------

def test_activation_without_edges_is_bias():
    tr = random_train(5, 40, 3)
    F = filter_spike_history(tr, HyperParams())
    net = NetworkSample(np.zeros((3, 3), np.int8), np.ones((3, 3)), [0.5, -1.0, 2.0])
    psi = activations(net, F)
    assert np.array_equal(psi, np.tile(net.bias, (40, 1)))


def test_activation_single_edge_lag_one():
    x = np.zeros((5, 2), dtype=np.uint8)
    x[2, 0] = 1
    F = filter_spike_history(SpikeTrain(x), HyperParams(tau_ms=15))
    net = NetworkSample([[0, 1], [0, 0]], [[0, 2.0], [0, 0]], [-1.0, -1.0])
    psi = activation(net, F, 3, 1)
    assert psi == pytest.approx(-1.0 + 2 * math.exp(-1 / 15), abs=1e-12)
    assert psi - (-1.0) == pytest.approx(1.8710, abs=5e-5)


def test_activation_matches_double_sum():
    tr = random_train(6, 120, 4)
    hp = HyperParams(window_bins=30)
    net = random_net(6, 4)
    x = tr.data.astype(float)
    F = filter_spike_history(tr, hp)
    psi = activations(net, F)
    for t in range(0, 120, 7):
        for n in range(4):
            ref = net.bias[n]
            for m in range(4):
                for d in range(1, hp.window_bins + 1):
                    if t - d >= 0:
                        ref += net.adjacency[m, n] * net.weights[m, n] * math.exp(-d / hp.tau_ms) * x[t - d, m]
            assert abs(psi[t, n] - ref) < 1e-10
            assert activation(net, F, t, n) == pytest.approx(psi[t, n], abs=1e-12)


def test_activation_is_linear_in_weights():
    tr = random_train(7, 60, 3)
    F = filter_spike_history(tr, HyperParams())
    net = random_net(7, 3)
    net2 = NetworkSample(net.adjacency, 2 * net.weights, net.bias)
    edge = activations(net, F) - net.bias
    edge2 = activations(net2, F) - net2.bias
    np.testing.assert_allclose(edge2, 2 * edge, rtol=1e-14, atol=1e-14)


def test_activation_index_errors():
    F = np.zeros((3, 2))
    net = NetworkSample(np.zeros((2, 2), np.int8), np.zeros((2, 2)), [0, 0])
    with pytest.raises(IndexError):
        activation(net, F, 3, 0)
    with pytest.raises(IndexError):
        activation(net, F, 0, 2)


# -- logistic ------------------------------------------------------------------

def test_logistic_values():
    assert firing_probability(0.0) == 0.5
    assert firing_probability(-2.0) == pytest.approx(0.11920, abs=5e-6)
    # float64 rounds sigma(40) to exactly 1, so the strict form is unattainable
    assert firing_probability(40.0) >= 1 - 1e-17
    assert firing_probability(-40.0) < 1e-17


def test_logistic_extremes_do_not_overflow():
    with np.errstate(all="raise"):
        hi = firing_probability(700.0)
        lo = firing_probability(-700.0)
        lp = log_firing_probability(np.array([-700.0, 700.0]))
    assert hi == 1.0 and 0.0 <= lo < 1e-300
    assert lp[0] == pytest.approx(-700.0) and abs(lp[1]) < 1e-300


@settings(max_examples=200)
@given(st.floats(-700, 700, allow_nan=False))
def test_logistic_symmetry_and_range(psi):
    p = firing_probability(psi)
    assert 0.0 <= p <= 1.0
    assert abs(firing_probability(-psi) - (1 - p)) <= 1e-15


@settings(max_examples=100)
@given(st.floats(-50, 50, allow_nan=False), st.floats(1e-6, 10))
def test_logistic_monotone(psi, step):
    assert firing_probability(psi + step) >= firing_probability(psi)


# -- likelihood ----------------------------------------------------------------

def test_loglik_single_bin():
    tr = SpikeTrain(np.ones((1, 1), dtype=np.uint8))
    net = NetworkSample([[0]], [[0.0]], [0.0])
    assert log_likelihood(net, tr, HyperParams()) == pytest.approx(-0.69315, abs=5e-6)


def test_loglik_silence_is_certain():
    tr = SpikeTrain(np.zeros((1000, 3), dtype=np.uint8))
    net = NetworkSample(np.zeros((3, 3), np.int8), np.zeros((3, 3)), [-40.0] * 3)
    assert abs(log_likelihood(net, tr, HyperParams())) < 1e-10


def test_loglik_matches_bernoulli_oracle():
    tr = random_train(8, 300, 4, p=0.3)
    hp = HyperParams(window_bins=40)
    net = random_net(8, 4)
    psi = activations(net, filter_spike_history(tr, hp))
    ref = 0.0
    for t in range(300):
        for n in range(4):
            p = 1 / (1 + math.exp(-psi[t, n]))
            ref += math.log(p) if tr.data[t, n] else math.log(1 - p)
    assert log_likelihood(net, tr, hp) == pytest.approx(ref, abs=1e-8)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_loglik_nonpositive(seed):
    tr = random_train(seed, 50, 3, p=0.5)
    net = random_net(seed, 3)
    assert log_likelihood(net, tr, HyperParams(window_bins=20)) <= 0


def test_loglik_dimension_mismatch():
    with pytest.raises(DataError):
        log_likelihood(random_net(0, 3), random_train(0, 10, 2), HyperParams())


@pytest.mark.slow
def test_truth_beats_permuted_sources():
    hp = HyperParams()
    net, s = stable_network(10, 0, density=0.3)
    tr = simulate_spike_train(net, 60_000, hp, seed=s)
    F = filter_spike_history(tr, hp)
    ll_true = log_likelihood(net, tr, hp, F=F)
    rng = np.random.default_rng(0)
    wins = 0
    for _ in range(100):
        p = rng.permutation(10)
        perm = NetworkSample(net.adjacency[p], net.weights[p], net.bias)
        wins += ll_true > log_likelihood(perm, tr, hp, F=F)
    assert wins >= 95


# -- simulation ----------------------------------------------------------------

def _rate_within(rate, p, n):
    se = math.sqrt(p * (1 - p) / n)
    return abs(rate - p) < 3 * se


def test_simulated_rate_at_zero_bias():
    net = NetworkSample([[0]], [[0.0]], [0.0])
    tr = simulate_spike_train(net, 100_000, HyperParams(), seed=1)
    assert _rate_within(tr.data.mean(), 0.5, 100_000)


def test_simulated_rate_at_negative_bias():
    net = NetworkSample([[0]], [[0.0]], [-2.0])
    tr = simulate_spike_train(net, 100_000, HyperParams(), seed=2)
    assert _rate_within(tr.data.mean(), 0.11920, 100_000)


def test_excitatory_edge_raises_target_rate():
    n_bins = 100_000
    base = NetworkSample([[0, 0], [0, 0]], np.zeros((2, 2)), [-3.0, -3.0])
    edge = NetworkSample([[0, 1], [0, 0]], [[0, 3.0], [0, 0]], [-3.0, -3.0])
    r0 = simulate_spike_train(base, n_bins, HyperParams(), seed=3).data[:, 1].mean()
    r1 = simulate_spike_train(edge, n_bins, HyperParams(), seed=3).data[:, 1].mean()
    pooled = (r0 + r1) / 2
    z = (r1 - r0) / math.sqrt(2 * pooled * (1 - pooled) / n_bins)
    assert z > 3.09  # one-sided p < 0.001


def test_simulation_deterministic_per_seed():
    net = random_net(9, 3)
    a = simulate_spike_train(net, 2000, HyperParams(), seed=11)
    b = simulate_spike_train(net, 2000, HyperParams(), seed=11)
    c = simulate_spike_train(net, 2000, HyperParams(), seed=12)
    assert a == b and not np.array_equal(a.data, c.data)


def test_simulation_matches_conditional_probabilities():
    """Each bin is drawn from sigma(psi) given the generated history."""
    net = NetworkSample([[1, 1], [1, 0]], [[-1.0, 2.0], [1.5, 0]], [-2.0, -2.5])
    hp = HyperParams(window_bins=20)
    tr = simulate_spike_train(net, 50_000, hp, seed=4)
    p = firing_probability(activations(net, filter_spike_history(tr, hp)))
    # calibration: observed spikes match predicted probabilities in bulk
    for n in range(2):
        expected = p[:, n].sum()
        sd = math.sqrt((p[:, n] * (1 - p[:, n])).sum())
        assert abs(tr.data[:, n].sum() - expected) < 4 * sd


# -- generators and storage ----------------------------------------------------

def test_random_network_structure():
    net = random_network(12, seed=0, density=0.3, weight=1.0)
    off = ~np.eye(12, dtype=bool)
    assert set(np.unique(net.weights[net.adjacency == 1][off[net.adjacency == 1]])) <= {-1.0, 1.0}
    assert np.all(np.diag(net.adjacency) == 1) and np.all(np.diag(net.weights) == -1.0)
    assert np.all(net.weights[net.adjacency == 0] == 0)
    masked = random_network(6, 0, density=1.0, mask=np.kron(np.eye(2), np.ones((3, 3))).astype(bool))
    assert masked.adjacency[:3, 3:].sum() == 0 and masked.adjacency[3:, :3].sum() == 0


def test_stable_network_rates():
    net, used = stable_network(6, 5, density=0.4)
    rates = simulate_spike_train(net, 20_000, HyperParams(), seed=used).data.mean(axis=0)
    assert rates.min() >= 0.003 and rates.max() <= 0.3


def test_prior_network_moments():
    hp = HyperParams(rho=0.3, mu_w=1.0, S_w=4.0, mu_b=-1.0)
    net = prior_network(200, hp, seed=0, allow_self_edges=False)
    assert abs(net.adjacency.sum() / (200 * 199) - 0.3) < 0.01
    assert np.diag(net.adjacency).sum() == 0
    assert abs(net.weights.mean() - 1.0) < 0.05 and abs(net.weights.var() - 4.0) < 0.1


def test_network_csv_roundtrip(tmp_path):
    net = random_net(10, 5)
    save_network(net, tmp_path / "net")
    assert load_network(tmp_path / "net") == net
    first = (tmp_path / "net" / "weights.csv").read_text().splitlines()[0]
    assert first == "# mea-netinfer network v1, N=5"


def test_matrix_roundtrip_keeps_nan(tmp_path):
    m = np.array([[0.5, np.nan], [-1.25, 3.0]])
    save_matrix(m, tmp_path / "m.csv")
    np.testing.assert_array_equal(load_matrix(tmp_path / "m.csv"), m)


def test_network_load_errors(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_network(tmp_path)
    save_network(random_net(0, 3), tmp_path)
    (tmp_path / "bias.csv").write_text("# mea-netinfer network v1, N=4\n0\n0\n0\n0\n")
    with pytest.raises(DataError):
        load_network(tmp_path)


def test_network_invariants():
    with pytest.raises(DataError):
        NetworkSample([[2]], [[0.0]], [0.0])
    with pytest.raises(DataError):
        NetworkSample([[1]], [[np.inf]], [0.0])
    with pytest.raises(DataError):
        NetworkSample(np.zeros((2, 2)), np.zeros((2, 2)), [0.0])
