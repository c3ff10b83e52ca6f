"""
Autoregressive Bernoulli network model of MEA spike trains.

Indexing convention, used throughout the package: matrix entry ``[m, n]``
is the connection *from* source electrode ``m`` *to* target electrode ``n``.

The activation of electrode ``n`` at bin ``t`` is

    psi[t, n] = b[n] + sum_m A[m, n] * W[m, n] * F[t, m]

where ``F[t, m] = sum_{d=1..T} exp(-d * bin_ms / tau_ms) * X[t - d, m]`` is
the exponentially filtered spike history of source ``m`` truncated to a
window of ``T`` bins, and ``X[t, n] ~ Bernoulli(sigmoid(psi[t, n]))``.
"""
import csv
import os
from dataclasses import asdict, dataclass, fields, replace

import numba
import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from . import rng as rngmod
from .errors import DataError
from .spikedata import SpikeTrain

__all__ = [
    "NetworkSample",
    "HyperParams",
    "history_kernel",
    "filter_spike_history",
    "activation",
    "activations",
    "firing_probability",
    "log_firing_probability",
    "log_likelihood",
    "simulate_spike_train",
    "random_network",
    "stable_network",
    "save_matrix",
    "load_matrix",
    "prior_network",
    "save_network",
    "load_network",
]


@dataclass(frozen=True, eq=False)
class NetworkSample:
    """One realisation of the latent network.

    ``adjacency[m, n]`` and ``weights[m, n]`` describe the edge m -> n;
    ``bias[n]`` is the baseline activation of electrode n.
    """

    adjacency: np.ndarray
    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.adjacency)
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.bias, dtype=float).reshape(-1)
        n = b.shape[0]
        if a.shape != (n, n) or w.shape != (n, n):
            raise DataError(f"adjacency {a.shape} and weights {w.shape} must be {n}x{n}")
        if not np.all((a == 0) | (a == 1)):
            raise DataError("adjacency entries must be 0 or 1")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise DataError("weights and bias must be finite")
        object.__setattr__(self, "adjacency", a.astype(np.int8))
        object.__setattr__(self, "weights", w.copy())
        object.__setattr__(self, "bias", b.copy())

    @property
    def n_electrodes(self):
        return self.bias.shape[0]

    @property
    def effective_weights(self):
        """``A * W``: the weights that actually act on the activations."""
        return self.adjacency * self.weights

    def __eq__(self, other):
        if not isinstance(other, NetworkSample):
            return NotImplemented
        return (np.array_equal(self.adjacency, other.adjacency)
                and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.bias, other.bias))

    __hash__ = None


@dataclass(frozen=True)
class HyperParams:
    """Model hyperparameters.

    Defaults are the synthetic-experiment setting: window of 100 bins,
    weight prior mean 1, bias prior variance 1, tau = 15 ms, rho = 0.5.
    ``mu_w, S_w, mu_b, S_b`` are used as-is in fixed mode and as starting
    values when the sampler resamples them from their Normal-Inverse-Wishart
    conditional (prior ``NIW(niw_mean, niw_kappa, niw_scale, niw_dof)``).
    """

    rho: float = 0.5
    tau_ms: float = 15.0
    window_bins: int = 100
    mu_w: float = 1.0
    S_w: float = 1.0
    mu_b: float = 0.0
    S_b: float = 1.0
    niw_mean: float = 0.0
    niw_kappa: float = 1.0
    niw_scale: float = 1.0
    niw_dof: float = 3.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise DataError(f"rho must lie in [0, 1], got {self.rho}")
        if not self.tau_ms > 0:
            raise DataError(f"tau_ms must be positive, got {self.tau_ms}")
        if int(self.window_bins) != self.window_bins or self.window_bins < 1:
            raise DataError(f"window_bins must be a positive integer, got {self.window_bins}")
        if not (self.S_w > 0 and self.S_b > 0):
            raise DataError("prior variances S_w and S_b must be positive")
        if not self.niw_kappa > 0:
            raise DataError("niw_kappa must be positive")
        if not self.niw_scale > 0:
            raise DataError("niw_scale must be positive")
        # scalar inverse-Wishart: dof must exceed dimension - 1 = 0; use > 2 for a finite mean
        if not self.niw_dof > 0:
            raise DataError("niw_dof must exceed dimension - 1")
        object.__setattr__(self, "window_bins", int(self.window_bins))

    @classmethod
    def real_data(cls, **overrides):
        """Setting used for real recordings: mu_b = -2, rho = 0.1."""
        base = dict(rho=0.1, mu_w=1.0, S_w=1.0, mu_b=-2.0, S_b=1.0, window_bins=100)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)

    def replace(self, **changes):
        return replace(self, **changes)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def history_kernel(hp, bin_ms=1.0):
    """Lag weights ``exp(-d * bin_ms / tau_ms)`` for ``d = 1..window_bins``."""
    lags = np.arange(1, hp.window_bins + 1, dtype=float)
    return np.exp(-lags * bin_ms / hp.tau_ms)


def filter_spike_history(train, hp, approximate=False):
    """Exponentially filtered, truncated spike history of every electrode.

    Returns a float ``(n_bins, n_electrodes)`` array ``F`` with
    ``F[t, m] = sum_{d=1..T} k[d] X[t-d, m]``; lags reaching before bin 0
    are dropped. With ``approximate=True`` the window is not truncated and
    the cheaper first-order recursion is used instead.
    """
    x = np.asarray(train.data, dtype=float)
    if approximate:
        d = np.exp(-train.bin_ms / hp.tau_ms)
        return lfilter([0.0, d], [1.0, -d], x, axis=0)
    taps = np.concatenate([[0.0], history_kernel(hp, train.bin_ms)])
    return lfilter(taps, [1.0], x, axis=0)


def firing_probability(psi):
    """Logistic map from activation to firing probability.

    Evaluated without overflow for any finite input. Note that in double
    precision the value rounds to exactly 1.0 once psi exceeds about 37.
    """
    out = expit(psi)
    return float(out) if np.ndim(out) == 0 else out


def log_firing_probability(psi):
    """``log sigmoid(psi)``, stable for large |psi|."""
    return -np.logaddexp(0.0, -np.asarray(psi, dtype=float))


def activations(net, F):
    """All activations ``psi = b + F @ (A * W)``, shape ``(n_bins, N)``."""
    F = np.asarray(F, dtype=float)
    if F.ndim != 2 or F.shape[1] != net.n_electrodes:
        raise DataError(f"regressors with {F.shape} do not match {net.n_electrodes} electrodes")
    return F @ net.effective_weights + net.bias


def activation(net, F, t, n):
    """Activation ``psi[t, n]`` of a single electrode and bin."""
    n_bins, n_el = np.shape(F)
    if not (0 <= t < n_bins and 0 <= n < n_el):
        raise IndexError(f"(t={t}, n={n}) outside {n_bins} bins x {n_el} electrodes")
    return float(net.bias[n] + np.dot(F[t], net.effective_weights[:, n]))


def log_likelihood(net, train, hp, F=None):
    """Bernoulli log-likelihood of ``train`` under ``net``.

    ``sum_{t,n} X log sigmoid(psi) + (1 - X) log(1 - sigmoid(psi))``,
    computed as ``X psi - log(1 + e^psi)``.
    """
    if train.n_electrodes != net.n_electrodes:
        raise DataError(f"train has {train.n_electrodes} electrodes, network has {net.n_electrodes}")
    if F is None:
        F = filter_spike_history(train, hp)
    psi = activations(net, F)
    x = train.data
    return float(np.sum(x * psi) - np.sum(np.logaddexp(0.0, psi)))


@numba.njit(cache=True)
def _simulate(rng, aw, bias, kernel, n_bins, out):
    n = bias.shape[0]
    window = kernel.shape[0]
    f = np.zeros(n)
    for t in range(n_bins):
        lo = max(0, t - window)
        for m in range(n):
            s = 0.0
            for s_t in range(t - 1, lo - 1, -1):
                if out[s_t, m]:
                    s += kernel[t - s_t - 1]
            f[m] = s
        for j in range(n):
            psi = bias[j]
            for m in range(n):
                psi += aw[m, j] * f[m]
            if psi >= 0:
                p = 1.0 / (1.0 + np.exp(-psi))
            else:
                e = np.exp(psi)
                p = e / (1.0 + e)
            out[t, j] = 1 if rng.random() < p else 0


def simulate_spike_train(net, n_bins, hp, seed, bin_ms=1.0, geometry=None, ids=None):
    """Sample a spike train from the generative model.

    Bins are generated in order; each bin's activations use only the history
    already generated (the first ``T`` bins see a shorter history, nothing
    is padded). Deterministic given ``seed``.
    """
    if n_bins < 1:
        raise DataError("n_bins must be at least 1")
    out = np.zeros((int(n_bins), net.n_electrodes), dtype=np.uint8)
    kernel = history_kernel(hp, bin_ms)
    _simulate(rngmod.stream(seed, rngmod.SIMULATE), net.effective_weights.astype(float),
              net.bias.astype(float), kernel, int(n_bins), out)
    return SpikeTrain(out, bin_ms=bin_ms, geometry=geometry, ids=ids)


def random_network(n_electrodes, seed, density=0.3, weight=1.0, bias=-3.0,
                   self_weight=-1.0, p_excitatory=0.5, mask=None):
    """Ground-truth network with +/- ``weight`` edges.

    Each off-diagonal edge allowed by ``mask`` (N x N bool, default all) is
    present with probability ``density`` and is excitatory with probability
    ``p_excitatory``. When ``self_weight`` is not None every electrode gets a
    self-edge of that weight; the default -1 acts like refractoriness and
    keeps most random networks from locking into saturated firing.
    """
    g = rngmod.stream(seed, rngmod.NETWORK)
    allowed = np.ones((n_electrodes, n_electrodes), dtype=bool) if mask is None else np.array(mask, bool)
    np.fill_diagonal(allowed, False)
    a = (g.random((n_electrodes, n_electrodes)) < density) & allowed
    w = np.where(g.random((n_electrodes, n_electrodes)) < p_excitatory, weight, -weight)
    if self_weight is not None:
        np.fill_diagonal(a, True)
        np.fill_diagonal(w, self_weight)
    w = np.where(a, w, 0.0)
    return NetworkSample(a.astype(np.int8), w, np.full(n_electrodes, float(bias)))


def stable_network(n_electrodes, seed, hp=None, min_rate=0.003, max_rate=0.3,
                   pilot_bins=20000, max_tries=200, **kwargs):
    """First :func:`random_network` whose simulated firing rates stay sane.

    Seeds ``seed, seed + 1, ...`` are tried in turn; a network is accepted
    when a pilot simulation keeps every electrode's rate inside
    ``[min_rate, max_rate]``. Returns ``(network, seed_used)``.
    """
    hp = HyperParams() if hp is None else hp
    for k in range(max_tries):
        net = random_network(n_electrodes, seed + k, **kwargs)
        rates = simulate_spike_train(net, pilot_bins, hp, seed=seed + k).data.mean(axis=0)
        if rates.min() >= min_rate and rates.max() <= max_rate:
            return net, seed + k
    raise DataError(f"no network with rates in [{min_rate}, {max_rate}] after {max_tries} tries")


def prior_network(n_electrodes, hp, seed, allow_self_edges=True):
    """Draw ``(A, W, b)`` from the model prior with fixed hyperparameters."""
    g = rngmod.stream(seed, rngmod.NETWORK, 1)
    a = g.random((n_electrodes, n_electrodes)) < hp.rho
    if not allow_self_edges:
        np.fill_diagonal(a, False)
    w = hp.mu_w + np.sqrt(hp.S_w) * g.standard_normal((n_electrodes, n_electrodes))
    b = hp.mu_b + np.sqrt(hp.S_b) * g.standard_normal(n_electrodes)
    return NetworkSample(a.astype(np.int8), w, b)


NETWORK_HEADER = "# mea-netinfer network v1, N={n}"
NETWORK_FILES = ("adjacency.csv", "weights.csv", "bias.csv")


def save_network(net, directory):
    """Write ``adjacency.csv``, ``weights.csv`` and ``bias.csv``.

    Rows are sources, columns are targets; bias is a single column.
    """
    os.makedirs(directory, exist_ok=True)
    header = NETWORK_HEADER.format(n=net.n_electrodes)
    tables = (
        [[str(int(v)) for v in row] for row in net.adjacency],
        [[repr(float(v)) for v in row] for row in net.weights],
        [[repr(float(v))] for v in net.bias],
    )
    for name, rows in zip(NETWORK_FILES, tables):
        with open(os.path.join(directory, name), "w", newline="") as fh:
            fh.write(header + "\n")
            csv.writer(fh, lineterminator="\n").writerows(rows)


def _read_table(path, n_expected=None):
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# mea-netinfer network v1"):
            raise DataError(f"{path}: missing network header")
        try:
            n = int(first.rsplit("N=", 1)[1])
        except (IndexError, ValueError):
            raise DataError(f"{path}: header lacks N=") from None
        rows = [r for r in csv.reader(fh) if r]
    try:
        arr = np.array([[float(v) for v in r] for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    if n_expected is not None and n != n_expected:
        raise DataError(f"{path}: N={n} but expected {n_expected}")
    return n, arr


def save_matrix(matrix, path):
    """Write one square matrix in the network table format (NaN as ``nan``)."""
    m = np.asarray(matrix, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write(NETWORK_HEADER.format(n=m.shape[0]) + "\n")
        csv.writer(fh, lineterminator="\n").writerows([[repr(float(v)) for v in row] for row in m])


def load_matrix(path):
    if not os.path.exists(path):
        raise DataError(f"missing matrix file {path}")
    n, arr = _read_table(path)
    if arr.shape != (n, n):
        raise DataError(f"{path}: expected a {n} x {n} table, got {arr.shape}")
    return arr


def load_network(directory):
    for name in NETWORK_FILES:
        if not os.path.exists(os.path.join(directory, name)):
            raise DataError(f"missing network file {os.path.join(directory, name)}")
    n, a = _read_table(os.path.join(directory, "adjacency.csv"))
    _, w = _read_table(os.path.join(directory, "weights.csv"), n)
    _, b = _read_table(os.path.join(directory, "bias.csv"), n)
    if a.shape != (n, n) or w.shape != (n, n) or b.shape != (n, 1):
        raise DataError(f"{directory}: network tables do not match N={n}")
    return NetworkSample(a.astype(np.int8), w, b[:, 0])
