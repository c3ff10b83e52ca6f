"""
Gibbs sampler for the network posterior p(A, W, b | X).

Each sweep augments the logistic likelihood with Polya-Gamma variables
``omega[t, n] ~ PG(1, psi[t, n])``. Given ``omega`` the likelihood of the
incoming weights of one target electrode is Gaussian,

    p(X[:, n] | beta, omega) ∝ exp(kappa' D beta - 1/2 beta' D' Omega D beta),

with ``kappa = X[:, n] - 1/2``, design ``D = [F, 1]`` and ``beta`` holding
the incoming weights and the bias. Every ``A[m, n]`` is then drawn from its
conditional with the weights integrated out, and the included weights and
the bias are drawn jointly from their Gaussian conditional.

Rows (target electrodes) are independent given ``omega`` and the
hyperparameters, so they are processed in parallel. Each row and each
auxiliary column draws from its own counter-based stream keyed on
``(seed, iteration, electrode)``; results do not depend on the number of
workers.
"""
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, logit

from . import rng as rngmod
from .errors import ConfigError, DataError, NumericalError
from .model import HyperParams, NetworkSample, filter_spike_history, log_likelihood
from .polyagamma import sample_pg_array

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "PosteriorChain",
    "augmented_statistics",
    "inclusion_log_odds",
    "resample_auxiliary",
    "resample_connections_row",
    "niw_posterior",
    "resample_niw_hyperparameters",
    "run_gibbs",
    "write_chain",
    "read_chain",
]


@dataclass(frozen=True)
class SamplerConfig:
    n_iterations: int = 1000
    burn_in: int = 500
    seed: int = 0
    resample_hypers: bool = False
    allow_self_edges: bool = True
    parallel_width: int = 1
    thin: int = 1
    scan: str = "systematic"
    pg_method: str = "exact"

    def __post_init__(self):
        if self.n_iterations < 1:
            raise ConfigError("n_iterations must be at least 1")
        if not 0 <= self.burn_in < self.n_iterations:
            raise ConfigError(f"burn_in must lie in [0, n_iterations), got {self.burn_in}")
        if self.thin < 1:
            raise ConfigError("thin must be at least 1")
        if self.parallel_width < 1:
            raise ConfigError("parallel_width must be at least 1")
        if self.scan not in ("systematic", "random"):
            raise ConfigError(f"scan must be 'systematic' or 'random', got {self.scan!r}")
        if self.pg_method not in ("exact", "truncated"):
            raise ConfigError(f"pg_method must be 'exact' or 'truncated', got {self.pg_method!r}")

    @property
    def n_retained(self):
        return len(range(self.burn_in, self.n_iterations, self.thin))

    def to_dict(self):
        return asdict(self)


@dataclass
class PosteriorChain:
    """Retained samples of one sampler run.

    Attributes
    ----------
    samples : list of NetworkSample
        Post burn-in, thinned.
    loglik_trace : ndarray
        Log-likelihood of each retained sample.
    iterations : list of int
        Sweep index of each retained sample.
    config, hypers :
        Settings the run used.
    electrode_ids : tuple of str
        Labels of the electrodes, in matrix order.
    sweep_loglik : ndarray
        Log-likelihood after every sweep, burn-in included.
    hyper_trace : list of dict
        ``mu_w, S_w, mu_b, S_b`` of each retained sample (resampling mode).
    """

    samples: list
    loglik_trace: np.ndarray
    iterations: list
    config: SamplerConfig
    hypers: HyperParams
    electrode_ids: tuple
    sweep_loglik: np.ndarray = None
    hyper_trace: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    @property
    def n_electrodes(self):
        return len(self.electrode_ids)

    def adjacency_stack(self):
        return np.stack([s.adjacency for s in self.samples]).astype(float)

    def weight_stack(self):
        """Effective weights ``A * W`` of every sample, shape (S, N, N)."""
        return np.stack([s.effective_weights for s in self.samples])


# ---------------------------------------------------------------------------
# collapsed edge updates
# ---------------------------------------------------------------------------

def augmented_statistics(design, x, omega):
    """Gram matrix ``D' Omega D`` and vector ``D' (x - 1/2)``."""
    kappa = np.asarray(x, dtype=float) - 0.5
    gram = design.T @ (design * omega[:, None])
    rhs = design.T @ kappa
    return gram, rhs


def _schur_terms(Q, c, others, m):
    if len(others):
        try:
            L = np.linalg.cholesky(Q[np.ix_(others, others)])
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"posterior precision is not positive definite: {exc}") from None
        y = solve_triangular(L, np.column_stack([Q[others, m], c[others]]), lower=True,
                             check_finite=False)
        s = Q[m, m] - y[:, 0] @ y[:, 0]
        delta = c[m] - y[:, 0] @ y[:, 1]
    else:
        s = Q[m, m]
        delta = c[m]
    return s, delta


def inclusion_log_odds(Q, c, prior_prec, prior_mean, others, m, rho):
    """Log posterior odds of including regressor ``m``, its weight integrated out.

    Parameters
    ----------
    Q : ndarray (K, K)
        ``D' Omega D + diag(prior_prec)``.
    c : ndarray (K,)
        ``D' kappa + prior_prec * prior_mean``.
    prior_prec, prior_mean : ndarray (K,)
        Independent Gaussian prior of each coefficient.
    others : sequence of int
        Regressors included besides ``m`` (the bias column among them).
    rho : float
        Prior inclusion probability.

    Notes
    -----
    With the Schur complement ``s = Q_mm - Q_mS Q_SS^-1 Q_Sm`` and
    ``delta = c_m - Q_mS Q_SS^-1 c_S``, the log evidence ratio of the two
    Gaussian regressions is
    ``delta^2 / (2 s) - log(s) / 2 + log(p_m) / 2 - p_m mu_m^2 / 2``.
    """
    if rho <= 0.0:
        return -np.inf
    if rho >= 1.0:
        return np.inf
    s, delta = _schur_terms(Q, c, np.asarray(others, dtype=int), m)
    if not s > 0:
        raise NumericalError(f"non-positive Schur complement {s} for regressor {m}")
    p, mu = prior_prec[m], prior_mean[m]
    log_ratio = 0.5 * delta * delta / s - 0.5 * np.log(s) + 0.5 * np.log(p) - 0.5 * p * mu * mu
    return float(logit(rho) + log_ratio)


def _row_prior(n_sources, mu_w, S_w, mu_b, S_b):
    prec = np.empty(n_sources + 1)
    mean = np.empty(n_sources + 1)
    prec[:n_sources] = 1.0 / S_w
    mean[:n_sources] = mu_w
    prec[n_sources] = 1.0 / S_b
    mean[n_sources] = mu_b
    return prec, mean


class ActiveSetInverse:
    """Inverse of ``Q`` restricted to the active regressors, kept current
    under single-regressor insertions and removals (O(k^2) each)."""

    def __init__(self, Q, c, active):
        self.Q = Q
        self.c = c
        self.idx = list(np.flatnonzero(active))
        sub = Q[np.ix_(self.idx, self.idx)]
        try:
            L = np.linalg.cholesky(sub)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"posterior precision not positive definite: {exc}") from None
        Linv = solve_triangular(L, np.eye(len(self.idx)), lower=True, check_finite=False)
        self.inv = Linv.T @ Linv

    def schur(self, m):
        """``(s, delta, position)`` of regressor ``m`` against the others."""
        if m in self.idx:
            p = self.idx.index(m)
            s = 1.0 / self.inv[p, p]
            mean_m = self.inv[p] @ self.c[self.idx]
            return s, mean_m * s, p
        q = self.Q[self.idx, m]
        v = self.inv @ q
        s = self.Q[m, m] - q @ v
        delta = self.c[m] - v @ self.c[self.idx]
        return s, delta, v

    def insert(self, m, s, v):
        k = len(self.idx)
        new = np.empty((k + 1, k + 1))
        new[:k, :k] = self.inv + np.outer(v, v) / s
        new[:k, k] = -v / s
        new[k, :k] = -v / s
        new[k, k] = 1.0 / s
        self.inv = new
        self.idx.append(m)

    def remove(self, p):
        keep = [i for i in range(len(self.idx)) if i != p]
        col = self.inv[keep, p]
        self.inv = self.inv[np.ix_(keep, keep)] - np.outer(col, col) / self.inv[p, p]
        del self.idx[p]


def _log_odds_from_schur(s, delta, p, mu, rho):
    if not s > 0:
        raise NumericalError(f"non-positive Schur complement {s}")
    return float(logit(rho) + 0.5 * delta * delta / s - 0.5 * np.log(s)
                 + 0.5 * np.log(p) - 0.5 * p * mu * mu)


def resample_connections_row(n, design, x, omega, a_col, rho, prior, rng,
                             allow_self_edges=True, scan="systematic", trace=None):
    """Gibbs update of everything feeding target electrode ``n``.

    Parameters
    ----------
    n : int
        Target electrode.
    design : ndarray (T, N + 1)
        Filtered regressors with a trailing column of ones for the bias.
    x, omega : ndarray (T,)
        Spikes of electrode ``n`` and their auxiliary variables.
    a_col : ndarray (N,)
        Current incoming adjacency ``A[:, n]``.
    prior : tuple
        ``(mu_w, S_w, mu_b, S_b)`` for this row.
    rng : numpy.random.Generator
    trace : list, optional
        Receives ``(m, others, log_odds)`` for every edge visited.

    Returns
    -------
    a_col, w_col, b_n
        New incoming adjacency, incoming weights (excluded edges drawn from
        the prior) and bias.
    """
    n_src = design.shape[1] - 1
    bias_idx = n_src
    mu_w, S_w, mu_b, S_b = prior
    prec, mean = _row_prior(n_src, mu_w, S_w, mu_b, S_b)
    gram, rhs = augmented_statistics(design, x, omega)
    Q = gram
    Q[np.diag_indices_from(Q)] += prec
    c = rhs + prec * mean

    active = np.zeros(n_src + 1, dtype=bool)
    active[:n_src] = np.asarray(a_col, dtype=bool)
    active[bias_idx] = True
    if not allow_self_edges:
        active[n] = False

    order = np.arange(n_src) if scan == "systematic" else rng.permutation(n_src)
    if 0.0 < rho < 1.0:
        state = ActiveSetInverse(Q, c, active)
        for m in order:
            if m == n and not allow_self_edges:
                continue
            s, delta, pos_or_v = state.schur(m)
            lo = _log_odds_from_schur(s, delta, prec[m], mean[m], rho)
            if trace is not None:
                trace.append((int(m), sorted(i for i in state.idx if i != m), lo))
            new = rng.random() < expit(lo)
            if active[m] and not new:
                state.remove(pos_or_v)
            elif new and not active[m]:
                state.insert(m, s, pos_or_v)
            active[m] = new
    else:
        for m in order:
            active[m] = rho >= 1.0 and (allow_self_edges or m != n)

    idx = np.flatnonzero(active)
    try:
        L = np.linalg.cholesky(Q[np.ix_(idx, idx)])
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"row {n}: posterior precision not positive definite: {exc}") from None
    post_mean = solve_triangular(L.T, solve_triangular(L, c[idx], lower=True), lower=False)
    beta = post_mean + solve_triangular(L.T, rng.standard_normal(len(idx)), lower=False)

    w_col = mu_w + np.sqrt(S_w) * rng.standard_normal(n_src)
    w_col[idx[:-1]] = beta[:-1]
    return active[:n_src].astype(np.int8), w_col, float(beta[-1])


# ---------------------------------------------------------------------------
# auxiliary variables
# ---------------------------------------------------------------------------

def _auxiliary_column(F, a_col, w_col, b_n, seed, iteration, n, method):
    psi = F @ (a_col * w_col) + b_n
    if not np.all(np.isfinite(psi)):
        raise NumericalError(f"non-finite activation for electrode {n}")
    return sample_pg_array(psi, rngmod.stream(seed, rngmod.AUX, iteration, n), method=method)


def resample_auxiliary(net, F, seed, iteration=0, method="exact"):
    """Draw ``omega[t, n] ~ PG(1, psi[t, n])`` for the whole train.

    Column ``n`` uses the stream keyed on ``(seed, iteration, n)``.
    """
    omega = np.empty(np.shape(F))
    A, W = net.adjacency, net.weights
    for n in range(net.n_electrodes):
        omega[:, n] = _auxiliary_column(F, A[:, n], W[:, n], net.bias[n], seed, iteration, n, method)
    return omega


# ---------------------------------------------------------------------------
# hyperparameters
# ---------------------------------------------------------------------------

def niw_posterior(obs, mean0, kappa0, scale0, dof0):
    """Conjugate update of a scalar Normal-Inverse-Wishart prior.

    Returns ``(mean, kappa, scale, dof)`` of the posterior given the
    observations ``obs``.
    """
    obs = np.asarray(obs, dtype=float)
    k = obs.size
    if k == 0:
        return mean0, kappa0, scale0, dof0
    xbar = obs.mean()
    kappa = kappa0 + k
    mean = (kappa0 * mean0 + k * xbar) / kappa
    scatter = np.sum((obs - xbar) ** 2)
    scale = scale0 + scatter + kappa0 * k / kappa * (xbar - mean0) ** 2
    return mean, kappa, scale, dof0 + k


def _sample_niw(params, rng):
    mean, kappa, scale, dof = params
    # 1-D inverse-Wishart(scale, dof) is inverse-gamma(dof / 2, scale / 2)
    var = (scale / 2.0) / rng.gamma(dof / 2.0)
    mu = mean + np.sqrt(var / kappa) * rng.standard_normal()
    return mu, var


def resample_niw_hyperparameters(net, hp, rng, resample=True):
    """Draw ``(mu_w, S_w, mu_b, S_b)`` given the current network.

    Each target electrode ``n`` has its own ``(mu_w[n], S_w[n])`` whose
    observations are the weights of its included incoming edges; the bias
    vector informs the shared ``(mu_b, S_b)``. In fixed mode
    (``resample=False``) the values of ``hp`` are returned unchanged.
    """
    N = net.n_electrodes
    if not resample:
        return np.full(N, hp.mu_w), np.full(N, hp.S_w), hp.mu_b, hp.S_b
    prior = (hp.niw_mean, hp.niw_kappa, hp.niw_scale, hp.niw_dof)
    mu_w = np.empty(N)
    S_w = np.empty(N)
    for n in range(N):
        inc = net.weights[net.adjacency[:, n] == 1, n]
        mu_w[n], S_w[n] = _sample_niw(niw_posterior(inc, *prior), rng)
    mu_b, S_b = _sample_niw(niw_posterior(net.bias, *prior), rng)
    return mu_w, S_w, mu_b, S_b


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def _initial_state(N, hp, cfg):
    g = rngmod.stream(cfg.seed, rngmod.INIT)
    A = (g.random((N, N)) < hp.rho).astype(np.int8)
    if not cfg.allow_self_edges:
        np.fill_diagonal(A, 0)
    W = hp.mu_w + np.sqrt(hp.S_w) * g.standard_normal((N, N))
    b = np.full(N, hp.mu_b, dtype=float)
    return A, W, b


def run_gibbs(train, hp=None, cfg=None, F=None, progress=None):
    """Sample the network posterior of ``train``.

    Each sweep: auxiliary variables, then every row's collapsed adjacency
    scan and weight draw (in parallel over rows), then the hyperparameters
    if enabled, then the log-likelihood. Samples after ``burn_in`` are kept
    at stride ``thin``.

    Parameters
    ----------
    train : SpikeTrain
    hp : HyperParams, optional
    cfg : SamplerConfig, optional
    F : ndarray, optional
        Precomputed filtered regressors for ``train``.
    progress : callable, optional
        Called as ``progress(iteration, loglik)`` after every sweep.
    """
    hp = HyperParams() if hp is None else hp
    cfg = SamplerConfig() if cfg is None else cfg
    if train.n_bins < 1 or train.n_electrodes < 1:
        raise DataError("empty spike train")
    N = train.n_electrodes
    if F is None:
        F = filter_spike_history(train, hp)
    design = np.ascontiguousarray(np.column_stack([F, np.ones(train.n_bins)]))
    X = np.asarray(train.data, dtype=float)

    A, W, b = _initial_state(N, hp, cfg)
    mu_w = np.full(N, float(hp.mu_w))
    S_w = np.full(N, float(hp.S_w))
    mu_b, S_b = float(hp.mu_b), float(hp.S_b)

    samples, trace, iters, hyper_trace = [], [], [], []
    sweep_ll = np.empty(cfg.n_iterations)
    pool = ThreadPoolExecutor(cfg.parallel_width) if cfg.parallel_width > 1 else None

    def update_row(n, it):
        omega = _auxiliary_column(F, A[:, n], W[:, n], b[n], cfg.seed, it, n, cfg.pg_method)
        return resample_connections_row(
            n, design, X[:, n], omega, A[:, n], hp.rho, (mu_w[n], S_w[n], mu_b, S_b),
            rngmod.stream(cfg.seed, rngmod.ROW, it, n),
            allow_self_edges=cfg.allow_self_edges, scan=cfg.scan,
        )

    try:
        for it in range(cfg.n_iterations):
            try:
                if pool is None:
                    rows = [update_row(n, it) for n in range(N)]
                else:
                    rows = list(pool.map(update_row, range(N), [it] * N))
                for n, (a_col, w_col, b_n) in enumerate(rows):
                    A[:, n] = a_col
                    W[:, n] = w_col
                    b[n] = b_n
                net = NetworkSample(A, W, b)
                if cfg.resample_hypers:
                    mu_w, S_w, mu_b, S_b = resample_niw_hyperparameters(
                        net, hp, rngmod.stream(cfg.seed, rngmod.HYPER, it), resample=True)
                ll = log_likelihood(net, train, hp, F=F)
            except (NumericalError, DataError, FloatingPointError) as exc:
                raise NumericalError(f"iteration {it}: {exc}") from exc
            if not np.isfinite(ll):
                raise NumericalError(f"iteration {it}: non-finite log-likelihood")
            sweep_ll[it] = ll
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                samples.append(net)
                trace.append(ll)
                iters.append(it)
                if cfg.resample_hypers:
                    hyper_trace.append({"mu_w": mu_w.tolist(), "S_w": S_w.tolist(),
                                        "mu_b": float(mu_b), "S_b": float(S_b)})
            if progress is not None:
                progress(it, ll)
            logger.debug("sweep %d loglik %.3f edges %d", it, ll, int(A.sum()))
    finally:
        if pool is not None:
            pool.shutdown()

    return PosteriorChain(samples, np.array(trace), iters, cfg, hp, tuple(train.ids),
                          sweep_loglik=sweep_ll, hyper_trace=hyper_trace)


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------

CHAIN_FILE = "chain.jsonl"
META_FILE = "chain_meta.json"


def write_chain(chain, directory):
    """Write ``chain.jsonl`` (one retained sample per line) and ``chain_meta.json``."""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, CHAIN_FILE), "w") as fh:
        for k, (it, ll, s) in enumerate(zip(chain.iterations, chain.loglik_trace, chain.samples)):
            src, dst = np.nonzero(s.adjacency)
            rec = {
                "iter": int(it),
                "loglik": float(ll),
                "A": [[int(m), int(n)] for m, n in zip(src, dst)],
                "W": [[int(m), int(n), float(s.weights[m, n])] for m, n in zip(src, dst)],
                "b": [float(v) for v in s.bias],
            }
            if chain.hyper_trace:
                rec["hypers"] = chain.hyper_trace[k]
            fh.write(json.dumps(rec) + "\n")
    meta = {
        "n_electrodes": chain.n_electrodes,
        "electrode_ids": list(chain.electrode_ids),
        "config": chain.config.to_dict(),
        "hyperparameters": chain.hypers.to_dict(),
        "sweep_loglik": [float(v) for v in chain.sweep_loglik] if chain.sweep_loglik is not None else None,
    }
    with open(os.path.join(directory, META_FILE), "w") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_chain(directory):
    """Inverse of :func:`write_chain`. Excluded-edge weights read back as 0."""
    meta_path = os.path.join(directory, META_FILE)
    chain_path = os.path.join(directory, CHAIN_FILE)
    for p in (meta_path, chain_path):
        if not os.path.exists(p):
            raise DataError(f"missing chain file {p}")
    with open(meta_path) as fh:
        meta = json.load(fh)
    N = int(meta["n_electrodes"])
    cfg_keys = {f.name for f in fields(SamplerConfig)}
    cfg = SamplerConfig(**{k: v for k, v in meta["config"].items() if k in cfg_keys})
    hp = HyperParams(**meta["hyperparameters"])
    samples, trace, iters, hyper_trace = [], [], [], []
    with open(chain_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                A = np.zeros((N, N), dtype=np.int8)
                W = np.zeros((N, N))
                for m, n in rec["A"]:
                    A[m, n] = 1
                for m, n, w in rec["W"]:
                    W[m, n] = w
                samples.append(NetworkSample(A, W, np.asarray(rec["b"], dtype=float)))
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise DataError(f"{chain_path}:{lineno}: {exc}") from None
            trace.append(float(rec["loglik"]))
            iters.append(int(rec["iter"]))
            if "hypers" in rec:
                hyper_trace.append(rec["hypers"])
    sweep = meta.get("sweep_loglik")
    return PosteriorChain(samples, np.array(trace), iters, cfg, hp, tuple(meta["electrode_ids"]),
                          sweep_loglik=None if sweep is None else np.array(sweep),
                          hyper_trace=hyper_trace)
