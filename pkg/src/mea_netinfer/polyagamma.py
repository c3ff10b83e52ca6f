"""
Polya-Gamma PG(1, c) random variates.

The exact sampler follows Devroye's alternating-series rejection scheme as
adapted by Polson, Scott and Windle (2013) for the Jacobi-type J*(1, z)
distribution, with PG(1, c) = J*(1, c/2) / 4. A truncated infinite-sum
sampler is kept as a fallback and as an independent cross-check.

All samplers take a ``numpy.random.Generator`` so that callers control the
stream; the jitted kernels release the GIL.
"""
import math

import numba
import numpy as np

__all__ = ["pg_mean", "sample_pg", "sample_pg_array", "sample_pg_truncated"]

_TRUNC = 0.64
_PI = math.pi
_PI2_8 = _PI * _PI / 8.0
_SQRT_2 = math.sqrt(2.0)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * _PI)


def pg_mean(c):
    """Analytic mean of PG(1, c): tanh(c/2) / (2c), with limit 1/4 at c = 0."""
    c = np.abs(np.asarray(c, dtype=float))
    out = np.full(c.shape, 0.25)
    nz = c > 1e-8
    out[nz] = np.tanh(c[nz] / 2.0) / (2.0 * c[nz])
    return out if out.ndim else float(out)


@numba.njit(cache=True, error_model="numpy")
def _log_norm_cdf(x):
    if x > -30.0:
        return math.log(0.5 * math.erfc(-x / _SQRT_2))
    # asymptotic tail, relative error < 1e-3 here
    return -0.5 * x * x - math.log(-x) - _HALF_LOG_2PI


@numba.njit(cache=True, error_model="numpy")
def _a_coef(n, x):
    k = n + 0.5
    if x > _TRUNC:
        return _PI * k * math.exp(-0.5 * k * k * _PI * _PI * x)
    return _PI * k * math.exp(-1.5 * math.log(0.5 * _PI * x) - 2.0 * k * k / x)


@numba.njit(cache=True, error_model="numpy")
def _mass_texpon(z):
    t = _TRUNC
    fz = _PI2_8 + 0.5 * z * z
    b = math.sqrt(1.0 / t) * (t * z - 1.0)
    a = -math.sqrt(1.0 / t) * (t * z + 1.0)
    x0 = math.log(fz) + fz * t
    xb = x0 - z + _log_norm_cdf(b)
    xa = x0 + z + _log_norm_cdf(a)
    qdivp = 4.0 / _PI * (math.exp(xb) + math.exp(xa))
    return 1.0 / (1.0 + qdivp)


@numba.njit(cache=True, error_model="numpy")
def _rtigauss(rng, z):
    # inverse Gaussian(1/z, 1) truncated to (0, TRUNC)
    t = _TRUNC
    x = t + 1.0
    if z < 1.0 / t:
        alpha = 0.0
        while rng.random() > alpha:
            e1 = rng.standard_exponential()
            e2 = rng.standard_exponential()
            while e1 * e1 > 2.0 * e2 / t:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
            x = 1.0 + e1 * t
            x = t / (x * x)
            alpha = math.exp(-0.5 * z * z * x)
    else:
        mu = 1.0 / z
        while x > t:
            y = rng.standard_normal()
            y = y * y
            half_mu = 0.5 * mu
            mu_y = mu * y
            x = mu + half_mu * mu_y - half_mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if rng.random() > mu / (mu + x):
                x = mu * mu / x
    return x


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _pg1_exact(rng, c):
    z = 0.5 * abs(c)
    fz = _PI2_8 + 0.5 * z * z
    p_exp = _mass_texpon(z)
    while True:
        if rng.random() < p_exp:
            x = _TRUNC + rng.standard_exponential() / fz
        else:
            x = _rtigauss(rng, z)
        s = _a_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _a_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _a_coef(n, x)
                if y > s:
                    break


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _fill_exact(rng, c, out):
    for i in range(c.shape[0]):
        out[i] = _pg1_exact(rng, c[i])


@numba.njit(cache=True, nogil=True, error_model="numpy")
def _fill_truncated(rng, c, n_terms, out):
    inv_2pi2 = 0.5 / (_PI * _PI)
    for i in range(c.shape[0]):
        c2 = c[i] * c[i] / (4.0 * _PI * _PI)
        acc = 0.0
        acc_mean = 0.0
        for k in range(n_terms):
            d = (k + 0.5) * (k + 0.5) + c2
            acc += rng.standard_exponential() / d
            acc_mean += 1.0 / d
        h = max(abs(c[i]) * 0.5, 1e-8)
        # rescale so the truncated sum has the exact mean
        out[i] = inv_2pi2 * acc * (math.tanh(h) / h / 4.0) / (inv_2pi2 * acc_mean)


def sample_pg(c, rng):
    """Draw a single PG(1, c) variate with the exact sampler."""
    if not np.isfinite(c):
        raise ValueError(f"tilting parameter must be finite, got {c}")
    return float(_pg1_exact(rng, float(c)))


def sample_pg_array(c, rng, method="exact", n_terms=200, out=None):
    """Draw independent PG(1, c_i) variates for every entry of ``c``.

    Parameters
    ----------
    c : array_like
        Tilting parameters, any shape.
    rng : numpy.random.Generator
    method : {"exact", "truncated"}
        ``"exact"`` uses the alternating-series rejection sampler.
        ``"truncated"`` sums ``n_terms`` weighted exponentials of the
        infinite-convolution representation and rescales to the exact mean.
    out : ndarray, optional
        Float64 buffer with the shape of ``c``.
    """
    c = np.ascontiguousarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise ValueError("tilting parameters must be finite")
    flat = c.reshape(-1)
    res = np.empty_like(flat) if out is None else out.reshape(-1)
    if method == "exact":
        _fill_exact(rng, flat, res)
    elif method == "truncated":
        _fill_truncated(rng, flat, int(n_terms), res)
    else:
        raise ValueError(f"unknown PG method {method!r}")
    return res.reshape(c.shape)


def sample_pg_truncated(c, rng, n_terms=200):
    return sample_pg_array(c, rng, method="truncated", n_terms=n_terms)
