import numpy as np
import pytest

from mea_netinfer.model import HyperParams, NetworkSample
from mea_netinfer.sampler import PosteriorChain, SamplerConfig


def make_chain(samples, ids=None):
    """Wrap NetworkSamples into a PosteriorChain without running the sampler."""
    n = samples[0].n_electrodes
    ids = tuple(ids) if ids is not None else tuple(f"e{i}" for i in range(n))
    return PosteriorChain(
        samples=list(samples),
        loglik_trace=np.zeros(len(samples)),
        iterations=list(range(len(samples))),
        config=SamplerConfig(n_iterations=len(samples), burn_in=0),
        hypers=HyperParams(),
        electrode_ids=ids,
    )


def random_sample(rng, n, p=0.4):
    a = (rng.random((n, n)) < p).astype(np.int8)
    return NetworkSample(a, rng.normal(0, 1, (n, n)), rng.normal(-2, 1, n))


@pytest.fixture
def chain_factory():
    return make_chain


# acceptance criteria register one line each here; printed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
