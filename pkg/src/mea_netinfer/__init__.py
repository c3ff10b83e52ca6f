"""
Bayesian functional-connectivity inference for multi-electrode array
spike trains.

The package fits an autoregressive Bernoulli network model (binary
adjacency, real weights, per-electrode bias) with a collapsed Gibbs sampler
built on Polya-Gamma augmentation, and scales it to large arrays with a
two-level region split.
"""
from .analysis import (
    ChainSummary,
    DetectionReport,
    GraphMetrics,
    compare_to_reference,
    cosine_similarity,
    degree_profile,
    graph_metrics,
    posterior_metric_distribution,
    summarize_chain,
    threshold_network,
)
from .errors import ConfigError, DataError, NumericalError, SpikeFormatError
from .hierarchy import (
    HierarchicalResult,
    MergedSummary,
    RegionLayout,
    aggregate_regions,
    infer_hierarchical,
    merge_region_posteriors,
    plan_split,
)
from .model import (
    HyperParams,
    NetworkSample,
    filter_spike_history,
    firing_probability,
    load_network,
    log_likelihood,
    prior_network,
    random_network,
    save_network,
    simulate_spike_train,
    stable_network,
)
from .polyagamma import pg_mean, sample_pg, sample_pg_array
from .sampler import PosteriorChain, SamplerConfig, read_chain, run_gibbs, write_chain
from .spikedata import SpikeTrain, bin_spike_events, load_spike_train, read_spike_train, save_spike_train, write_spike_train

__version__ = "0.1.0"
