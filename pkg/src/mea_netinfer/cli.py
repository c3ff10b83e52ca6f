"""
Command-line interface: ``mea-netinfer <command> [options]``.

Commands
--------
generate     ground-truth network and simulated spike train
infer        posterior chain and summaries for one spike train
split-infer  per-region chains, region-level chain and merged summary
metrics      graph metrics of every retained posterior sample
compare      cosine similarity and detection report against a truth
bench        per-sweep timing against array size
replay       re-run a command from its manifest and verify the outputs

Every command writes ``manifest.json`` (full configuration, where each value
came from, and a SHA-256 of each output) and ``run.cfg`` (the same settings
as a flat config file) into its output directory.

Exit codes: 0 success, 1 replay mismatch, 2 configuration error, 3 data
error, 4 numerical failure.
"""
import argparse
import csv
import hashlib
import json
import logging
import math
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .analysis import (
    compare_to_reference,
    cosine_similarity,
    degree_profile,
    posterior_metric_distribution,
    summarize_chain,
    threshold_network,
    write_metrics_csv,
)
from .bench import run_benchmark
from .config import COMMANDS, RunConfig, keys_for, parse_bool, read_config_file
from .errors import ConfigError, DataError, NumericalError
from .hierarchy import ANY_SPIKE, RegionLayout, infer_hierarchical, merge_region_posteriors, \
    parse_grid_split, plan_split
from .model import load_matrix, load_network, prior_network, random_network, save_matrix, \
    save_network, simulate_spike_train, stable_network
from .sampler import read_chain, run_gibbs, write_chain
from .spikedata import default_geometry, load_spike_train, save_spike_train

logger = logging.getLogger("mea_netinfer")

MANIFEST = "manifest.json"
RUN_CONFIG = "run.cfg"
TRAIN_FILE = "train.meas"

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3, 4

_HELP = {
    "generate": "simulate a spike train from a ground-truth network",
    "infer": "sample the connectivity posterior of a spike train",
    "split-infer": "two-level inference over regions of the array",
    "metrics": "graph metrics of each posterior sample",
    "compare": "compare an estimate with a ground truth or reference edges",
    "bench": "time sampler sweeps against array size",
}


# ---------------------------------------------------------------------------
# small io helpers
# ---------------------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: NaN and inf become null, numpy scalars become Python."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=1, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _output_digests(out):
    digests = {}
    for root, _, files in os.walk(out):
        for name in files:
            path = os.path.join(root, name)
            rel = os.path.relpath(path, out).replace(os.sep, "/")
            if rel in (MANIFEST, RUN_CONFIG):
                continue
            digests[rel] = _sha256(path)
    return dict(sorted(digests.items()))


def _require_file(path, what):
    if not os.path.exists(path):
        raise DataError(f"{what} not found: {path}")


def _write_summary(chain, directory, interval):
    os.makedirs(directory, exist_ok=True)
    s = summarize_chain(chain, interval)
    save_matrix(s.edge_prob, os.path.join(directory, "edge_prob.csv"))
    save_matrix(s.mean_weight, os.path.join(directory, "mean_weight.csv"))
    save_matrix(s.weight_lower, os.path.join(directory, "weight_lower.csv"))
    save_matrix(s.weight_upper, os.path.join(directory, "weight_upper.csv"))
    return s


def read_reference_edges(path):
    """Edge list CSV, one ``m,n`` per line; a header and ``#`` comments are skipped."""
    _require_file(path, "reference edge file")
    edges = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                m, n = (int(v) for v in row[:2])
            except ValueError:
                if lineno == 1:
                    continue
                raise DataError(f"{path}:{lineno}: expected two electrode indices, got {row}") from None
            edges.append((m, n))
    return edges


def load_estimate(path):
    """Edge probabilities and weights from a chain, summary or network directory."""
    if not os.path.isdir(path):
        raise DataError(f"estimate directory not found: {path}")
    if os.path.exists(os.path.join(path, "chain.jsonl")):
        s = summarize_chain(read_chain(path))
        return s.edge_prob, s.mean_weight
    if os.path.exists(os.path.join(path, "edge_prob.csv")):
        return (load_matrix(os.path.join(path, "edge_prob.csv")),
                load_matrix(os.path.join(path, "mean_weight.csv")))
    if os.path.exists(os.path.join(path, "adjacency.csv")):
        net = load_network(path)
        return net.adjacency.astype(float), net.effective_weights
    raise DataError(f"{path} holds no chain.jsonl, edge_prob.csv or adjacency.csv")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate(cfg, out):
    hp = cfg.hyperparams()
    report = {}
    if cfg["truth_dir"]:
        net = load_network(cfg["truth_dir"])
        if cfg["n"] is not None and cfg["n"] != net.n_electrodes:
            raise DataError(f"n = {cfg['n']} but the truth in {cfg['truth_dir']} "
                            f"has {net.n_electrodes} electrodes")
    else:
        cfg.require("n")
        n = cfg["n"]
        if n < 1:
            raise ConfigError("n must be at least 1")
        if cfg["network"] == "signed":
            kw = dict(density=cfg["density"], weight=cfg["weight"], bias=cfg["truth_bias"],
                      self_weight=cfg["self_weight"])
            if cfg["stable"]:
                net, used = stable_network(n, cfg["seed"], hp=hp, **kw)
            else:
                net, used = random_network(n, cfg["seed"], **kw), cfg["seed"]
            report["truth_seed"] = used
        elif cfg["network"] == "prior":
            net = prior_network(n, hp, cfg["seed"], allow_self_edges=cfg["allow_self_edges"])
        else:
            raise ConfigError(f"network must be 'signed' or 'prior', got {cfg['network']!r}")
    n = net.n_electrodes
    if cfg["geometry"] == "grid":
        geometry = default_geometry(n)
    elif cfg["geometry"] == "line":
        geometry = np.column_stack([np.zeros(n), np.arange(n, dtype=float)])
    else:
        raise ConfigError(f"geometry must be 'grid' or 'line', got {cfg['geometry']!r}")
    if cfg["bins"] < 1:
        raise ConfigError("bins must be at least 1")

    train = simulate_spike_train(net, cfg["bins"], hp, seed=cfg["seed"], bin_ms=cfg["bin_ms"],
                                 geometry=geometry)
    save_network(net, os.path.join(out, "truth"))
    save_spike_train(train, os.path.join(out, TRAIN_FILE))
    report["n_electrodes"] = n
    report["firing_rates"] = train.data.mean(axis=0)
    logger.info("generated %d bins x %d electrodes, mean rate %.4f",
                train.n_bins, n, float(train.data.mean()))
    return report


def cmd_infer(cfg, out):
    cfg.require("train")
    hp, sc = cfg.hyperparams(), cfg.sampler_config()
    _require_file(cfg["train"], "spike train")
    train = load_spike_train(cfg["train"])
    chain = _run_chain(train, hp, sc)
    write_chain(chain, os.path.join(out, "chain"))
    _write_summary(chain, os.path.join(out, "summary"), cfg["interval"])
    return {"n_electrodes": train.n_electrodes, "n_samples": len(chain)}


def _run_chain(train, hp, sc):
    def progress(it, ll):
        if (it + 1) % 100 == 0 or it + 1 == sc.n_iterations:
            logger.info("sweep %d/%d loglik %.2f", it + 1, sc.n_iterations, ll)

    return run_gibbs(train, hp, sc, progress=progress)


def _layout_from_config(cfg, train):
    given = [k for k in ("layout", "grid_split", "regions") if cfg[k] is not None]
    if not given:
        raise ConfigError("split-infer needs one of --layout, --grid-split or --regions")
    if len(given) > 1:
        raise ConfigError(f"give only one of layout, grid_split, regions (got {', '.join(given)})")
    agg = cfg["aggregation"]
    if agg != ANY_SPIKE:
        try:
            agg = float(agg)
        except ValueError:
            raise ConfigError(f"aggregation must be 'any-spike' or a number, got {agg!r}") from None
    if cfg["layout"]:
        _require_file(cfg["layout"], "layout file")
        layout = RegionLayout.load(cfg["layout"])
        layout.validate(train.n_electrodes)
        return layout
    if cfg["grid_split"]:
        kr, kc = parse_grid_split(cfg["grid_split"])
        return plan_split(train.geometry, kr * kc, cfg["overlap"], grid_shape=(kr, kc), aggregation=agg)
    return plan_split(train.geometry, cfg["regions"], cfg["overlap"], aggregation=agg)


def cmd_split_infer(cfg, out):
    cfg.require("train")
    hp, sc = cfg.hyperparams(), cfg.sampler_config()
    _require_file(cfg["train"], "spike train")
    train = load_spike_train(cfg["train"])
    layout = _layout_from_config(cfg, train)
    layout.save(os.path.join(out, "layout.json"))
    k = layout.k_regions
    jobs = min(cfg["threads"], k)
    sc = replace(sc, parallel_width=max(1, cfg["threads"] // jobs))
    logger.info("split into %d regions of sizes %s", k, [len(r) for r in layout.regions])
    res = infer_hierarchical(train, layout, hp, sc, jobs=jobs, regional=cfg["regional"])
    for r, chain in enumerate(res.region_chains):
        base = os.path.join(out, f"region_{r}")
        write_chain(chain, os.path.join(base, "chain"))
        _write_summary(chain, os.path.join(base, "summary"), cfg["interval"])
    if res.regional_chain is not None:
        write_chain(res.regional_chain, os.path.join(out, "regional", "chain"))
        _write_summary(res.regional_chain, os.path.join(out, "regional", "summary"), cfg["interval"])
    merged = merge_region_posteriors(res.region_chains, layout, train.ids)
    mdir = os.path.join(out, "merged")
    os.makedirs(mdir, exist_ok=True)
    save_matrix(merged.edge_prob, os.path.join(mdir, "edge_prob.csv"))
    save_matrix(merged.mean_weight, os.path.join(mdir, "mean_weight.csv"))
    save_matrix(merged.coverage, os.path.join(mdir, "coverage.csv"))
    return {"k_regions": k, "region_sizes": [len(r) for r in layout.regions],
            "region_seeds": res.region_seeds, "overlap_pairs": len(layout.overlap_pairs)}


def _interval(values, mass):
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"mean": None, "lower": None, "upper": None}
    tail = (1 - mass) / 2
    lo, hi = np.quantile(v, [tail, 1 - tail])
    return {"mean": float(v.mean()), "lower": float(lo), "upper": float(hi)}


def cmd_metrics(cfg, out):
    cfg.require("chain")
    chain = read_chain(cfg["chain"])
    tw, ta = cfg["theta_w"], cfg["theta_a"]
    per_sample = posterior_metric_distribution(chain, tw, ta)
    write_metrics_csv(per_sample, os.path.join(out, "metrics.csv"))

    s = summarize_chain(chain, cfg["interval"])
    g = threshold_network(s.mean_weight, s.edge_prob, tw, ta)
    indeg, outdeg = degree_profile(g)
    with open(os.path.join(out, "degrees.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["electrode", "id", "in_degree", "out_degree"])
        for i, eid in enumerate(chain.electrode_ids):
            wr.writerow([i, eid, int(indeg[i]), int(outdeg[i])])

    summary = {
        "theta_w": tw,
        "theta_a": ta,
        "interval": cfg["interval"],
        "n_samples": len(chain),
        "metrics": {name: _interval([getattr(m, name) for m in per_sample], cfg["interval"])
                    for name in ("n_connections", "avg_clustering", "avg_path_length",
                                 "reachable_fraction")},
    }
    write_json(os.path.join(out, "metrics_summary.json"), summary)
    return {"n_samples": len(chain)}


def cmd_compare(cfg, out):
    cfg.require("estimate")
    if cfg["truth_dir"] is None and cfg["reference"] is None:
        raise ConfigError("compare needs --truth-dir, --reference or both")
    prob, weight = load_estimate(cfg["estimate"])
    tw, ta = cfg["theta_w"], cfg["theta_a"]
    result = {"estimate": cfg["estimate"], "theta_w": tw, "theta_a": ta}
    if cfg["truth_dir"]:
        truth = load_network(cfg["truth_dir"])
        if truth.n_electrodes != prob.shape[0]:
            raise DataError(f"estimate has {prob.shape[0]} electrodes, truth has {truth.n_electrodes}")
        # merged split estimates leave cross-region pairs unestimated (NaN)
        keep = np.isfinite(prob) & np.isfinite(weight)
        result["n_pairs_compared"] = int(keep.sum())
        result["cosine_A"] = cosine_similarity(prob[keep], truth.adjacency.astype(float)[keep])
        result["cosine_W"] = cosine_similarity(weight[keep], truth.effective_weights[keep])
    if cfg["reference"]:
        edges = read_reference_edges(cfg["reference"])
        g = threshold_network(np.nan_to_num(weight), np.nan_to_num(prob), tw, ta)
        rep = compare_to_reference(g, edges)
        result["detection"] = {
            "fraction_detected": rep.fraction_detected,
            "detected": [list(e) for e in rep.detected],
            "missed": [list(e) for e in rep.missed],
            "n_extra": rep.n_extra,
        }
    write_json(os.path.join(out, "compare.json"), result)
    return {k: result[k] for k in ("cosine_A", "cosine_W") if k in result}


def cmd_bench(cfg, out):
    try:
        sizes = [int(s) for s in cfg["sizes"].split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"sizes must be comma-separated integers, got {cfg['sizes']!r}") from None
    if not sizes or min(sizes) < 1:
        raise ConfigError("sizes must be positive")
    hp, sc = cfg.hyperparams(), cfg.sampler_config()
    res = run_benchmark(sizes, cfg["bins"], cfg["sweeps"], cfg["split_k"], hp, sc,
                        seed=cfg["seed"], log=logger.info)
    with open(os.path.join(out, "bench.csv"), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["n_electrodes", "sweep_seconds"])
        wr.writerows(res.rows())
    write_json(os.path.join(out, "bench.json"), {
        "sizes": res.sizes,
        "sweep_seconds": res.sweep_seconds,
        "slope": res.slope,
        "intercept": res.intercept,
        "split_k": res.split_k,
        "region_sweep_seconds": res.region_sweep_seconds,
        "split_ratio": res.split_ratio,
    })
    return {"slope": res.slope, "split_ratio": res.split_ratio}


COMMAND_FUNCS = {
    "generate": cmd_generate,
    "infer": cmd_infer,
    "split-infer": cmd_split_infer,
    "metrics": cmd_metrics,
    "compare": cmd_compare,
    "bench": cmd_bench,
}
# outputs whose content is wall-clock dependent
TIMING_OUTPUTS = {"bench": ["bench.csv", "bench.json"]}


def run_command(cfg):
    """Run one configured command and write its manifest. Returns the manifest."""
    cfg.require("out")
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    report = COMMAND_FUNCS[cfg.command](cfg, out)
    with open(os.path.join(out, RUN_CONFIG), "w") as fh:
        fh.write(cfg.to_text())
    manifest = {
        "tool": "mea-netinfer",
        "version": __version__,
        "command": cfg.command,
        "config": cfg.to_json(),
        "provenance": dict(sorted(cfg.provenance.items())),
        "outputs": _output_digests(out),
        "timing_outputs": TIMING_OUTPUTS.get(cfg.command, []),
        "report": report or {},
    }
    if cfg.command in ("generate", "infer", "split-infer", "bench"):
        manifest["hyperparameters"] = cfg.hyperparams().to_dict()
    write_json(os.path.join(out, MANIFEST), manifest)
    return manifest


def replay(manifest_path, out=None):
    """Re-run the command recorded in ``manifest_path``.

    Returns ``(manifest, mismatched)`` where ``mismatched`` lists outputs
    whose digest differs from the recorded one (timing outputs excepted).
    """
    _require_file(manifest_path, "manifest")
    with open(manifest_path) as fh:
        try:
            old = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{manifest_path}: {exc}") from None
    try:
        command, values = old["command"], dict(old["config"])
    except (KeyError, TypeError):
        raise DataError(f"{manifest_path} is not a run manifest") from None
    if out is not None:
        values["out"] = out
    cfg = RunConfig.build(command, flag_values=values)
    cfg.provenance = {k: f"manifest:{os.path.abspath(manifest_path)}" for k in cfg.values}
    if out is not None:
        cfg.provenance["out"] = "flag"
    new = run_command(cfg)
    skip = set(old.get("timing_outputs", []))
    names = set(old["outputs"]) | set(new["outputs"])
    mismatched = sorted(n for n in names if n not in skip
                        and old["outputs"].get(n) != new["outputs"].get(n))
    return new, mismatched


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="mea-netinfer",
        description="Bayesian functional connectivity inference for MEA spike trains.",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd, help=_HELP[cmd], description=_HELP[cmd],
                            argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", metavar="FILE", help="flat key = value config file")
        for key in keys_for(cmd):
            default = "unset" if key.default is None else key.default
            if key.parse is parse_bool:
                sp.add_argument(key.flag, dest=key.name, action=argparse.BooleanOptionalAction,
                                help=f"{key.help} (default {default})")
            else:
                sp.add_argument(key.flag, dest=key.name, metavar=key.name.upper(),
                                help=f"{key.help} (default {default})")
    rp = sub.add_parser("replay", help="re-run a command from its manifest and verify outputs")
    rp.add_argument("manifest", help="manifest.json of an earlier run")
    rp.add_argument("--out", help="output directory for the replay (default: a replay/ subdirectory)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            out = args.out or os.path.join(os.path.dirname(os.path.abspath(args.manifest)), "replay")
            _, mismatched = replay(args.manifest, out)
            if mismatched:
                print("replay differs in: " + ", ".join(mismatched), file=sys.stderr)
                return EXIT_MISMATCH
            print(f"replay identical ({out})")
            return EXIT_OK
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
        file_values = read_config_file(args.config) if getattr(args, "config", None) else {}
        cfg = RunConfig.build(args.command, file_values, flags,
                              config_path=getattr(args, "config", None))
        manifest = run_command(cfg)
        for k, v in manifest["report"].items():
            if not isinstance(v, (list, dict)):
                print(f"{k}: {v}")
        print(f"wrote {len(manifest['outputs'])} files to {cfg['out']}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
