import json
import os
import subprocess
import sys

import numpy as np
import pytest

from mea_netinfer import cli
from mea_netinfer.config import RunConfig, parse_config_text
from mea_netinfer.errors import ConfigError
from mea_netinfer.model import NetworkSample, load_matrix, save_network
from mea_netinfer.sampler import read_chain
from mea_netinfer.spikedata import load_spike_train

FAST = ["--iterations", "10", "--burn-in", "5"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def manifest(out):
    with open(os.path.join(out, "manifest.json")) as fh:
        return json.load(fh)


@pytest.fixture(scope="module")
def generated(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    assert run("generate", "--n", 4, "--bins", 6000, "--seed", 7, "--out", out) == 0
    return out


# -- generate -------------------------------------------------------------------

def test_generate_writes_truth_and_train(generated):
    files = sorted(manifest(generated)["outputs"])
    assert files == ["train.meas", "truth/adjacency.csv", "truth/bias.csv", "truth/weights.csv"]
    assert load_spike_train(generated / "train.meas").data.shape == (6000, 4)


def test_generate_echoes_default_hyperparameters(generated):
    hp = manifest(generated)["hyperparameters"]
    assert hp["window_bins"] == 100 and hp["mu_w"] == 1.0 and hp["S_b"] == 1.0
    assert manifest(generated)["config"]["seed"] == 7


def test_generate_from_truth_dir_half_fill(tmp_path):
    save_network(NetworkSample(np.zeros((3, 3), np.int8), np.zeros((3, 3)), np.zeros(3)), tmp_path / "t")
    assert run("generate", "--truth-dir", tmp_path / "t", "--bins", 20000, "--out", tmp_path / "o") == 0
    rate = load_spike_train(tmp_path / "o" / "train.meas").data.mean()
    assert abs(rate - 0.5) < 3 * np.sqrt(0.25 / 60000)


def test_generate_is_bit_identical(tmp_path):
    for d in ("a", "b"):
        assert run("generate", "--n", 3, "--bins", 500, "--seed", 2, "--out", tmp_path / d) == 0
    assert manifest(tmp_path / "a")["outputs"] == manifest(tmp_path / "b")["outputs"]


# -- infer ------------------------------------------------------------------------

def test_infer_defaults_retain_500_samples(tmp_path):
    run("generate", "--n", 2, "--bins", 60, "--seed", 1, "--out", tmp_path / "g")
    assert run("infer", "--train", tmp_path / "g" / "train.meas", "--out", tmp_path / "i") == 0
    m = manifest(tmp_path / "i")
    assert m["config"]["iterations"] == 1000 and m["config"]["burn_in"] == 500
    assert len(read_chain(tmp_path / "i" / "chain")) == 500
    for name in ("edge_prob", "mean_weight", "weight_lower", "weight_upper"):
        assert load_matrix(tmp_path / "i" / "summary" / f"{name}.csv").shape == (2, 2)


def test_infer_same_seed_byte_identical(generated, tmp_path):
    for d in ("a", "b"):
        assert run("infer", "--train", generated / "train.meas", "--seed", 7, *FAST, "--out", tmp_path / d) == 0
    for f in ("chain/chain.jsonl", "chain/chain_meta.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_infer_then_compare_and_metrics(generated, tmp_path):
    inf = tmp_path / "inf"
    assert run("infer", "--train", generated / "train.meas", *FAST, "--out", inf) == 0
    assert run("compare", "--estimate", inf / "chain", "--truth-dir", generated / "truth",
               "--out", tmp_path / "cmp") == 0
    res = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert -1 <= res["cosine_A"] <= 1 and res["n_pairs_compared"] == 16
    assert run("metrics", "--chain", inf / "chain", "--out", tmp_path / "met") == 0
    summ = json.loads((tmp_path / "met" / "metrics_summary.json").read_text())
    assert summ["theta_w"] == 0.05 and summ["theta_a"] == 0.5 and summ["n_samples"] == 5
    lines = (tmp_path / "met" / "metrics.csv").read_text().splitlines()
    assert lines[0] == "sample,n_connections,avg_clustering,avg_path_length,reachable_fraction"
    assert len(lines) == 6


def test_compare_identical_matrices(generated, tmp_path):
    ref = tmp_path / "ref.csv"
    ref.write_text("m,n\n0,1\n")
    assert run("compare", "--estimate", generated / "truth", "--truth-dir", generated / "truth",
               "--reference", ref, "--out", tmp_path / "c") == 0
    res = json.loads((tmp_path / "c" / "compare.json").read_text())
    assert res["cosine_A"] == pytest.approx(1.0) and res["cosine_W"] == pytest.approx(1.0)
    assert "detection" in res


# -- split-infer -------------------------------------------------------------------

@pytest.fixture(scope="module")
def grid_train(tmp_path_factory):
    out = tmp_path_factory.mktemp("grid")
    assert run("generate", "--n", 120, "--bins", 300, "--density", 0.02, "--out", out) == 0
    return out / "train.meas"


def test_split_grid_gives_four_regions(grid_train, tmp_path):
    out = tmp_path / "s"
    assert run("split-infer", "--train", grid_train, "--grid-split", "2x2",
               "--iterations", 3, "--burn-in", 1, "--out", out) == 0
    regions = sorted(p.name for p in out.iterdir() if p.name.startswith("region_"))
    assert regions == ["region_0", "region_1", "region_2", "region_3"]
    assert (out / "regional" / "chain" / "chain.jsonl").exists()
    prob = load_matrix(out / "merged" / "edge_prob.csv")
    assert prob.shape == (120, 120) and np.isnan(prob).sum() == 120 * 120 - 4 * 30 * 30


def test_split_overlap_layout_lists_shared_electrodes(grid_train, tmp_path):
    out = tmp_path / "o"
    assert run("split-infer", "--train", grid_train, "--grid-split", "2x2", "--overlap", 4,
               "--iterations", 2, "--burn-in", 1, "--no-regional", "--out", out) == 0
    lay = json.loads((out / "layout.json").read_text())
    assert len(lay["overlap_pairs"]) == 4
    assert all(len(shared) == 4 for _, _, shared in lay["overlap_pairs"])
    assert not (out / "regional").exists()


def test_split_with_one_region_matches_infer(generated, tmp_path):
    common = ["--train", generated / "train.meas", "--seed", 3, *FAST]
    assert run("infer", *common, "--out", tmp_path / "i") == 0
    assert run("split-infer", *common, "--regions", 1, "--no-regional", "--out", tmp_path / "s") == 0
    a = (tmp_path / "i" / "chain" / "chain.jsonl").read_bytes()
    b = (tmp_path / "s" / "region_0" / "chain" / "chain.jsonl").read_bytes()
    assert a == b
    for name in ("edge_prob", "mean_weight"):
        assert ((tmp_path / "i" / "summary" / f"{name}.csv").read_bytes()
                == (tmp_path / "s" / "merged" / f"{name}.csv").read_bytes())


def test_split_needs_layout(generated, tmp_path):
    assert run("split-infer", "--train", generated / "train.meas", "--out", tmp_path) == 2


# -- bench ------------------------------------------------------------------------------

def test_bench_reports_slope(tmp_path):
    assert run("bench", "--sizes", "4,8", "--bins", 200, "--sweeps", 2, "--split-k", 2,
               "--out", tmp_path) == 0
    rep = json.loads((tmp_path / "bench.json").read_text())
    assert isinstance(rep["slope"], float) and len(rep["sweep_seconds"]) == 2
    assert manifest(tmp_path)["timing_outputs"] == ["bench.csv", "bench.json"]


# -- configuration -------------------------------------------------------------------------

def test_unknown_config_key_is_rejected(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 4\nfrobnicate = 1\n")
    assert run("generate", "--config", cfg, "--out", tmp_path) == 2
    with pytest.raises(ConfigError, match="frobnicate"):
        RunConfig.build("generate", {"frobnicate": "1"})


def test_config_file_syntax_errors():
    with pytest.raises(ConfigError):
        parse_config_text("n 4\n")
    with pytest.raises(ConfigError):
        parse_config_text("n = 4\nn = 5\n")
    assert parse_config_text("# c\n\nn = 4  \n") == {"n": "4"}


def test_bad_values_are_config_errors(tmp_path):
    assert run("generate", "--n", "four", "--out", tmp_path) == 2
    assert run("infer", "--train", "x", "--burn-in", 2000, "--out", tmp_path) == 2


def test_missing_input_is_data_error(tmp_path, capsys):
    assert run("infer", "--train", tmp_path / "nope.meas", "--out", tmp_path / "o") == 3
    assert "nope.meas" in capsys.readouterr().err


def test_precedence_and_provenance(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("n = 3\nbins = 50\nseed = 4\n")
    assert run("generate", "--config", cfgfile, "--seed", 9, "--out", tmp_path / "o") == 0
    m = manifest(tmp_path / "o")
    assert m["config"]["seed"] == 9 and m["config"]["bins"] == 50 and m["config"]["rho"] == 0.5
    assert m["provenance"]["seed"] == "flag"
    assert m["provenance"]["bins"].startswith("file:")
    assert m["provenance"]["rho"] == "default"
    # the written run.cfg reproduces the run on its own
    assert run("generate", "--config", tmp_path / "o" / "run.cfg", "--out", tmp_path / "p") == 0
    assert manifest(tmp_path / "p")["outputs"] == m["outputs"]


# -- replay -------------------------------------------------------------------------------------

def test_replay_is_bit_identical(generated, tmp_path):
    inf = tmp_path / "inf"
    assert run("infer", "--train", generated / "train.meas", *FAST, "--threads", 3, "--out", inf) == 0
    assert run("replay", inf / "manifest.json", "--out", tmp_path / "again") == 0
    assert manifest(tmp_path / "again")["outputs"] == manifest(inf)["outputs"]


def test_replay_detects_changed_outputs(generated, tmp_path):
    inf = tmp_path / "inf"
    assert run("infer", "--train", generated / "train.meas", *FAST, "--out", inf) == 0
    m = manifest(inf)
    m["outputs"]["chain/chain.jsonl"] = "0" * 64
    (inf / "manifest.json").write_text(json.dumps(m))
    assert run("replay", inf / "manifest.json", "--out", tmp_path / "again") == 1


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "mea_netinfer.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "mea-netinfer" in res.stdout
