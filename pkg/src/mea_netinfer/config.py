"""
Flat run configuration for the command-line tools.

A run configuration is a set of ``key = value`` settings merged from three
sources, later ones winning: built-in defaults, an optional config file and
command-line flags. The source of every value is kept so that a manifest can
say where each setting came from.

Config files are plain text, one ``key = value`` per line, ``#`` starting a
comment. Unknown keys are rejected.
"""
import os
from dataclasses import dataclass, field

from .errors import ConfigError
from .model import HyperParams
from .sampler import SamplerConfig

__all__ = ["Key", "KEYS", "RunConfig", "keys_for", "parse_config_text", "read_config_file"]

COMMANDS = ("generate", "infer", "split-infer", "metrics", "compare", "bench")
_MODEL_CMDS = ("generate", "infer", "split-infer", "bench")
_SAMPLER_CMDS = ("infer", "split-infer", "bench")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(text):
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in _TRUE:
        return True
    if t in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_optional_float(text):
    if text is None or str(text).strip().lower() in ("none", ""):
        return None
    return float(text)


@dataclass(frozen=True)
class Key:
    name: str
    parse: object
    default: object
    commands: tuple
    help: str = ""
    path: bool = False

    @property
    def flag(self):
        return "--" + self.name.replace("_", "-")


_hp = HyperParams()
_sc = SamplerConfig()

KEYS = [
    Key("seed", int, 0, COMMANDS, "master random seed"),
    Key("out", str, None, COMMANDS, "output directory", path=True),
    Key("threads", int, 1, COMMANDS, "worker threads for per-electrode updates"),
    # model hyperparameters
    Key("rho", float, _hp.rho, _MODEL_CMDS, "prior edge probability"),
    Key("tau_ms", float, _hp.tau_ms, _MODEL_CMDS, "history kernel time constant (ms)"),
    Key("window_bins", int, _hp.window_bins, _MODEL_CMDS, "history window T in bins"),
    Key("mu_w", float, _hp.mu_w, _MODEL_CMDS, "prior weight mean"),
    Key("s_w", float, _hp.S_w, _MODEL_CMDS, "prior weight variance"),
    Key("mu_b", float, _hp.mu_b, _MODEL_CMDS, "prior bias mean"),
    Key("s_b", float, _hp.S_b, _MODEL_CMDS, "prior bias variance"),
    Key("niw_mean", float, _hp.niw_mean, _MODEL_CMDS, "hyperprior mean"),
    Key("niw_kappa", float, _hp.niw_kappa, _MODEL_CMDS, "hyperprior mean strength"),
    Key("niw_scale", float, _hp.niw_scale, _MODEL_CMDS, "hyperprior scale"),
    Key("niw_dof", float, _hp.niw_dof, _MODEL_CMDS, "hyperprior degrees of freedom"),
    # sampler
    Key("iterations", int, _sc.n_iterations, _SAMPLER_CMDS, "Gibbs sweeps"),
    Key("burn_in", int, _sc.burn_in, _SAMPLER_CMDS, "sweeps discarded before retaining samples"),
    Key("thin", int, _sc.thin, _SAMPLER_CMDS, "keep every thin-th sweep after burn-in"),
    Key("resample_hypers", parse_bool, _sc.resample_hypers, _SAMPLER_CMDS,
        "resample weight/bias prior moments each sweep"),
    Key("allow_self_edges", parse_bool, _sc.allow_self_edges, _SAMPLER_CMDS + ("generate",),
        "permit m -> m edges"),
    Key("scan", str, _sc.scan, _SAMPLER_CMDS, "edge visiting order: systematic or random"),
    Key("pg_method", str, _sc.pg_method, _SAMPLER_CMDS, "Polya-Gamma sampler: exact or truncated"),
    Key("interval", float, 0.95, ("infer", "split-infer", "metrics"), "central posterior interval mass"),
    # generate
    Key("n", int, None, ("generate",), "number of electrodes"),
    Key("bins", int, 60000, ("generate", "bench"), "number of time bins"),
    Key("bin_ms", float, 1.0, ("generate",), "bin width (ms)"),
    Key("truth_dir", str, None, ("generate", "compare"), "network CSV directory", path=True),
    Key("network", str, "signed", ("generate",), "ground truth kind: signed or prior"),
    Key("density", float, 0.3, ("generate",), "edge density of a signed truth"),
    Key("weight", float, 1.0, ("generate",), "edge magnitude of a signed truth"),
    Key("truth_bias", float, -3.0, ("generate",), "bias of a signed truth"),
    Key("self_weight", parse_optional_float, -1.0, ("generate",),
        "self-edge weight of a signed truth, or none"),
    Key("stable", parse_bool, True, ("generate",), "redraw signed truths until firing rates are moderate"),
    Key("geometry", str, "grid", ("generate",), "electrode layout: grid or line"),
    # inference inputs
    Key("train", str, None, ("infer", "split-infer"), "MEASPIKES spike train file", path=True),
    Key("layout", str, None, ("split-infer",), "region layout JSON file", path=True),
    Key("grid_split", str, None, ("split-infer",), "regular split such as 2x2"),
    Key("regions", int, None, ("split-infer",), "number of regions (squarest grid)"),
    Key("overlap", int, 0, ("split-infer",), "electrodes shared by adjacent regions"),
    Key("aggregation", str, "any-spike", ("split-infer",), "any-spike or a mean threshold in (0, 1]"),
    Key("regional", parse_bool, True, ("split-infer",), "run the region-level inference"),
    # metrics / compare
    Key("chain", str, None, ("metrics",), "chain directory", path=True),
    Key("theta_w", float, 0.05, ("metrics", "compare"), "absolute weight threshold"),
    Key("theta_a", float, 0.5, ("metrics", "compare"), "edge probability threshold"),
    Key("estimate", str, None, ("compare",), "chain, summary or network directory", path=True),
    Key("reference", str, None, ("compare",), "CSV of reference edges m,n", path=True),
    # bench
    Key("sizes", str, "16,32,64,128", ("bench",), "comma-separated electrode counts"),
    Key("sweeps", int, 3, ("bench",), "timed sweeps per size"),
    Key("split_k", int, 4, ("bench",), "regions for the split timing at the largest size"),
]

_BY_NAME = {k.name: k for k in KEYS}


def keys_for(command):
    return [k for k in KEYS if command in k.commands]


def parse_config_text(text, origin="<config>"):
    """Parse flat ``key = value`` text into a dict of raw strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{lineno}: empty key")
        if key in out:
            raise ConfigError(f"{origin}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def read_config_file(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config_text(text, path)


def _format(value):
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    """Merged settings of one command with per-key provenance.

    ``provenance[key]`` is ``"default"``, ``"file:<path>"`` or ``"flag"``.
    """

    command: str
    values: dict
    provenance: dict = field(default_factory=dict)

    @classmethod
    def build(cls, command, file_values=None, flag_values=None, config_path=None):
        """Merge defaults < config file < flags for ``command``."""
        if command not in COMMANDS:
            raise ConfigError(f"unknown command {command!r}")
        allowed = {k.name: k for k in keys_for(command)}
        values, prov = {}, {}
        for k in allowed.values():
            values[k.name] = k.default
            prov[k.name] = "default"
        sources = [(file_values or {}, f"file:{config_path}"), (flag_values or {}, "flag")]
        for src, label in sources:
            for name, raw in src.items():
                if name not in allowed:
                    where = "config file" if label.startswith("file") else "flags"
                    hint = " (not used by this command)" if name in _BY_NAME else ""
                    raise ConfigError(f"unknown key {name!r} in {where}{hint}")
                key = allowed[name]
                try:
                    val = None if raw is None else key.parse(raw)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {name!r}: {raw!r} ({exc})") from None
                if key.path and val is not None:
                    val = os.path.abspath(val)
                values[name] = val
                prov[name] = label
        return cls(command, values, prov)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def require(self, *names):
        for name in names:
            if self.values.get(name) is None:
                raise ConfigError(f"missing required setting {name!r} "
                                  f"(pass {_BY_NAME[name].flag} or set it in the config file)")

    def hyperparams(self):
        v = self.values
        try:
            return HyperParams(
                rho=v["rho"], tau_ms=v["tau_ms"], window_bins=v["window_bins"],
                mu_w=v["mu_w"], S_w=v["s_w"], mu_b=v["mu_b"], S_b=v["s_b"],
                niw_mean=v["niw_mean"], niw_kappa=v["niw_kappa"],
                niw_scale=v["niw_scale"], niw_dof=v["niw_dof"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def sampler_config(self):
        v = self.values
        return SamplerConfig(
            n_iterations=v["iterations"], burn_in=v["burn_in"], seed=v["seed"],
            resample_hypers=v["resample_hypers"], allow_self_edges=v["allow_self_edges"],
            parallel_width=v["threads"], thin=v["thin"], scan=v["scan"], pg_method=v["pg_method"],
        )

    def to_text(self):
        """Flat config text that reproduces this run."""
        lines = [f"# mea-netinfer {self.command}"]
        for k, v in sorted(self.values.items()):
            # unset optional keys are omitted; an explicit none is kept
            if v is not None or _BY_NAME[k].default is not None:
                lines.append(f"{k} = {_format(v)}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return {k: self.values[k] for k in sorted(self.values)}
