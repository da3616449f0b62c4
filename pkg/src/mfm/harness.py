"""Experiment configuration, data loading, chain execution and output files.

Configs are INI files read with :mod:`configparser`.  Every key is typed and
unknown sections or keys are rejected.  Example::

    [dataset]
    source = galaxy

    [model]
    family = richardson_green

    [prior]
    kind = MFM
    pk = uniform(1, 30)

    [schedule]
    burnin = 5000
    iters = 45000
    thin_full = 50

    [run]
    seed = 1
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .models import (
    DiagonalGaussianModel,
    MvnIndepWishartModel,
    NumericalError,
    RichardsonGreenModel,
    synth3_logpdf,
    synth_three_component,
)
from .partitions import (
    Geometric,
    PoissonShifted,
    PriorConfig,
    TablePk,
    UniformRange,
    build_vn_table,
    k_posterior_from_t,
)
from .processes import rng_stream
from .samplers import ConfigurationError, SamplerSchedule, run_chain
from .summaries import (
    cocluster_matrix,
    exact_posterior_enum,
    hellinger,
    make_grid,
    predictive_density,
    t_pmf_from_trace,
)

log = logging.getLogger("mfm")

GALAXY_SHA256 = "f07e4c914a5500235c57ee398898ffd8220ea440b00f965d6d39bd1f8c62925c"


class LoadError(ValueError):
    pass


# ---------------------------------------------------------------------------
# data


def galaxy():
    """The 82 galaxy velocities (km/s) as a column vector."""
    raw = resources.files("mfm.data").joinpath("galaxy.csv").read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    if digest != GALAXY_SHA256:
        raise LoadError(f"galaxy.csv digest {digest} does not match the pinned value")
    lines = raw.decode("utf-8").split()
    return np.array([float(v) for v in lines[1:]])[:, None]


def preprocess(x, log2=False, standardize=False):
    """Optional base-2 log, then per-column standardization (population variance)."""
    x = np.asarray(x, dtype=float)
    if log2:
        bad = np.argwhere(x <= 0)
        if len(bad):
            r, c = bad[0]
            raise LoadError(f"row {r + 1}, column {c + 1}: value {x[r, c]} is not positive (log2 requested)")
        x = np.log2(x)
    if standardize:
        sd = x.std(axis=0)
        sd[sd == 0] = 1.0
        x = (x - x.mean(axis=0)) / sd
    return x


def load_csv(path, log2=False, standardize=False):
    """Read a header + numeric-body CSV into an (n, d) array.

    Errors name the 1-based data row and column of the offending cell.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise LoadError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    d = len(header)
    data = np.empty((len(body), d))
    for i, row in enumerate(body, start=1):
        if len(row) != d:
            raise LoadError(f"{path}: row {i} has {len(row)} fields, expected {d}")
        for j, cell in enumerate(row):
            try:
                data[i - 1, j] = float(cell)
            except ValueError:
                raise LoadError(f"{path}: row {i}, column {j + 1} ({header[j]!r}): {cell!r} is not numeric") from None
            if not math.isfinite(data[i - 1, j]):
                raise LoadError(f"{path}: row {i}, column {j + 1} ({header[j]!r}): {cell!r} is not finite")
    try:
        return preprocess(data, log2=log2, standardize=standardize)
    except LoadError as e:
        raise LoadError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# config


_PK_RE = re.compile(r"^\s*(\w+)\s*\(([^)]*)\)\s*$")


def parse_pk(text):
    """'geometric(0.1)', 'poisson(1)', 'uniform(1, 30)' or 'table(0.2, 0.8)'."""
    m = _PK_RE.match(text)
    if not m:
        raise ConfigurationError(f"cannot parse pk {text!r}")
    name, args = m.group(1).lower(), [a.strip() for a in m.group(2).split(",") if a.strip()]
    try:
        if name == "geometric" and len(args) == 1:
            return Geometric(float(args[0]))
        if name == "poisson" and len(args) == 1:
            return PoissonShifted(float(args[0]))
        if name == "uniform" and len(args) == 2:
            return UniformRange(int(args[0]), int(args[1]))
        if name == "table" and args:
            return TablePk(tuple(float(a) for a in args))
    except ValueError as e:
        raise ConfigurationError(f"pk {text!r}: {e}") from None
    raise ConfigurationError(f"unknown pk family or arity: {text!r}")


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


# section -> key -> (parser, default)
SCHEMA = {
    "dataset": {
        "source": (str, "galaxy"),
        "path": (str, ""),
        "n": (int, 250),
        "seed": (int, None),
    },
    "preprocess": {"log2": (_bool, False), "standardize": (_bool, False)},
    "model": {
        "family": (str, None),
        "a": (_opt_float, None),
        "b": (_opt_float, None),
        "c": (_opt_float, None),
        "a0": (_opt_float, None),
        "b0": (_opt_float, None),
        "mu0": (_opt_float, None),
        "sigma0": (_opt_float, None),
    },
    "prior": {
        "kind": (str, "MFM"),
        "gamma": (float, 1.0),
        "pk": (str, "geometric(0.1)"),
        "alpha": (float, 1.0),
        "alpha_prior": (str, "none"),
    },
    "schedule": {
        "split_scans": (int, 5),
        "sm_moves": (int, 1),
        "gibbs_scans": (int, 1),
        "merge_scans": (int, 5),
        "burnin": (int, 0),
        "iters": (int, 1000),
        "thin_full": (int, 100),
        "aux_m": (int, 1),
        "alpha_step": (float, 0.5),
    },
    "output": {
        "dir": (str, "out"),
        "grid_cells": (int, 512),
        "density_mode": (str, "existing_cluster"),
        "mc_draws": (int, 200),
    },
    "run": {"seed": (int, 0)},
}

FAMILIES = ("richardson_green", "mvn_wishart", "diagonal_gaussian")
SOURCES = ("galaxy", "synth3", "csv")
FAMILY_KEYS = {
    "richardson_green": {"a", "a0", "b0", "mu0", "sigma0"},
    "mvn_wishart": set(),
    "diagonal_gaussian": {"a", "b", "c"},
}


@dataclass
class ExperimentConfig:
    dataset: dict
    preprocess: dict
    model: dict
    prior: dict
    schedule: dict
    output: dict
    run: dict
    base_dir: Path = field(default=Path("."), repr=False)

    def echo(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    @property
    def seed(self):
        return self.run["seed"]

    @property
    def data_seed(self):
        s = self.dataset["seed"]
        return self.seed if s is None else s

    def dataset_key(self):
        return (self.dataset["source"], self.dataset["path"], self.dataset["n"], self.data_seed,
                self.preprocess["log2"], self.preprocess["standardize"])


def parse_config(text, base_dir=".", overrides=None):
    """Parse INI text into a validated :class:`ExperimentConfig`."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"malformed config: {e}") from None
    values = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigurationError(f"unknown section [{sec}]")
    for sec, keys in SCHEMA.items():
        got = dict(cp[sec]) if cp.has_section(sec) else {}
        for k in got:
            if k not in keys:
                raise ConfigurationError(f"unknown key {k!r} in [{sec}]")
        out = {}
        for k, (conv, default) in keys.items():
            if k in got:
                try:
                    out[k] = conv(got[k])
                except ValueError as e:
                    raise ConfigurationError(f"[{sec}] {k}: {e}") from None
            else:
                out[k] = default
        values[sec] = out
    for (sec, k), v in (overrides or {}).items():
        values[sec][k] = v
    cfg = ExperimentConfig(**values, base_dir=Path(base_dir))
    validate_config(cfg)
    return cfg


def load_config(path, overrides=None):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from None
    return parse_config(text, base_dir=path.parent, overrides=overrides)


def validate_config(cfg):
    ds = cfg.dataset
    if ds["source"] not in SOURCES:
        raise ConfigurationError(f"dataset source must be one of {SOURCES}")
    if ds["source"] == "synth3" and ds["n"] < 1:
        raise ConfigurationError("synth3 needs n >= 1")
    if ds["source"] == "csv":
        if not ds["path"]:
            raise ConfigurationError("csv dataset needs a path")
        if not resolve_path(cfg, ds["path"]).is_file():
            raise ConfigurationError(f"dataset file not found: {ds['path']}")
    fam = cfg.model["family"]
    if fam is None:
        fam = cfg.model["family"] = "richardson_green" if ds["source"] == "galaxy" else (
            "mvn_wishart" if ds["source"] == "synth3" else "diagonal_gaussian")
    if fam not in FAMILIES:
        raise ConfigurationError(f"model family must be one of {FAMILIES}")
    given = {k for k, v in cfg.model.items() if v is not None and k != "family"}
    extra = given - FAMILY_KEYS[fam]
    if extra:
        raise ConfigurationError(f"{fam} does not take {sorted(extra)}")
    pr = cfg.prior
    pr["kind"] = pr["kind"].upper()
    if pr["kind"] not in ("MFM", "DPM"):
        raise ConfigurationError("prior kind must be MFM or DPM")
    if pr["alpha_prior"].lower() not in ("none", "exponential"):
        raise ConfigurationError("alpha_prior must be none or exponential")
    build_prior(cfg)
    try:
        SamplerSchedule(**cfg.schedule)
    except TypeError as e:
        raise ConfigurationError(str(e)) from None
    if cfg.output["density_mode"] not in ("existing_cluster", "full_predictive"):
        raise ConfigurationError("density_mode must be existing_cluster or full_predictive")
    if cfg.output["grid_cells"] < 2 or cfg.output["mc_draws"] < 1:
        raise ConfigurationError("grid_cells must be >= 2 and mc_draws >= 1")


def resolve_path(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else cfg.base_dir / p


def build_prior(cfg):
    pr = cfg.prior
    try:
        if pr["kind"] == "MFM":
            return PriorConfig.mfm(parse_pk(pr["pk"]), pr["gamma"])
        ap = pr["alpha_prior"].lower()
        return PriorConfig.dpm(pr["alpha"], None if ap == "none" else ap)
    except ValueError as e:
        if isinstance(e, ConfigurationError):
            raise
        raise ConfigurationError(f"[prior]: {e}") from None


def load_data(cfg):
    """Returns (x, true_labels or None)."""
    ds = cfg.dataset
    labels = None
    if ds["source"] == "galaxy":
        x = galaxy()
    elif ds["source"] == "synth3":
        x, labels = synth_three_component(ds["n"], rng_stream(cfg.data_seed, 0))
    else:
        x = load_csv(resolve_path(cfg, ds["path"]))
    x = preprocess(x, **cfg.preprocess)
    return x, labels


def build_model(cfg, x):
    m = {k: v for k, v in cfg.model.items() if v is not None and k != "family"}
    fam = cfg.model["family"]
    try:
        if fam == "richardson_green":
            if x.shape[1] != 1:
                raise ConfigurationError("richardson_green needs one-dimensional data")
            hi, lo = float(x.max()), float(x.min())
            mu0 = m.pop("mu0", (hi + lo) / 2)
            sigma0 = m.pop("sigma0", hi - lo)
            unused = set(m) - {"a", "a0", "b0"}
            if unused:
                raise ConfigurationError(f"richardson_green does not take {sorted(unused)}")
            return RichardsonGreenModel(mu0, sigma0, **m)
        if fam == "mvn_wishart":
            if m:
                raise ConfigurationError(f"mvn_wishart takes no hyperparameters, got {sorted(m)}")
            return MvnIndepWishartModel.from_data(x)
        unused = set(m) - {"a", "b", "c"}
        if unused:
            raise ConfigurationError(f"diagonal_gaussian does not take {sorted(unused)}")
        return DiagonalGaussianModel(x.shape[1], **m)
    except ConfigurationError:
        raise
    except ValueError as e:
        raise ConfigurationError(f"[model]: {e}") from None


# ---------------------------------------------------------------------------
# execution


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def run_experiment(cfg, stream=0):
    """Load data, run the chain, and compute summaries (no file output)."""
    x, labels = load_data(cfg)
    model = build_model(cfg, x)
    prior = build_prior(cfg)
    schedule = SamplerSchedule(**cfg.schedule)
    rng = rng_stream(cfg.seed, stream)
    holder = {}

    def keep(it, state):
        holder["state"] = state

    try:
        trace = run_chain(x, model, prior, schedule, rng, seed=(cfg.seed, stream), progress=keep)
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as e:
        raise RunFailure(str(e), holder.get("state")) from e
    res = {"x": x, "labels": labels, "model": model, "prior": prior, "trace": trace}
    n = len(x)
    if trace.size_history:
        t_pmf = t_pmf_from_trace(trace)
        res["t_pmf"] = t_pmf
        if prior.kind == "MFM":
            table = build_vn_table(n, int(np.flatnonzero(t_pmf)[-1]), prior)
            res["k_pmf"] = k_posterior_from_t(t_pmf, n, prior, table)
    if trace.full_states:
        res["cocluster"] = cocluster_matrix(trace)
        if x.shape[1] <= 2:
            grid = make_grid(x, cells=cfg.output["grid_cells"])
            dens = predictive_density(trace, grid, x, model, prior, mode=cfg.output["density_mode"],
                                      mc_draws=cfg.output["mc_draws"], rng=rng_stream(cfg.seed, stream + 1_000_000))
            res["density"] = dens
            if cfg.dataset["source"] == "synth3" and cfg.preprocess == {"log2": False, "standardize": False}:
                truth = grid.with_values(np.exp(synth3_logpdf(grid.points)))
                res["hellinger"] = hellinger(dens, truth)
    return res


class RunFailure(RuntimeError):
    def __init__(self, msg, state):
        super().__init__(msg)
        self.state = state


def write_outputs(res, cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    trace = res["trace"]
    if "t_pmf" in res:
        p = res["t_pmf"]
        _write_csv(out / "t_pmf.csv", ["t", "probability"], [(t, p[t]) for t in range(1, len(p))])
    else:
        _write_csv(out / "t_pmf.csv", ["t", "probability"], [])
    files.append("t_pmf.csv")
    if res["prior"].kind == "MFM":
        p = res.get("k_pmf", np.zeros(1))
        _write_csv(out / "k_pmf.csv", ["k", "probability"], [(k, p[k]) for k in range(1, len(p))])
        files.append("k_pmf.csv")
    if "cocluster" in res:
        cm = res["cocluster"]
        _write_csv(out / "cocluster.csv", [f"item{j + 1}" for j in range(len(cm))], cm.tolist())
        files.append("cocluster.csv")
    if "density" in res:
        g = res["density"]
        pts = g.points
        cols = ["x"] if g.d == 1 else ["x1", "x2"]
        _write_csv(out / "density.csv", cols + ["density"],
                   [tuple(pt) + (v,) for pt, v in zip(pts, g.values.ravel())])
        files.append("density.csv")
    hh = trace.hyper_history
    keys = sorted(k for k, v in hh.items() if v)
    rows = [(i + 1,) + tuple(hh[k][i] for k in keys) for i in range(len(trace.size_history))] if keys else []
    _write_csv(out / "hyper_trace.csv", ["iteration"] + keys, rows)
    files.append("hyper_trace.csv")
    _write_csv(out / "t_trace.csv", ["iteration", "t"], [(i + 1, len(s)) for i, s in enumerate(trace.size_history)])
    files.append("t_trace.csv")
    manifest = {
        "config": cfg.echo(),
        "version": __version__,
        "seconds_per_iteration": trace.seconds_per_iteration,
        "n": trace.n,
        "files": {f: _sha256(out / f) for f in files},
    }
    if "hellinger" in res:
        manifest["hellinger_to_truth"] = res["hellinger"]
    if "density" in res:
        manifest["density_coverage_warning"] = res["density"].coverage_warning
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def dump_state(state, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = {"error_state": None}
    if state is not None:
        payload = {
            "iteration": state.iteration,
            "z": state.z.tolist(),
            "sizes": list(state.sizes),
            "hyper": state.hyper,
            "params": None if state.params is None else [[np.asarray(q).tolist() for q in p] for p in state.params],
        }
    path = out / "state_dump.json"
    path.write_text(json.dumps(payload, default=float, indent=1), encoding="utf-8")
    return path


def run_and_write(cfg, out_dir, stream=0):
    try:
        res = run_experiment(cfg, stream=stream)
    except RunFailure as e:
        dump_state(e.state, out_dir)
        raise
    return write_outputs(res, cfg, out_dir)


def compare_results(resA, resB):
    """Rows of (quantity, index, value_A, value_B)."""
    rows = []
    for key, label in (("t_pmf", "t"), ("k_pmf", "k")):
        a, b = resA.get(key), resB.get(key)
        if a is None and b is None:
            continue
        m = max(len(a) if a is not None else 0, len(b) if b is not None else 0)
        for i in range(1, m):
            va = a[i] if a is not None and i < len(a) else (0.0 if a is not None else float("nan"))
            vb = b[i] if b is not None and i < len(b) else (0.0 if b is not None else float("nan"))
            rows.append((label, i, va, vb))
    if "hellinger" in resA or "hellinger" in resB:
        rows.append(("hellinger", resA["trace"].n, resA.get("hellinger", float("nan")), resB.get("hellinger", float("nan"))))
    return rows


def oracle(cfg):
    """Exact posterior over partitions for a small conjugate dataset."""
    x, _ = load_data(cfg)
    model = build_model(cfg, x)
    if not model.conjugate:
        raise ConfigurationError("the oracle needs a conjugate model (diagonal_gaussian)")
    if len(x) > 10:
        raise ConfigurationError(f"the oracle enumerates partitions only for n <= 10 (got {len(x)})")
    return exact_posterior_enum(x, model, build_prior(cfg))
