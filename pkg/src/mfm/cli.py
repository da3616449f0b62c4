"""Command line: ``mfm run|compare|validate|oracle <config>``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Set MFM_VERBOSITY to 0 (errors only), 1 (progress, default) or 2 (debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import harness
from .harness import RunFailure
from .samplers import ConfigurationError

log = logging.getLogger("mfm")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _setup_logging():
    level = {"0": logging.ERROR, "1": logging.INFO, "2": logging.DEBUG}.get(os.environ.get("MFM_VERBOSITY", "1"),
                                                                          logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)


def _overrides(args):
    ov = {}
    if getattr(args, "seed", None) is not None:
        ov[("run", "seed")] = args.seed
    if getattr(args, "out", None) is not None:
        ov[("output", "dir")] = args.out
    return ov


def _out_dir(cfg, args):
    return Path(args.out) if args.out is not None else harness.resolve_path(cfg, cfg.output["dir"])


def _run_one(cfg, out_dir, stream):
    return harness.run_and_write(cfg, out_dir, stream=stream)


def cmd_run(args):
    cfg = harness.load_config(args.config, _overrides(args))
    out = _out_dir(cfg, args)
    if args.replicates <= 1:
        manifest = _run_one(cfg, out, 0)
        log.info("wrote %d files to %s (%.3g s/iteration)", len(manifest["files"]), out,
                 manifest["seconds_per_iteration"])
        return EXIT_OK
    dirs = [out / f"rep{r:02d}" for r in range(args.replicates)]
    with ProcessPoolExecutor(max_workers=args.workers) as ex:
        futures = [ex.submit(_run_one, cfg, d, r) for r, d in enumerate(dirs)]
        for d, f in zip(dirs, futures):
            f.result()
            log.info("replicate finished: %s", d)
    return EXIT_OK


def cmd_validate(args):
    cfg = harness.load_config(args.config, _overrides(args))
    x, _ = harness.load_data(cfg)
    harness.build_model(cfg, x)
    print(json.dumps({"valid": True, "n": len(x), "d": x.shape[1], "config": cfg.echo()}, indent=2))
    return EXIT_OK


def cmd_oracle(args):
    cfg = harness.load_config(args.config, _overrides(args))
    labels, probs = harness.oracle(cfg)
    out = _out_dir(cfg, args)
    out.mkdir(parents=True, exist_ok=True)
    harness._write_csv(out / "oracle.csv", ["labels", "t", "probability"],
                       [("".join(str(c) for c in lab), int(lab.max()) + 1 if len(lab) else 0, p)
                        for lab, p in zip(labels, probs)])
    t = labels.max(axis=1) + 1 if labels.shape[1] else np.zeros(len(labels), dtype=int)
    t_pmf = np.bincount(t, weights=probs)
    harness._write_csv(out / "oracle_t_pmf.csv", ["t", "probability"], [(i, t_pmf[i]) for i in range(1, len(t_pmf))])
    log.info("enumerated %d partitions into %s", len(labels), out)
    return EXIT_OK


def cmd_compare(args):
    cfg_a = harness.load_config(args.config_a, _overrides(args))
    cfg_b = harness.load_config(args.config_b, _overrides(args))
    if cfg_a.dataset_key() != cfg_b.dataset_key():
        raise ConfigurationError("compare needs both configs to use the same dataset")
    out = _out_dir(cfg_a, args)
    out.mkdir(parents=True, exist_ok=True)
    res_a = harness.run_experiment(cfg_a)
    res_b = harness.run_experiment(cfg_b)
    harness._write_csv(out / "compare.csv", ["quantity", "index", "A", "B"], harness.compare_results(res_a, res_b))
    if args.sweep_n:
        if cfg_a.dataset["source"] != "synth3":
            raise ConfigurationError("a Hellinger sweep needs the synth3 dataset")
        rows = []
        for n in args.sweep_n:
            for s in range(args.sweep_seeds):
                ha, hb = [
                    harness.run_experiment(_with(c, n, cfg_a.data_seed + s)).get("hellinger", float("nan"))
                    for c in (cfg_a, cfg_b)
                ]
                rows.append((n, s, ha, hb))
                log.info("n=%d seed=%d hellinger A=%.4f B=%.4f", n, s, ha, hb)
        harness._write_csv(out / "hellinger_sweep.csv", ["n", "seed", "A", "B"], rows)
    log.info("comparison written to %s", out)
    return EXIT_OK


def _with(cfg, n, seed):
    import copy

    c = copy.deepcopy(cfg)
    c.dataset["n"] = n
    c.dataset["seed"] = seed
    c.run["seed"] = seed
    return c


def build_parser():
    p = argparse.ArgumentParser(prog="mfm", description="MFM and DPM mixture inference")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--out", default=None, help="override [output] dir")

    r = sub.add_parser("run", help="run one chain and write summaries")
    r.add_argument("config")
    r.add_argument("--replicates", type=int, default=1, help="independent chains, one RNG stream each")
    r.add_argument("--workers", type=int, default=None)
    common(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="run two configs on the same data side by side")
    c.add_argument("config_a")
    c.add_argument("config_b")
    c.add_argument("--sweep-n", type=lambda s: [int(v) for v in s.split(",")], default=None,
                   help="comma-separated synth3 sizes for a Hellinger sweep")
    c.add_argument("--sweep-seeds", type=int, default=5)
    common(c)
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("validate", help="check a config and its dataset")
    v.add_argument("config")
    common(v)
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="exact posterior over partitions (n <= 10)")
    o.add_argument("config")
    common(o)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, harness.LoadError) as e:
        log.error("configuration error: %s", e)
        return EXIT_CONFIG
    except RunFailure as e:
        log.error("numerical failure: %s", e)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
