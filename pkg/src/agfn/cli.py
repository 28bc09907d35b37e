"""Command-line harness: ``agfn {train,eval,gradcheck,oracle-compare,sweep,corrupt}``.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import data as D
from .harness import ConfigError, build_datasets, default_output_root, evaluate_run, load_config, run_training
from .model import CheckpointError, init_params, load_checkpoint
from .numerics import rng_stream
from .optim import NumericalError
from .validation import compare_to_oracle, run_gradcheck_suite

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("agfn")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(args) -> dict:
    out = {}
    if getattr(args, "seed", None) is not None:
        out["train.seed"] = args.seed
    if getattr(args, "eval_mode", None) is not None:
        out["train.eval_mode"] = args.eval_mode
    return out


def _out_dir(args, cfg) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.run.out_dir:
        return Path(cfg.run.out_dir)
    return default_output_root() / cfg.run.run_id


def cmd_train(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    out = _out_dir(args, cfg)
    try:
        result = run_training(cfg, out_dir=out, log=lambda r: log.info(
            "epoch %d  %s  loss=%.4f  acc=%.4f  density=%.3f  alpha=%.4f  beta=%.4f", r["epoch"], r["policy"],
            r["train_loss"], r["test_accuracy"], r["edge_density"], r["alpha"], r["beta"]))
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"run={cfg.run.run_id} epochs={cfg.train.epochs} test_accuracy={result.test_accuracy:.6f} "
          f"test_loss={result.test_loss:.6f} checkpoint={out / 'checkpoint.npz'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    params, _ = load_checkpoint(args.checkpoint)
    _, test = build_datasets(cfg)
    if params.input_dim != test.inputs.shape[1] or params.n_classes != test.n_classes:
        print(f"checkpoint expects {params.input_dim} inputs / {params.n_classes} classes, dataset has "
              f"{test.inputs.shape[1]} / {test.n_classes}", file=sys.stderr)
        return EXIT_VALIDATION
    acc, loss = evaluate_run(cfg, params, test)
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    rec = {
        "run_id": cfg.run.run_id,
        "epoch": cfg.train.epochs - 1,
        "eval_mode": cfg.train.eval_mode,
        "eval_seed": cfg.train.eval_seed,
        "test_accuracy": acc,
        "test_loss": loss,
        "alpha": params.scale.alpha,
        "beta": params.scale.beta,
    }
    with (out / "eval.jsonl").open("a") as f:
        f.write(json.dumps(rec) + "\n")
    print(f"run={cfg.run.run_id} eval_mode={cfg.train.eval_mode} test_accuracy={acc:.6f} test_loss={loss:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    perturb = (args.perturb_block, args.perturb_amount) if args.perturb_block else None
    seed = 0 if args.seed is None else args.seed
    rep = run_gradcheck_suite(args.instances, seed=seed, perturb=perturb)
    ns = sorted({s["N"] for s in rep.shapes})
    ds = sorted({s["d"] for s in rep.shapes})
    print(f"gradcheck: {len(rep.seeds)} instances, seeds {rep.seeds[0]}..{rep.seeds[-1]}, N in {ns}, d in {ds}, "
          f"tol={rep.tol:g}")
    for name, err in rep.max_error.items():
        print(f"  {name:<28s} max_rel_err={err:.3e}  {'ok' if err <= rep.tol else 'FAIL'}")
    if rep.failures:
        print("FAILED blocks: " + ", ".join(rep.failures))
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_oracle_compare(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    n = cfg.train.batch_size
    if n > 5:
        print(f"oracle-compare enumerates every graph; train.batch_size={n} exceeds the cap of 5", file=sys.stderr)
        return EXIT_VALIDATION
    train, _ = build_datasets(cfg)
    x = train.inputs[:n]
    y = np.eye(train.n_classes)[train.observed_labels[:n]]
    m = cfg.model
    params = init_params(x.shape[1], train.n_classes, hidden=tuple(m.hidden), feature_dim=m.feature_dim,
                         out_dim=m.out_dim or None, seed=m.init_seed)
    if args.checkpoint:
        params, _ = load_checkpoint(args.checkpoint)
    cmp = compare_to_oracle(x, y, params, seed=cfg.train.seed)
    print(f"oracle-compare: N={n}, {cmp.graph_count} graphs, total probability {cmp.total_probability:.15f}")
    for s, blocks, lam, glob in zip(cmp.sample_sizes, cmp.weight_errors, cmp.lambda_errors, cmp.global_errors):
        worst = max(blocks.values())
        print(f"  S={s:>6d}  weights: max block rel err {worst:.4%}  all-weights {glob:.4%}  grad_lambda {lam:.4%}")
    print(f"  convergence slope (log err vs log S): weights {cmp.slope:+.3f}, grad_lambda {cmp.lambda_slope:+.3f}")
    return EXIT_OK


def _policy_spec(spec):
    spec = str(spec)
    if spec.startswith("threshold"):
        _, _, tau = spec.partition(":")
        return "threshold", float(tau) if tau else 0.5
    return spec, None


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    ax = cfg.sweep
    batch_sizes = ax.batch_sizes or [cfg.train.batch_size]
    noise = ax.noise_ratios or [cfg.data.noise_ratio]
    policies = ax.policies or [cfg.train.graph_policy]
    seeds = ax.seeds or [cfg.train.seed]
    out = _out_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for bs, nr, pol, seed in itertools.product(batch_sizes, noise, policies, seeds):
        row = {"batch_size": int(bs), "noise_ratio": float(nr), "policy": str(pol), "seed": int(seed)}
        try:
            policy, tau = _policy_spec(pol)
            cell = replace(cfg, train=replace(cfg.train, batch_size=int(bs), graph_policy=policy, seed=int(seed),
                                              tau=cfg.train.tau if tau is None else tau),
                           data=replace(cfg.data, noise_ratio=float(nr), noise_seed=int(seed), cluster_seed=int(seed)),
                           model=replace(cfg.model, init_seed=int(seed)))
            res = run_training(cell)
            row.update(test_accuracy=res.test_accuracy, test_loss=res.test_loss,
                       alpha=res.params.scale.alpha, beta=res.params.scale.beta, error="")
        except Exception as exc:  # a failed cell is recorded and the sweep continues
            row.update(test_accuracy=None, test_loss=None, alpha=None, beta=None, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
        with (out / "sweep.jsonl").open("a") as f:
            f.write(json.dumps(row) + "\n")
        print(" ".join(f"{k}={v}" for k, v in row.items() if k != "error") + (f" error={row['error']}" if row["error"] else ""))
    with (out / "sweep.csv").open("w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print(f"{len(rows)} cells written to {out / 'sweep.csv'}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    ds = D.read_csv(args.input, args.classes)
    seed = 0 if args.seed is None else args.seed
    noisy = D.corrupt_labels(ds, args.ratio, rng_stream(seed, 14))
    with open(args.input, newline="") as f:
        header = next(csv.reader(f))
    names = [h for h in header if h != "label"]
    D.write_csv(args.output, noisy.inputs, noisy.observed_labels, names)
    print(f"corrupted {len(noisy.corrupted)} of {len(noisy)} labels -> {args.output}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="agfn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path)

    sp = sub.add_parser("train", help="pretrain, then coordinate-descent training")
    common(sp)
    sp.add_argument("--eval-mode", choices=["expected", "sampled"])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(sp)
    sp.add_argument("--checkpoint", required=True, type=Path)
    sp.add_argument("--eval-mode", choices=["expected", "sampled"])
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of every backward block")
    common(sp, config=False)
    sp.add_argument("--instances", type=int, default=100)
    sp.add_argument("--perturb-block", help=argparse.SUPPRESS)
    sp.add_argument("--perturb-amount", type=float, default=1e-3, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("oracle-compare", help="Monte-Carlo vs exact enumeration on a tiny batch")
    common(sp)
    sp.add_argument("--checkpoint", type=Path)
    sp.set_defaults(func=cmd_oracle_compare)

    sp = sub.add_parser("sweep", help="cross product over batch sizes, noise ratios, policies, seeds")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("corrupt", help="inject label noise into a CSV dataset")
    sp.add_argument("--input", required=True, type=Path)
    sp.add_argument("--output", required=True, type=Path)
    sp.add_argument("--ratio", required=True, type=float)
    sp.add_argument("--classes", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_corrupt)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, D.IdxFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
