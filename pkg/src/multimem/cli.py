"""Command-line entry point.

Subcommands: ``generate`` (synthetic datasets), ``train`` (one variant),
``sweep`` (one hyperparameter over a value list), ``gradcheck`` (the
finite-difference suite) and ``dump`` (CSV artifacts from a checkpoint).

Exit codes are a stable contract: 0 ok, 2 configuration problem, 3 I/O
failure, 4 training divergence, 5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4
EXIT_GRADCHECK = 5

SWEEPABLE = {"k", "alpha2", "lambda", "beta", "gamma"}


def _apply_thread_setting(threads: int | None) -> None:
    """Pin BLAS pools before numpy is imported; MULTIMEM_THREADS is the
    environment default, the --threads flag overrides it."""
    value = threads if threads is not None else os.environ.get("MULTIMEM_THREADS")
    if value is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(value)


def _write_manifest(out_dir: str, command: str, config_dict: dict, seed: int, outputs: list[str], started: float) -> str:
    from . import __version__

    manifest = {
        "command": command,
        "version": f"multimem-v{__version__}",
        "seed": seed,
        "config": config_dict,
        "outputs": [os.path.abspath(p) for p in outputs],
        "duration_seconds": time.time() - started,
    }
    for path in outputs:
        if not os.path.exists(path):
            raise OSError(f"declared output missing: {path}")
    path = os.path.join(out_dir, "manifest.json")
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _load_config(path: str, seed_override: int | None):
    from . import config as config_mod

    cfg = config_mod.load(path)
    if seed_override is not None:
        cfg.seed = seed_override
        cfg.synth.seed = seed_override
    return cfg


def cmd_generate(args: argparse.Namespace) -> int:
    from . import config as config_mod
    from . import synth

    started = time.time()
    cfg = _load_config(args.config, args.seed)
    os.makedirs(args.out, exist_ok=True)
    source, target = synth.generate(cfg.synth)
    outputs = synth.save_pair(source, target, args.out, cfg.synth)
    _write_manifest(args.out, "generate", config_mod.to_dict(cfg), cfg.synth.seed, outputs, started)
    print(f"wrote {len(outputs)} files to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from . import config as config_mod
    from . import synth, trainer

    started = time.time()
    cfg = _load_config(args.config, args.seed)
    if args.variant not in trainer.VARIANTS:
        raise_config(f"unknown variant '{args.variant}', expected one of {sorted(trainer.VARIANTS)}")
    source, target, _ = synth.load_pair(args.data)
    os.makedirs(args.out, exist_ok=True)

    result = trainer.run(cfg, source, target, variant=args.variant, guidance=not args.no_guidance)

    metrics_path = os.path.join(args.out, "metrics.csv")
    with open(metrics_path, "w") as fh:
        fh.write(trainer.metrics_to_csv(result.metrics))
    ckpt_path = os.path.join(args.out, "checkpoint.json")
    trainer.save_checkpoint(result, cfg, ckpt_path)
    _write_manifest(
        args.out, "train", config_mod.to_dict(cfg), cfg.seed, [metrics_path, ckpt_path], started
    )
    final = result.final
    print(
        f"variant={args.variant} epochs={len(result.metrics)} "
        f"final_map={final['map']:.4f} final_rank1={final['rank1']:.4f}"
    )
    return EXIT_OK


def _check_sweep_value(param: str, value: float) -> None:
    if param == "k" and (value < 1 or value != int(value)):
        raise_config(f"k must be a positive integer, got {value}")
    if param == "alpha2" and value < 0:
        raise_config(f"alpha2 must be >= 0, got {value}")
    if param in ("lambda", "gamma") and not 0.0 <= value <= 1.0:
        raise_config(f"{param} must be in [0, 1], got {value}")
    if param == "beta" and value < 0:
        raise_config(f"beta must be >= 0, got {value}")


def cmd_sweep(args: argparse.Namespace) -> int:
    import dataclasses

    from . import config as config_mod
    from . import synth, trainer

    started = time.time()
    if args.param not in SWEEPABLE:
        raise_config(f"unknown sweep parameter '{args.param}', expected one of {sorted(SWEEPABLE)}")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise_config(f"bad --values list: {exc}")
    if not values:
        raise_config("--values is empty")
    for v in values:
        _check_sweep_value(args.param, v)

    cfg = _load_config(args.config, args.seed)
    source, target, _ = synth.load_pair(args.data)
    os.makedirs(args.out, exist_ok=True)

    attr = {"lambda": "lam"}.get(args.param, args.param)
    rows = []
    for v in values:
        value = int(v) if args.param == "k" else v
        hyper = dataclasses.replace(cfg.hyper, **{attr: value})
        run_cfg = dataclasses.replace(cfg, hyper=hyper)
        result = trainer.run(run_cfg, source, target, variant=args.variant)
        rows.append((value, result.final))
        print(f"{args.param}={value}: map={result.final['map']:.4f}")

    sweep_path = os.path.join(args.out, "sweep.csv")
    with open(sweep_path, "w") as fh:
        fh.write("param,value," + ",".join(trainer.METRIC_COLUMNS) + "\n")
        for value, final in rows:
            cells = ",".join(trainer._fmt(final[c]) for c in trainer.METRIC_COLUMNS)
            fh.write(f"{args.param},{trainer._fmt(value)},{cells}\n")
    _write_manifest(args.out, "sweep", config_mod.to_dict(cfg), cfg.seed, [sweep_path], started)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from . import gradcheck

    rows = gradcheck.run_all(seed=args.seed, corrupt=args.corrupt)
    width = max(len(r.name) for r in rows)
    failed = []
    for row in rows:
        status = "ok" if row.passed else "FAIL"
        print(f"{row.name:<{width}}  configs={row.num_configs:<4d} max_rel_err={row.max_error:.3e}  {status}")
        if not row.passed:
            failed.append(row.name)
    if failed:
        print(f"gradient check failed for {', '.join(failed)} (seed {args.seed})")
        return EXIT_GRADCHECK
    return EXIT_OK


def cmd_dump(args: argparse.Namespace) -> int:
    import numpy as np

    from . import config as config_mod
    from . import clustering, reciprocal, synth, trainer
    from .encoder import Encoder
    from .memory_bank import MemoryBank, MemoryLevel

    what_choices = {"banks", "similarity", "clusters", "embeddings"}
    if args.what not in what_choices:
        raise_config(f"unknown dump target '{args.what}', expected one of {sorted(what_choices)}")

    payload = trainer.load_checkpoint(args.checkpoint)
    cfg = config_mod.from_dict(payload["config"])
    os.makedirs(args.out, exist_ok=True)
    outputs = []

    if args.what == "banks":
        if not payload["banks"]:
            raise_config("checkpoint holds no memory banks (baseline variant?)")
        for name, data in payload["banks"].items():
            slots = np.asarray(data["slots"])
            bank = MemoryBank(slots.shape[0], slots.shape[1], MemoryLevel(data["level"]))
            bank.slots = slots
            path = os.path.join(args.out, f"bank_{name}.csv")
            with open(path, "w") as fh:
                bank.dump(fh)
            outputs.append(path)
    else:
        _, target, _ = synth.load_pair(args.data)
        enc = Encoder.from_dict(payload["encoder"])
        state = enc.forward(target.samples)
        if args.what == "embeddings":
            path = os.path.join(args.out, "embeddings.csv")
            emb = np.concatenate([state.f_g, state.f_pu, state.f_pb], axis=1)
            with open(path, "w") as fh:
                for row in emb:
                    fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
            outputs.append(path)
        elif args.what == "similarity":
            sim = reciprocal.build_similarity(
                state.f_g, cfg.reciprocal.k1, cfg.reciprocal.k2, cfg.reciprocal.lambda_r
            )
            path = os.path.join(args.out, "similarity.csv")
            with open(path, "w") as fh:
                for row in sim.s:
                    fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
            outputs.append(path)
        else:  # clusters
            if payload["labels"] is not None:
                labels = np.asarray(payload["labels"], dtype=int)
            else:
                sim = reciprocal.build_similarity(
                    state.f_g, cfg.reciprocal.k1, cfg.reciprocal.k2, cfg.reciprocal.lambda_r
                )
                labels = clustering.cluster(
                    sim.s, cfg.clustering.eps, cfg.clustering.min_cluster_size
                ).labels
            path = os.path.join(args.out, "clusters.csv")
            with open(path, "w") as fh:
                fh.write("sample_id,cluster_id\n")
                for i, c in enumerate(labels):
                    fh.write(f"{i},{c}\n")
            outputs.append(path)

    print(f"wrote {', '.join(os.path.basename(p) for p in outputs)}")
    return EXIT_OK


class _ConfigProblem(Exception):
    pass


def raise_config(message: str) -> None:
    raise _ConfigProblem(message)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multimem")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap (default from MULTIMEM_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate the synthetic source/target datasets")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one variant and log per-epoch metrics")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="full")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-guidance", action="store_true", help="raw top-k selection with hard weights")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="rerun training over a list of hyperparameter values")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated list")
    p.add_argument("--variant", default="full")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every analytic gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump", help="export checkpoint artifacts as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None, help="dataset dir (needed for everything but banks)")
    p.add_argument("--out", required=True)
    p.add_argument("--what", required=True)
    p.set_defaults(func=cmd_dump)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _apply_thread_setting(args.threads)

    from .errors import DivergenceError, InvalidConfigError, MultimemError

    try:
        return args.func(args)
    except (_ConfigProblem, InvalidConfigError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except MultimemError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
