"""Command-line orchestration.

Subcommands: gen-data, train, eval, compare, export-alignment.
Exit codes: 0 success, 2 validation error, 3 divergence, 4 assertion
failure.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from . import data as D
from . import losses as L
from . import metrics as MT
from . import model as M
from . import runconfig as RC
from . import training as TR
from .exceptions import (
    BidecodeError,
    ConfigError,
    DivergenceError,
    SeedMismatchError,
    TopologyMismatchError,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_ASSERTION = 4

SPLIT_FILES = {
    "train": "train.txt",
    "in_domain_test": "in_domain_test.txt",
    "out_of_domain_test": "out_of_domain_test.txt",
}


def _write_manifest(out_dir, cfg, seed, outputs, started):
    manifest = {
        "version": __version__,
        "config": cfg,
        "seed": seed,
        "started_at": started,
        "finished_at": time.time(),
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def _task_spec(cfg):
    return D.build_task(
        vocab_size=cfg["task.vocab_size"],
        feature_dim=cfg["task.feature_dim"],
        noise_std=cfg["task.noise_std"],
        seed=cfg["task.seed"],
    )


def cmd_gen_data(args):
    cfg = RC.load_config(args.config)
    started = time.time()
    os.makedirs(args.out_dir, exist_ok=True)
    spec = _task_spec(cfg)
    splits = [
        ("train", cfg["data.train_count"],
         (cfg["data.train_min_len"], cfg["data.train_max_len"]), 10),
        ("in_domain_test", cfg["data.in_domain_count"],
         (cfg["data.train_min_len"], cfg["data.train_max_len"]), 11),
        ("out_of_domain_test", cfg["data.out_of_domain_count"],
         (cfg["data.ood_min_len"], cfg["data.ood_max_len"]), 12),
    ]
    outputs = []
    for name, count, length_range, split_seed in splits:
        split = D.gen_split(spec, name, count, length_range, split_seed)
        path = os.path.join(args.out_dir, SPLIT_FILES[name])
        D.save_split(split, path)
        outputs.append(path)
        print(f"wrote {path} ({count} utterances)")
    outputs.append(_write_manifest(args.out_dir, cfg, cfg["task.seed"], outputs, started))
    return EXIT_OK


def _load_model_for_method(cfg, tcfg):
    dims = RC.model_dims(cfg)
    if tcfg.method == "decoder_reg":
        return M.BiDecoderModel(dims, seed=(tcfg.seed, 100))
    if tcfg.method == "model_reg":
        l2r = M.DirectionalModel(dims, M.FORWARD, seed=(tcfg.seed, 101))
        r2l = M.DirectionalModel(dims, M.BACKWARD, seed=(tcfg.seed, 102))
        return l2r, r2l
    return M.DirectionalModel(dims, M.FORWARD, seed=(tcfg.seed, 100))


def cmd_train(args):
    cfg = RC.load_config(args.config)
    tcfg = RC.train_config(cfg, seed_override=args.seed)
    started = time.time()
    os.makedirs(args.out_dir, exist_ok=True)
    data_dir = args.data_dir or args.out_dir
    train_path = os.path.join(data_dir, SPLIT_FILES["train"])
    if not os.path.exists(train_path):
        raise ConfigError(f"dataset file missing: {train_path} (run gen-data first)")
    dataset = D.load_split(train_path)
    spec = _task_spec(cfg)
    eval_path = os.path.join(data_dir, SPLIT_FILES["in_domain_test"])
    eval_split = D.load_split(eval_path) if os.path.exists(eval_path) else None
    metrics_path = os.path.join(args.out_dir, "metrics.jsonl")
    if os.path.exists(metrics_path):
        os.remove(metrics_path)
    outputs = [metrics_path]

    def save(model, tag, optimizer=None, step=0):
        path = os.path.join(args.out_dir, f"{tag}.ckpt")
        ckpt.save_checkpoint(path, model, method=tcfg.method,
                             optimizer=optimizer, step=step)
        if path not in outputs:
            outputs.append(path)
        return path

    def emit_metrics(model, tag, step):
        if eval_split is not None:
            rec = MT.eval_model(model, eval_split, spec, model_tag=tag,
                                seed=tcfg.seed, step=step)
            MT.append_record(rec, metrics_path)

    every = cfg["train.checkpoint_every"]

    try:
        if tcfg.method == "baseline":
            m = _load_model_for_method(cfg, tcfg)
            opt = TR.make_optimizer(m, tcfg)
            rng = np.random.default_rng(tcfg.seed)

            def hook(step, agg):
                if every and step % every == 0:
                    save(m, "baseline_latest", opt, step)

            log = TR.train_steps(
                m, dataset, tcfg,
                lambda mm, x, y, r: TR.standard_loss_fn(mm, x, y, tcfg, r),
                tcfg.total_steps, optimizer=opt, rng=rng, phase="baseline",
                step_hook=hook if every else None,
            )
            save(m, "baseline", opt, opt.t)
            emit_metrics(m, "baseline", opt.t)
        elif tcfg.method == "model_reg":
            l2r, r2l = _load_model_for_method(cfg, tcfg)

            def phase_hook(phase, ml, mr):
                save(ml, f"l2r_{phase}")
                save(mr, f"r2l_{phase}")
                emit_metrics(ml, f"l2r_{phase}", 0)

            l2r, r2l, log = TR.joint_train_model_reg(
                l2r, r2l, dataset, tcfg, phase_hook=phase_hook
            )
            save(l2r, "l2r")
            save(r2l, "r2l")
            emit_metrics(l2r, "l2r", 0)
        else:  # decoder_reg
            bimodel = _load_model_for_method(cfg, tcfg)

            def phase_hook(phase, mm):
                save(mm, f"bidecoder_{phase}")
                emit_metrics(mm, f"bidecoder_{phase}", 0)

            bimodel, log = TR.joint_train_decoder_reg(
                bimodel, dataset, tcfg, phase_hook=phase_hook
            )
            save(bimodel, "bidecoder")
            emit_metrics(bimodel, "bidecoder", 0)
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        _write_manifest(args.out_dir, cfg, tcfg.seed, outputs, started)
        return EXIT_DIVERGENCE

    with open(os.path.join(args.out_dir, "train_log.jsonl"), "w") as f:
        for entry in log:
            f.write(json.dumps(entry) + "\n")
    outputs.append(os.path.join(args.out_dir, "train_log.jsonl"))
    _write_manifest(args.out_dir, cfg, tcfg.seed, outputs, started)
    print(f"trained method={tcfg.method} seed={tcfg.seed}; outputs in {args.out_dir}")
    return EXIT_OK


def cmd_eval(args):
    cfg = RC.load_config(args.config)
    model, topo, step, _ = ckpt.load_checkpoint(args.checkpoint)
    split = D.load_split(args.data)
    spec = _task_spec(cfg)
    d = split.pairs[0][1].frames.shape[1]
    if d != model.dims.feature_dim:
        raise TopologyMismatchError(
            f"dataset feature dim {d} vs checkpoint {model.dims.feature_dim}"
        )
    if args.assert_forward_only:
        for stack in model.stacks():
            stack.reset_access_count()
        for x, y in split:
            M.free_run_decode(model, x, max_len=len(y), stop_threshold=1.0)
        if model.kind == "bidecoder" and model.backward_decoder.access_count != 0:
            print(
                f"assertion failed: backward decoder parameters read "
                f"{model.backward_decoder.access_count} times during free run",
                file=sys.stderr,
            )
            return EXIT_ASSERTION
    rec = MT.eval_model(model, split, spec, model_tag=topo["method"],
                        seed=args.seed if args.seed is not None else 0, step=step)
    line = rec.to_json()
    if args.out:
        MT.append_record(rec, args.out)
    print(line)
    return EXIT_OK


def cmd_compare(args):
    recs_a = MT.load_records(args.a)
    recs_b = MT.load_records(args.b)
    summary = MT.compare_runs(recs_a, recs_b, args.metric)
    print(f"metric: {summary['metric']}")
    print(f"seeds: {summary['seeds']}")
    print(f"median a={summary['median_a']:.6g} b={summary['median_b']:.6g} "
          f"delta={summary['median_delta']:.6g}")
    print(f"a lower on {summary['n_a_lower']} seeds, b lower on "
          f"{summary['n_b_lower']}, tied on {summary['n_tied']}")
    if args.out:
        with open(args.out, "w") as f:
            json.dump(summary, f, indent=2, sort_keys=True)
    return EXIT_OK


def _write_alignment_csv(path, matrix):
    with open(path, "w") as f:
        for row in matrix:
            f.write(",".join(f"{v:.9g}" for v in row) + "\n")


def _write_alignment_pgm(path, matrix):
    tprime, t = matrix.shape
    peak = matrix.max()
    scaled = (matrix * (255.0 / peak) if peak > 0 else matrix).round()
    body = scaled.astype(np.uint8).tobytes()
    with open(path, "wb") as f:
        f.write(f"P5\n{t} {tprime}\n255\n".encode())
        f.write(body)


def cmd_export_alignment(args):
    cfg = RC.load_config(args.config)
    model, topo, _, _ = ckpt.load_checkpoint(args.checkpoint)
    spec = _task_spec(cfg)
    if args.tokens:
        tokens = [int(t) for t in args.tokens.split(",")]
        x = M.SymbolSequence(tokens)
        y = D.oracle_render(spec, x)
    elif args.data is None:
        raise ConfigError("export-alignment needs --tokens or --data")
    else:
        split = D.load_split(args.data)
        if not (0 <= args.index < len(split)):
            raise ConfigError(f"--index {args.index} out of range for {len(split)} utterances")
        x, y = split[args.index]
    os.makedirs(args.out_dir, exist_ok=True)
    passes = [("forward", M.teacher_forced_pass(model, x, y, direction=model.direction))]
    if model.kind == "bidecoder":
        passes.append(("backward", M.teacher_forced_pass(model, x, y, direction=M.BACKWARD)))
    for tag, result in passes:
        mat = result.alignment_matrix()
        csv_path = os.path.join(args.out_dir, f"alignment_{tag}.csv")
        pgm_path = os.path.join(args.out_dir, f"alignment_{tag}.pgm")
        _write_alignment_csv(csv_path, mat)
        _write_alignment_pgm(pgm_path, mat)
        print(f"wrote {csv_path} and {pgm_path} ({mat.shape[0]}x{mat.shape[1]})")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bidecode",
        description="Forward-backward decoding regularization lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate dataset splits")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a model per the configured method")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--assert-forward-only", action="store_true")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("compare", help="paired per-seed metric comparison")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--metric", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("export-alignment", help="export attention matrices")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--tokens", default=None, help="comma-separated token ids")
    p.add_argument("--data", default=None)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_export_alignment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, TopologyMismatchError, SeedMismatchError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as err:
        print(f"divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except BidecodeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
