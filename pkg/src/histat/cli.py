"""``histat`` command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime error. Diagnostics go to
stderr; data products go to files (or stdout where noted).
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from . import harness
from .checkpoint import inspect_checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .errors import ConfigError, HistatError
from .harness import ablation_grid, evaluate, gradcheck, rows_to_csv, train
from .synthdata import generate_dataset, read_dataset, write_dataset

log = logging.getLogger("histat")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _set_pair(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


def _config_args(p):
    p.add_argument("--config", help="key = value config file (e.g. a previous resolved.cfg)")
    p.add_argument("--set", dest="overrides", action="append", default=[], type=_set_pair,
                   metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser():
    parser = _Parser(prog="histat", description="Two-level vector-quantized tokenizer for continuous robot actions.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen-data", help="generate a synthetic trajectory dataset")
    p.add_argument("--out", required=True, help="output .hstd file")
    p.add_argument("--num", type=int, help="number of trajectories")
    p.add_argument("--seq-len", type=int)
    p.add_argument("--dim", type=int, help="action dimension (d_feature)")
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="noise sigma")
    p.add_argument("--no-labels", action="store_true", help="omit generator labels")
    _config_args(p)

    p = sub.add_parser("train", help="train a tokenizer")
    p.add_argument("--data", help="training dataset (.hstd)")
    p.add_argument("--eval-data", help="held-out dataset for periodic evaluation")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    _config_args(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the metrics row as CSV here (default stdout)")

    p = sub.add_parser("tokenize", help="emit (j*, i*) tokens for every action")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="CSV output (default stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check on the micro-model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--h", type=float, default=1e-5)

    p = sub.add_parser("ablate", help="train the ablation grid and write one row per variant")
    p.add_argument("--data", help="training dataset (.hstd)")
    p.add_argument("--eval-data", help="held-out dataset (.hstd)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--no-sweep", action="store_true", help="skip the lambda_temp sweep")
    _config_args(p)

    p = sub.add_parser("inspect", help="print a checkpoint's header and parameter summary")
    p.add_argument("checkpoint")
    return parser


def resolve_config(args, flag_keys):
    """Layer defaults, ``--config``, ``--set`` and dedicated flags."""
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.update(dict(args.overrides))
    cfg.update({key: getattr(args, attr) for attr, key in flag_keys.items()
                if getattr(args, attr, None) is not None})
    return cfg


def _write_resolved(cfg, out_dir):
    with open(os.path.join(out_dir, "resolved.cfg"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())


def _require(cfg, *keys):
    missing = [k for k in keys if not cfg[k]]
    if missing:
        raise UsageError(f"missing required setting(s): {', '.join(missing)}")


def _emit(text, path):
    if path:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _load_training_data(cfg):
    train_set = read_dataset(cfg["data"])
    eval_set = read_dataset(cfg["eval_data"]) if cfg["eval_data"] else None
    if "d_feature" not in cfg.explicit:
        cfg.update({"d_feature": train_set.d_feature})
    return train_set, eval_set


def cmd_gen_data(args):
    cfg = resolve_config(args, {"out": "data", "num": "num", "seq_len": "seq_len",
                                "dim": "d_feature", "seed": "seed", "noise": "noise_sigma"})
    if args.no_labels:
        cfg.update({"labels": False})
    data = generate_dataset(cfg["num"], seq_len=cfg["seq_len"], d_feature=cfg["d_feature"],
                            seed=cfg["seed"], n_primitives=cfg["n_primitives"],
                            seg_len=cfg["seg_len"], n_phases=cfg["n_phases"],
                            noise_sigma=cfg["noise_sigma"], library_seed=cfg["library_seed"])
    if not cfg["labels"]:
        data = replace(data, labels=None)
    write_dataset(cfg["data"], data)
    log.info("wrote %d trajectories to %s", data.batch, cfg["data"])
    return 0


def cmd_train(args):
    cfg = resolve_config(args, {"data": "data", "eval_data": "eval_data", "out": "out",
                                "steps": "steps", "seed": "seed",
                                "batch_size": "batch_size", "lr": "lr"})
    _require(cfg, "data", "out")
    train_set, eval_set = _load_training_data(cfg)
    model_cfg, train_cfg = cfg.model_config(), cfg.train_config()
    os.makedirs(cfg["out"], exist_ok=True)
    _write_resolved(cfg, cfg["out"])
    progress = None
    if args.verbose:
        def progress(step, losses):
            log.info("step %d total %.6g", step, losses.total)
    res = train(model_cfg, train_cfg, train_set, eval_set, progress=progress)
    save_checkpoint(res.model, os.path.join(cfg["out"], "checkpoint.hsta"))
    with open(os.path.join(cfg["out"], "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(res.rows))
    log.info("initial total %.6g, final total %.6g", res.initial_total, res.final_total)
    return 0


def cmd_eval(args):
    model = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    report = evaluate(model, data)
    _emit(rows_to_csv([report.row(0, "eval")]), args.out)
    return 0


def cmd_tokenize(args):
    model = load_checkpoint(args.checkpoint)
    data = read_dataset(args.data)
    tokens, _ = model.tokenize(data.X)
    j = np.asarray(tokens.j_star)
    i = np.asarray(tokens.i_star) if tokens.i_star is not None else None
    lines = ["j_star,i_star"]
    for row in range(j.size):
        lines.append(f"{int(j[row])},{'' if i is None else int(i[row])}")
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def cmd_gradcheck(args):
    report = gradcheck(seed=args.seed, h=args.h, tolerance=args.tolerance)
    for line in report.lines():
        print(line)
    print(f"{'PASS' if report.passed else 'FAIL'} in {report.seconds:.2f}s")
    return 0 if report.passed else 2


def cmd_ablate(args):
    cfg = resolve_config(args, {"data": "data", "eval_data": "eval_data", "out": "out",
                                "steps": "steps", "seed": "seed"})
    _require(cfg, "data", "eval_data", "out")
    train_set, eval_set = _load_training_data(cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    _write_resolved(cfg, cfg["out"])
    progress = (lambda name: log.info("training %s", name)) if args.verbose else None
    rows = ablation_grid(cfg.model_config(), cfg.train_config(), train_set, eval_set,
                         include_sweep=not args.no_sweep, progress=progress)
    header = harness.METRICS_HEADER + harness.ABLATION_EXTRA
    with open(os.path.join(cfg["out"], "ablation.csv"), "w", encoding="utf-8", newline="") as fh:
        fh.write(rows_to_csv(rows, header))
    return 0


def cmd_inspect(args):
    print(json.dumps(inspect_checkpoint(args.checkpoint), indent=2, sort_keys=True))
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "tokenize": cmd_tokenize,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "inspect": cmd_inspect,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if not exc.code else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="histat: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"histat {args.command}: {exc}", file=sys.stderr)
        return 1
    except (HistatError, OSError, ValueError) as exc:
        print(f"histat {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
