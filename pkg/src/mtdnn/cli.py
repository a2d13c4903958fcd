"""Batch command-line interface: ``mtdnn {train,finetune,eval,sample,gradcheck}``.

Exit codes: 0 success, 1 check failure, 2 usage or validation error,
3 numeric abort. Diagnostics go to standard error.
"""
import argparse
import logging
import os
import sys
import tempfile
from pathlib import Path

from .checkpoint import load_checkpoint
from .checks import suite
from .config import load_config
from .data import SUBSAMPLE_FRACTIONS, subsample_indices
from .errors import MTDNNError, NumericError
from .metrics import evaluate
from .model import MTDNN
from .rng import stream
from .tasks import featurize
from .trainer import fine_tune, run_training

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class _UsageError(MTDNNError):
    pass


def _out_dir(args, cfg):
    out = Path(args.out) if args.out else cfg.output_dir
    if out is None:
        raise _UsageError("no output directory: pass --out or set [output] dir")
    return out


def cmd_train(args):
    cfg = load_config(args.config)
    vocab = cfg.vocab()
    model_cfg = cfg.model_config(len(vocab))
    train_cfg = cfg.train_config(args.seed)
    out = _out_dir(args, cfg)
    registry = cfg.registry(vocab)
    model = MTDNN.create(model_cfg, cfg.tasks, train_cfg.seed)
    log = run_training(registry, model, train_cfg, out_dir=out)
    print(f"trained {len(log.records)} steps; checkpoints in {out}")
    return EXIT_OK


def cmd_finetune(args):
    cfg = load_config(args.config)
    spec = cfg.task(args.task)
    vocab = cfg.vocab()
    model_cfg = cfg.model_config(len(vocab))
    train_cfg = cfg.train_config(args.seed)
    out = _out_dir(args, cfg)
    arrays = load_checkpoint(args.init)
    data = cfg.load_split(spec, "train")
    _, log = fine_tune(arrays, spec, data, train_cfg, model_cfg, vocab, out_dir=out)
    print(f"fine-tuned {spec.name} for {len(log.records)} steps; checkpoints in {out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = load_config(args.config)
    vocab = cfg.vocab()
    model_cfg = cfg.model_config(len(vocab))
    arrays = load_checkpoint(args.checkpoint)
    params = {k: v for k, v in arrays.items() if k.startswith(("encoder.", "heads."))}
    # evaluate every configured task whose head is in the checkpoint
    specs = [s for s in cfg.tasks if any(k.startswith(f"heads.{s.name}.") for k in params)]
    if not specs:
        raise _UsageError("checkpoint holds no head for any task in the config")
    model = MTDNN.create(model_cfg, specs, 0)
    model.load_state_dict(params)

    lines = []
    for spec in specs:
        split = cfg.load_split(spec, args.split)
        report = evaluate(model, spec, featurize(split, spec, vocab, model_cfg.encoder.max_len))
        lines += report.lines()
    text = "".join(line + "\n" for line in lines)
    sys.stdout.write(text)
    out = Path(args.out) if args.out else cfg.output_dir
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _write_atomic(out / "eval.tsv", text.encode("utf-8"))
    return EXIT_OK


def _write_atomic(path, payload):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _units(lines, grouped):
    """Sampling units: single lines, or runs of lines sharing the first column."""
    if not grouped:
        return [[line] for line in lines]
    order, groups = [], {}
    for line in lines:
        key = line.split("\t", 1)[0]
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(line)
    return [groups[k] for k in order]


def cmd_sample(args):
    try:
        fraction = float(args.fraction)
    except ValueError:
        raise _UsageError(f"fraction {args.fraction!r} is not a number") from None
    if fraction not in SUBSAMPLE_FRACTIONS:
        raise _UsageError(f"fraction must be one of {', '.join(map(str, SUBSAMPLE_FRACTIONS))}")
    try:
        with open(args.input, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise _UsageError(f"cannot read {args.input}: {exc.strerror}") from None
    lines = [line for line in raw.decode("utf-8").splitlines(keepends=True) if line.strip()]
    if lines and not lines[-1].endswith("\n"):
        lines[-1] += "\n"
    units = _units(lines, args.ranking)
    idx = subsample_indices(len(units), fraction, stream(args.seed, "sampling"))
    payload = "".join(line for i in idx for line in units[i]).encode("utf-8")
    _write_atomic(args.output, payload)
    print(f"kept {len(idx)} of {len(units)} {'queries' if args.ranking else 'lines'}")
    return EXIT_OK


def cmd_gradcheck(args):
    san_steps = 5
    if args.config:
        san_steps = load_config(args.config).model["san_steps"]
    failed = []
    for name, report in suite(tol=args.tol, seed=args.seed, san_steps=san_steps):
        status = "ok" if report.passed else "FAIL"
        print(f"{name}\t{report.max_rel_error:.3e}\t{status}")
        if not report.passed:
            failed.append(name)
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mtdnn", description="Multi-task text encoder training.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="joint multi-task training")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="adapt a trained encoder to one task")
    p.add_argument("--config", required=True)
    p.add_argument("--init", required=True, help="checkpoint holding encoder.* parameters")
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("eval", help="score a checkpoint on one split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="dev")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample", help="subsample a TSV file")
    p.add_argument("--input", required=True)
    p.add_argument("--fraction", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ranking", action="store_true", help="sample whole queries (rows grouped by first column)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except MTDNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
