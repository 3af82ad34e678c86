"""Command-line entry point: ``dmlda {synth,train,eval,gradcheck,embed}``.

Options for ``train`` may also come from a flat ``key = value`` file passed
with ``--config``. Precedence, lowest first: built-in defaults, the config
file, explicit flags. With ``--resume`` the configuration saved in the
checkpoint takes the place of the built-in defaults. Keys use the long flag names without the leading dashes
(``lambda``, ``alpha-init`` or ``alpha_init``, ``P``, ``K``, ...).

Exit codes: 0 success, 1 validation or verification failure, 2 usage error,
3 input/output error.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import gradcheck
from .data import (Dataset, SynthConfig, load_checkpoint, load_features, save_checkpoint,
                   save_features, synthesize)
from .errors import CorruptCheckpoint, DMLError, ParseError, VersionMismatch
from .evaluation import DEFAULT_KS, evaluate
from .losses import LOSSES
from .training import (TrainConfig, checkpoint_from_state, state_from_checkpoint, train)

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        vals = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("list must not be empty")
    return vals


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# flag name -> (TrainConfig field, parser)
TRAIN_OPTIONS = {
    "loss": ("loss", str),
    "lambda": ("lam", float),
    "eta": ("eta", float),
    "margin": ("margin", float),
    "alpha-init": ("alpha_init", float),
    "P": ("classes_per_batch", int),
    "K": ("samples_per_class", int),
    "accumulate": ("accumulate", _bool),
    "batch-capacity": ("batch_capacity", int),
    "lr": ("lr", float),
    "alpha-lr-scale": ("alpha_lr_scale", float),
    "iterations": ("iterations", int),
    "seed": ("seed", int),
    "hidden": ("hidden", _int_list),
    "embed-dim": ("embed_dim", int),
    "triplets-per-anchor": ("triplets_per_anchor", int),
    "normalize-base": ("normalize_base", _bool),
    "density-normalization": ("density_normalization", str),
    "log-every": ("log_every", int),
}
PATH_OPTIONS = ("train", "out", "log")


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-")
        if key in TRAIN_OPTIONS or key in PATH_OPTIONS:
            values[key] = val
        else:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
    return values


def build_train_config(args, base=None):
    """Merge defaults (or ``base``, a saved config dict), the config file and flags."""
    merged = {}
    if args.config:
        for key, val in read_config_file(args.config).items():
            if key in TRAIN_OPTIONS:
                try:
                    merged[key] = TRAIN_OPTIONS[key][1](val)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"config key {key!r}: {exc}") from None
            else:
                merged[key] = val
    for key in list(TRAIN_OPTIONS) + list(PATH_OPTIONS):
        val = getattr(args, key.replace("-", "_"))
        if val is not None:
            merged[key] = val
    fields = dict(base or {})
    fields.update({TRAIN_OPTIONS[k][0]: v for k, v in merged.items() if k in TRAIN_OPTIONS})
    try:
        cfg = TrainConfig.from_dict(fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    paths = {k: merged.get(k) for k in PATH_OPTIONS}
    for k in ("train", "out"):
        if not paths[k]:
            raise UsageError(f"--{k} is required (flag or config key)")
    return cfg, paths


# ------------------------------------------------------------------ commands

def cmd_synth(args):
    cfg = SynthConfig(args.classes, args.per_class, args.dim, args.sigma, args.seed)
    train_ds, test_ds = synthesize(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".bin" if args.binary else ".txt"
    for ds in (train_ds, test_ds):
        path = save_features(ds, out / f"{ds.split}{ext}", binary=args.binary)
        print(f"wrote {path} ({len(ds)} samples, {len(ds.classes)} classes)")
    return EXIT_OK


def cmd_train(args):
    # when resuming, the saved config replaces the built-in defaults
    ckpt = load_checkpoint(args.resume) if args.resume else None
    cfg, paths = build_train_config(args, ckpt.config if ckpt else None)
    dataset = load_features(paths["train"], "train")
    state = state_from_checkpoint(ckpt) if ckpt else None
    log_path = Path(paths["log"] or str(paths["out"]) + ".log")
    with open(log_path, "a" if state is not None else "w") as sink:
        state, records = train(cfg, dataset, state=state, log_sink=sink)
    save_checkpoint(checkpoint_from_state(state, cfg), paths["out"])
    last = records[-1] if records else {}
    print(f"trained {cfg.loss} (lambda={cfg.lam}) to iteration {state.iteration}; "
          f"final base loss {last.get('loss_base', float('nan')):.6g}")
    print(f"checkpoint: {paths['out']}  log: {log_path}")
    return EXIT_OK


def _embed(ckpt_path, features_path):
    ckpt = load_checkpoint(ckpt_path)
    ds = load_features(features_path)
    return ds, ckpt.net.embed(ds.features)


def cmd_eval(args):
    ds, emb = _embed(args.checkpoint, args.features)
    report = evaluate(emb, ds.labels, args.ks, seed=args.seed)
    table = report.to_table()
    sys.stdout.write(table)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        Path(str(out) + ".txt").write_text(table)
        Path(str(out) + ".records").write_text(report.to_records())
    return EXIT_OK


def cmd_embed(args):
    ds, emb = _embed(args.checkpoint, args.features)
    save_features(Dataset(emb, ds.labels, ds.split), args.out, binary=args.binary)
    print(f"wrote {len(ds)} embeddings of dim {emb.shape[1]} to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    components = args.component or list(gradcheck.COMPONENTS)
    results = gradcheck.run(components, seed=args.seed, perturb=args.perturb)
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.component:<12} worst_rel_err={r.worst:.3e} coords={r.coordinates} {status}")
    failed = [r.component for r in results if not r.passed]
    if failed:
        print(f"gradient check failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser():
    p = argparse.ArgumentParser(prog="dmlda", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic train/test feature split")
    s.add_argument("--classes", type=int, default=40)
    s.add_argument("--per-class", type=int, default=30)
    s.add_argument("--dim", type=int, default=32)
    s.add_argument("--sigma", type=float, default=0.25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--binary", action="store_true", help="binary feature files")
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train an embedding network")
    t.add_argument("--config", help="flat key = value file; flags override it")
    t.add_argument("--train", help="training feature file")
    t.add_argument("--out", help="checkpoint path")
    t.add_argument("--log", help="log path (default: <out>.log)")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--loss", choices=LOSSES)
    t.add_argument("--lambda", dest="lambda", type=float)
    for flag in ("eta", "margin", "alpha-init", "lr", "alpha-lr-scale"):
        t.add_argument(f"--{flag}", type=float)
    for flag in ("P", "K", "batch-capacity", "iterations", "seed", "embed-dim",
                 "triplets-per-anchor", "log-every"):
        t.add_argument(f"--{flag}", type=int)
    t.add_argument("--hidden", type=_int_list, help="hidden widths, e.g. 256 or 256,128")
    t.add_argument("--accumulate", type=_bool)
    t.add_argument("--normalize-base", type=_bool)
    t.add_argument("--density-normalization", choices=("batch", "global"))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="retrieval and clustering metrics on a feature file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--ks", type=_int_list, default=list(DEFAULT_KS))
    e.add_argument("--seed", type=int, default=0, help="k-means seed")
    e.add_argument("--out", help="write <out>.txt and <out>.records")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    g.add_argument("--component", action="append", choices=gradcheck.COMPONENTS)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("embed", help="export unit-norm embeddings as a feature file")
    m.add_argument("--checkpoint", required=True)
    m.add_argument("--features", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--binary", action="store_true")
    m.set_defaults(func=cmd_embed)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dmlda: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, CorruptCheckpoint, VersionMismatch) as exc:
        print(f"dmlda: io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DMLError, ValueError) as exc:
        print(f"dmlda: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
