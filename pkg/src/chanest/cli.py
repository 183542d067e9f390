"""Command-line entry point: ``generate``, ``train``, ``retrain`` and ``evaluate``.

Exit codes are 0 on success, 1 on runtime or data errors and 2 on usage errors.
``--seed`` falls back to the ``CHANEST_SEED`` environment variable, then to 0.
"""

from __future__ import annotations

import argparse
import collections
import contextlib
import math
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .dataset import DatasetSpec, generate_dataset, load_dataset, save_dataset, split
from .errors import ChanestError, InvalidParameter
from .nn import DEFAULT_ARCHITECTURE, NeuralNet, TrainConfig, load_checkpoint, save_checkpoint, train
from .report import emit_report, evaluate, train_report_csv, write_atomic
from .retrain import RetrainConfig, retrain_loop
from .uncertainty import McConfig

# Parameter ranges of the simulated data set.
DELAY_SPREAD_LIMITS_NS = (1.0, 300.0)
DOPPLER_LIMITS_HZ = (5.0, 400.0)
TEST_SEED_OFFSET = 1 << 32
MODE_NAMES = {"adversarial": "adversarial_only", "literal": "literal_D_union_V"}


class UsageError(Exception):
    """Invalid arguments detected after parsing; maps to exit code 2."""


def _range_arg(text: str) -> tuple:
    parts = text.split(":")
    if len(parts) not in (1, 2):
        raise argparse.ArgumentTypeError(f"expected LO:HI or a single value, got {text!r}")
    try:
        lo, hi = (float(parts[0]), float(parts[-1]))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number in {text!r}") from None
    if math.isnan(lo) or math.isnan(hi) or lo > hi:
        raise argparse.ArgumentTypeError(f"range must satisfy LO <= HI, got {text!r}")
    return (lo, hi)


@contextlib.contextmanager
def _validating():
    """Report configuration errors raised while building configs as usage errors."""
    try:
        yield
    except InvalidParameter as exc:
        raise UsageError(str(exc)) from None


def _within(name, value, limits, unit):
    lo, hi = limits
    if value[0] < lo or value[1] > hi:
        raise UsageError(f"{name} must lie within [{lo:g}, {hi:g}] {unit}, got {value[0]:g}:{value[1]:g}")


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CHANEST_SEED")
    if env is None or env == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"CHANEST_SEED must be an integer, got {env!r}") from None


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show defaults in help, except for options whose default is resolved later."""

    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chanest", description=__doc__.splitlines()[0],
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = _DefaultsFormatter

    def common(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="master seed; falls back to $CHANEST_SEED, then 0")
        sp.add_argument("--threads", type=_positive_int, default=1, help="worker thread cap")

    g = sub.add_parser("generate", help="simulate a channel-estimation dataset", formatter_class=fmt)
    g.add_argument("--out", required=True, type=Path, help="dataset directory to write")
    g.add_argument("--num-examples", type=_positive_int, default=256, help="number of examples")
    g.add_argument("--snr-range", type=_range_arg, default=(0.0, 10.0), metavar="LO:HI", help="SNR in dB")
    g.add_argument("--delay-spread", type=_range_arg, default=DELAY_SPREAD_LIMITS_NS, metavar="LO:HI",
                   help="delay spread in ns, within [1, 300]")
    g.add_argument("--doppler", type=_range_arg, default=DOPPLER_LIMITS_HZ, metavar="LO:HI",
                   help="maximum Doppler shift in Hz, within [5, 400]")
    common(g)

    def training(sp, max_epochs):
        sp.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
        sp.add_argument("--batch-size", type=_positive_int, default=64, help="mini-batch size")
        sp.add_argument("--max-epochs", type=_positive_int, default=max_epochs, help="epoch cap per training run")
        sp.add_argument("--patience", type=int, default=5, help="early-stopping patience in epochs")

    t = sub.add_parser("train", help="train the CNN estimator on an 80/20 split", formatter_class=fmt)
    t.add_argument("--data", required=True, type=Path, help="dataset directory")
    t.add_argument("--out", required=True, type=Path, help="output directory")
    t.add_argument("--arch", default=DEFAULT_ARCHITECTURE, help="layer list, e.g. conv5x5:8,relu,dropout:0.1,...")
    training(t, 100)
    common(t)

    def mc_flags(sp):
        sp.add_argument("--mc-passes", type=_positive_int, default=32, help="MC-dropout passes T")
        sp.add_argument("--alpha", type=float, default=0.05, help="confidence-interval level")

    r = sub.add_parser("retrain", help="uncertainty-driven adversarial retraining", formatter_class=fmt)
    r.add_argument("--data", required=True, type=Path, help="dataset directory")
    r.add_argument("--model", required=True, type=Path, help="initial checkpoint")
    r.add_argument("--out", required=True, type=Path, help="output directory")
    r.add_argument("--max-iterations", type=_positive_int, default=5, help="retraining iterations T_alg")
    r.add_argument("--tolerance", type=float, default=1e-6, help="stop once validation MSE falls below this")
    r.add_argument("--fraction", type=float, default=0.2, help="share of validation examples selected")
    r.add_argument("--fgsm-epsilon", type=float, default=None,
                   help="FGSM step (default: 0.05 times the network input scale)")
    r.add_argument("--mode", choices=sorted(MODE_NAMES), default="adversarial",
                   help="augment with adversarial examples, or with the raw validation set")
    training(r, 20)
    mc_flags(r)
    common(r)

    e = sub.add_parser("evaluate", help="compare NN and pilot baseline on a fresh test set", formatter_class=fmt)
    e.add_argument("--data", required=True, type=Path, help="dataset directory (its spec seeds the test set)")
    e.add_argument("--model", required=True, type=Path, help="checkpoint to evaluate")
    e.add_argument("--out", required=True, type=Path, help="output directory")
    e.add_argument("--num-examples", type=_positive_int, default=64, help="test-set size")
    mc_flags(e)
    common(e)
    return p


def _mkdir(path: Path) -> None:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ChanestError(f"cannot create {path}: {exc}") from exc


def _commit_checkpoint(net, path: Path, train_config, seed) -> None:
    tmp = path.with_name(f".{path.name}.tmp")
    try:
        save_checkpoint(net, tmp, train_config, seed)
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def _train_config(args, seed) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.max_epochs,
                       early_stop_patience=args.patience, seed=seed)


def cmd_generate(args) -> int:
    seed = _resolve_seed(args)
    _within("--delay-spread", args.delay_spread, DELAY_SPREAD_LIMITS_NS, "ns")
    _within("--doppler", args.doppler, DOPPLER_LIMITS_HZ, "Hz")
    with _validating():
        spec = DatasetSpec(num_examples=args.num_examples, delay_spread_ns=args.delay_spread,
                           max_doppler_hz=args.doppler, snr_db=args.snr_range, seed=seed)
    ds = generate_dataset(spec, threads=args.threads)
    save_dataset(ds, args.out)
    counts = collections.Counter(e.meta.profile for e in ds)
    print(f"wrote {len(ds)} examples to {args.out} (seed {seed})")
    print(f"grid shape {ds[0].input.shape}, profiles "
          + ", ".join(f"{k}: {counts[k]}" for k in sorted(counts)))
    for label, key in (("delay spread ns", "delay_spread_ns"), ("Doppler Hz", "doppler_hz"), ("SNR dB", "snr_db")):
        vals = [getattr(e.meta, key) for e in ds]
        print(f"{label}: {min(vals):.3f} .. {max(vals):.3f}")
    return 0


def cmd_train(args) -> int:
    seed = _resolve_seed(args)
    with _validating():
        cfg = _train_config(args, seed)
        net = NeuralNet.from_architecture(args.arch, residual=True, seed=seed)
    ds = load_dataset(args.data)
    tr, va = split(ds, 0.8, seed)
    print(f"training on {len(tr)} examples, validating on {len(va)}; "
          f"learning rate {cfg.learning_rate}, batch size {cfg.batch_size}, "
          f"max epochs {cfg.max_epochs}, patience {cfg.early_stop_patience}")
    net, report = train(net, tr, va, cfg)
    _mkdir(args.out)
    write_atomic(args.out / "train_report.csv", train_report_csv(report))
    _commit_checkpoint(net, args.out / "model.nnck", cfg, seed)
    print(f"validation MSE {report.initial_val_loss:.6g} -> {report.best_val_loss:.6g} "
          f"(best epoch {report.best_epoch}, stopped at {report.stopped_epoch})")
    print(f"wrote {args.out / 'model.nnck'}")
    return 0


def cmd_retrain(args) -> int:
    seed = _resolve_seed(args)
    with _validating():
        mc = McConfig(num_passes=args.mc_passes, seed=seed, alpha=args.alpha)
        cfg = RetrainConfig(max_iterations=args.max_iterations, tolerance=args.tolerance,
                            uncertain_fraction=args.fraction, fgsm_epsilon=args.fgsm_epsilon,
                            augmentation_mode=MODE_NAMES[args.mode], train=_train_config(args, seed))
    net, header = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    # Reuse the split the checkpoint was trained with so V stays held out.
    split_seed = header.get("seed")
    tr, va = split(ds, 0.8, seed if split_seed is None else split_seed)
    print(f"retraining ({args.mode} mode) for up to {cfg.max_iterations} iterations, "
          f"T = {mc.num_passes} MC passes")
    net, records = retrain_loop(net, tr, va, cfg, mc)
    for rec in records:
        print(f"iteration {rec.iteration}: val MSE {rec.val_mse_before:.6g} -> {rec.val_mse_after:.6g}, "
              f"uncertainty {rec.mean_uncertainty_before:.4f} -> {rec.mean_uncertainty_after:.4f}")
    _mkdir(args.out)
    emit_report(records, args.out)
    _commit_checkpoint(net, args.out / "model.nnck", cfg.train, split_seed if split_seed is not None else seed)
    return 0


def cmd_evaluate(args) -> int:
    seed = _resolve_seed(args)
    with _validating():
        mc = McConfig(num_passes=args.mc_passes, seed=seed, alpha=args.alpha)
    net, _ = load_checkpoint(args.model)
    ds = load_dataset(args.data)
    base = ds.spec if ds.spec is not None else DatasetSpec()
    test_spec = replace(base, num_examples=args.num_examples, seed=base.seed ^ TEST_SEED_OFFSET)
    test = generate_dataset(test_spec, threads=args.threads)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = evaluate(net, test, mc)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    emit_report(result, args.out)
    gain = 1 - result.mean_nn_mse / result.mean_baseline_mse
    print(f"test examples {len(test)}: baseline MSE {result.mean_baseline_mse:.6g}, "
          f"NN MSE {result.mean_nn_mse:.6g} ({100 * gain:.1f}% lower)")
    print(f"Pearson r(uncertainty, NN squared error) = {result.pearson_r:.4f}")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "retrain": cmd_retrain, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ChanestError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
