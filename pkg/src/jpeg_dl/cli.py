"""Command-line entry point: ``jpeg-dl <subcommand> ...``.

Exit codes: 0 success, 1 validation failure (bad arguments, failed checks),
2 I/O or file-format errors.
"""

from __future__ import annotations

import os

if "JDL_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["JDL_THREADS"])

import argparse  # noqa: E402
import csv  # noqa: E402
import json  # noqa: E402
import sys  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import gradcheck, qtable  # noqa: E402
from .attacks import AttackConfig, adversarial_eval  # noqa: E402
from .classifier import init_classifier, load_classifier, save_classifier  # noqa: E402
from .jpeg_pipeline import SubsamplingMode  # noqa: E402
from .layer import LayerConfig  # noqa: E402
from .optim import OptimizerConfig  # noqa: E402
from .soft_quantizer import QuantizerParams, QuantizerVariant, quantize_uniform, soft_forward_backward  # noqa: E402
from .tensor_data import FormatError, load_dataset, make_synthetic_frequency_dataset, save_dataset  # noqa: E402
from .trainer import TrainConfig, evaluate, train, write_metrics  # noqa: E402

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(t) for t in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    return lo, hi


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def cmd_gradcheck(args) -> int:
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    if any(L < 1 for L in args.levels):
        raise UsageError("--levels entries must be positive")
    quant = gradcheck.check_quantizer(args.samples, args.seed, tuple(args.levels), args.masked)
    ok = True
    for name, err in quant.max_rel.items():
        good = err < gradcheck.QUANT_RTOL
        ok &= good
        relation = "<" if good else ">="
        print(f"{name} max_rel {relation} 1e-4  (observed {err:.3e} over {quant.samples} samples)")
        if not good:
            z, q, alpha, L = quant.worst[name]
            print(f"  worst: z={z!r} q={q!r} alpha={alpha!r} L={L}")
    if args.layer_configs > 0:
        layer = gradcheck.check_layer(args.layer_configs, args.seed, cfg=LayerConfig(masked=args.masked))
        for name, err in (("layer d_q", layer.max_rel_q), ("layer d_pixel", layer.max_rel_pixels)):
            good = err < gradcheck.LAYER_RTOL
            ok &= good
            relation = "<" if good else ">="
            print(f"{name} max_rel {relation} 1e-3  (observed {err:.3e} over {layer.configs} configs)")
    return EXIT_OK if ok else EXIT_INVALID


def cmd_curve(args) -> int:
    lo, hi = args.range
    if not lo < hi:
        raise UsageError("--range needs lo < hi")
    if args.step <= 0:
        raise UsageError("--step must be positive")
    try:
        params = QuantizerParams(args.q, args.alpha, args.levels)
    except ValueError as exc:
        raise UsageError(str(exc))
    n = int(np.floor((hi - lo) / args.step + 1e-9)) + 1
    z = lo + args.step * np.arange(n)
    hard = quantize_uniform(z, params)
    soft, grad = soft_forward_backward(z, params, masked=args.masked)
    out = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["z", "Q_u", "Q_d", "dQd_dz", "dQd_dq", "dQd_dalpha"])
        for row in zip(z, hard, soft, grad.d_z, grad.d_q, grad.d_alpha):
            writer.writerow([repr(float(v)) for v in row])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        ds = make_synthetic_frequency_dataset(args.n_per_class, args.size, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    save_dataset(ds, args.out, args.format)
    print(f"wrote {len(ds)} images to {args.out}")
    return EXIT_OK


def cmd_init(args) -> int:
    common = dict(b=args.b, alpha=args.alpha, L=args.levels, hbar=args.hbar)
    if args.strategy == "ones":
        tables = qtable.init_ones(**common)
    else:
        if args.data is None:
            raise UsageError(f"--data is required for strategy {args.strategy}")
        ds = load_dataset(args.data)
        if args.strategy == "magnitude":
            tables = qtable.init_magnitude(ds, mode=args.subsampling, alt_denominator=args.alt_denominator, **common)
        else:
            if args.model is None:
                raise UsageError("--model is required for strategy sensitivity")
            params = load_classifier(_model_file(args.model))
            tables = qtable.init_sensitivity(params, ds, mode=args.subsampling, **common)
    qtable.save_tables(tables, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _model_file(path: str) -> Path:
    path = Path(path)
    return path / "model.json" if path.is_dir() else path


def _train_config(args) -> TrainConfig:
    jpeg_lr = args.jpeg_lr
    if jpeg_lr is None:
        jpeg_lr = 0.5 if args.jpeg_optimizer == "sgd" else 0.003
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
        model_optimizer=OptimizerConfig("sgd", args.model_lr, args.momentum, args.weight_decay),
        jpeg_optimizer=OptimizerConfig(args.jpeg_optimizer, jpeg_lr),
        train_alpha=args.train_alpha,
        gradient_scaling=args.hbar,
        variant=QuantizerVariant(args.variant),
        subsampling=SubsamplingMode(args.subsampling),
        masked=args.masked,
        rounds=args.rounds,
    )


def _config_doc(cfg: TrainConfig, arch: str, hidden: int) -> dict:
    return {
        "variant": cfg.variant.value,
        "subsampling": cfg.subsampling.value,
        "masked": cfg.masked,
        "rounds": cfg.rounds,
        "arch": arch,
        "hidden": hidden,
        "seed": cfg.seed,
    }


def _load_model_dir(path: str):
    path = Path(path)
    tables = qtable.load_tables(path / "tables.json")
    params = load_classifier(path / "model.json")
    config_path = path / "config.json"
    doc = json.loads(config_path.read_text()) if config_path.exists() else {}
    cfg = TrainConfig(
        variant=QuantizerVariant(doc.get("variant", "soft")),
        subsampling=SubsamplingMode(doc.get("subsampling", "444")),
        rounds=doc.get("rounds", 1),
    )
    return tables, params, cfg


def cmd_train(args) -> int:
    try:
        cfg = _train_config(args)
    except ValueError as exc:
        raise UsageError(str(exc))
    ds = load_dataset(args.data)
    val = load_dataset(args.val, ds.num_classes) if args.val else None
    tables = qtable.load_tables(args.tables) if args.tables else qtable.init_magnitude(ds, mode=cfg.subsampling)
    params = init_classifier(args.arch, ds.image_shape, ds.num_classes, args.hidden, seed=args.seed)
    result = train(ds, tables, params, cfg, val)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    qtable.save_tables(result.tables, out / "tables.json")
    save_classifier(result.params, out / "model.json")
    write_metrics(result.log, out / "metrics.csv")
    (out / "config.json").write_text(json.dumps(_config_doc(cfg, args.arch, args.hidden), indent=2) + "\n")
    last = result.log[-1] if result.log else None
    if last:
        print(f"epochs={last['epoch']} steps={last['step']} loss={last['loss']:.6g} train_acc={last['train_acc']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = load_dataset(args.data)
    tables, params, cfg = _load_model_dir(args.model)
    acc = evaluate(ds, tables, params, masked=args.masked, config=cfg)
    print("accuracy,masked")
    print(f"{acc!r},{int(args.masked)}")
    return EXIT_OK


def cmd_attack(args) -> int:
    try:
        attack = AttackConfig(args.method, tuple(args.eps), args.steps)
    except ValueError as exc:
        raise UsageError(str(exc))
    ds = load_dataset(args.data)
    tables, params, cfg = _load_model_dir(args.model)
    clean = evaluate(ds, tables, params, config=cfg)
    robust = adversarial_eval(ds, tables, params, attack, cfg.layer_config(training=False))
    print("method,eps,robust_acc,clean_acc")
    for eps, acc in robust.items():
        print(f"{attack.method.value},{eps!r},{acc!r},{clean!r}")
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jpeg-dl", description="Differentiable JPEG layer toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gradcheck", help="finite-difference check of quantizer and layer gradients")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--levels", type=_int_list, default=[3, 8, 128], help="comma-separated L values")
    p.add_argument("--masked", action="store_true")
    p.add_argument("--layer-configs", type=int, default=4, help="full-layer configurations (0 skips)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("curve", help="CSV of Q_u, Q_d and its partials over a z range")
    p.add_argument("--q", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=5.0)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--range", type=_range, default=(-4.0, 4.0), help="lo:hi (write --range=-4:4)")
    p.add_argument("--step", type=float, default=0.01)
    p.add_argument("--masked", action="store_true")
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_curve)

    p = sub.add_parser("synth", help="write the synthetic two-class dataset to a directory")
    p.add_argument("--n-per-class", type=int, default=32)
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--format", choices=["ppm", "raw"], default="ppm")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("init", help="initialise quantization tables")
    p.add_argument("--strategy", choices=["magnitude", "sensitivity", "ones"], required=True)
    p.add_argument("--data")
    p.add_argument("--model", help="model.json or trained model directory (sensitivity)")
    p.add_argument("--b", type=int, default=qtable.DEFAULT_BITS)
    p.add_argument("--levels", type=int, default=None, help="override L (default 2**(b-1))")
    p.add_argument("--alpha", type=float, default=qtable.DEFAULT_ALPHA)
    p.add_argument("--hbar", type=float, default=None)
    p.add_argument("--subsampling", choices=[m.value for m in SubsamplingMode], default="444")
    p.add_argument("--alt-denominator", action="store_true", help="use sqrt(2**b - 1) for magnitude init")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="jointly train tables and a classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--tables", help="initial tables (default: magnitude init)")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=125)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", choices=["linear", "mlp"], default="linear")
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--model-lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--jpeg-optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--jpeg-lr", type=float, default=None, help="default 0.003 (adam) or 0.5 (sgd)")
    p.add_argument("--train-alpha", action="store_true")
    p.add_argument("--hbar", type=float, default=None, help="gradient scaling constant")
    p.add_argument("--variant", choices=[v.value for v in QuantizerVariant], default="soft")
    p.add_argument("--subsampling", choices=[m.value for m in SubsamplingMode], default="444")
    p.add_argument("--masked", action="store_true")
    p.add_argument("--rounds", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a trained model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True, help="directory written by train")
    p.add_argument("--masked", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attack", help="FGSM/PGD robust accuracy")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--method", choices=["fgsm", "pgd"], default="fgsm")
    p.add_argument("--eps", type=_float_list, default=[1.0, 2.0, 3.0, 4.0], help="pixel units, comma-separated")
    p.add_argument("--steps", type=int, default=5)
    p.set_defaults(func=cmd_attack)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (OSError, FormatError, qtable.TableFormatError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
