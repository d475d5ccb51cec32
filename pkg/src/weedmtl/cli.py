"""Command-line surface: profile, synthesize, train, evaluate, verify, bench.

Every subcommand is deterministic given --seed (bench timings aside), and
every command that writes artifacts drops a run_config.json beside them
recording the resolved options. Domain failures print one
"error:<category>: message" line and exit 1; usage errors exit 2.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .data import (AugConfig, SynthSpec, load_arrays, load_image, load_manifest,
                   synthesize_dataset)
from .errors import ConfigError, DataError, DimensionError
from .gradcam import grad_cam
from .gradcheck import model_check, primitive_checks
from .losses import LossWeights
from .model import (AGG_CHANNEL_CHOICES, TASKS, ModelConfig, build,
                    build_single_task, parse_kernel_config)
from .profile import profile
from .tensor import Tensor, no_grad
from .training import (TrainConfig, evaluate_model, restore_model,
                       restore_optimizer, save_checkpoint, train)

SIZES = ("small", "medium", "large")


def _add_model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--size", choices=SIZES, default="medium")
    p.add_argument("--kernel", default="s0m3e0",
                   help="UIB kernel triple, e.g. s0m3e0 or s5m3e5")
    p.add_argument("--se", action=argparse.BooleanOptionalAction, default=True,
                   help="squeeze-excitation in UIB blocks")
    p.add_argument("--agg-channels", type=int, choices=AGG_CHANNEL_CHOICES,
                   default=None, help="override aggregation width")
    p.add_argument("--aux", action=argparse.BooleanOptionalAction, default=True,
                   help="training-time auxiliary segmentation heads")
    p.add_argument("--tasks", default="seg,height,week",
                   help="comma-separated subset of seg,height,week")


def _config_from_args(args) -> ModelConfig:
    ks, km, ke = parse_kernel_config(args.kernel)
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    return ModelConfig(size=args.size, kernel_start=ks, kernel_mid=km, kernel_end=ke,
                       use_se=args.se, agg_channels=args.agg_channels,
                       use_aux=args.aux, tasks=tasks).validate()


def _write_run_config(out_dir: Path, command: str, args) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {k: (str(v) if isinstance(v, Path) else v)
                for k, v in sorted(vars(args).items()) if k != "func"}
    payload = {"command": command, "version": __version__, "resolved": resolved}
    with open(out_dir / "run_config.json", "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands

def _cmd_describe(args) -> int:
    if args.sweep:
        rows = []
        for size in SIZES:
            rows.append({"size": size, "kernel": "s0m3e0", "se": True, "agg": None})
        for kernel in ("s0m3e0", "s1m3e0", "s0m3e1", "s1m3e1",
                       "s5m3e0", "s0m3e5", "s5m3e5"):
            rows.append({"size": "medium", "kernel": kernel, "se": True, "agg": None})
        rows.append({"size": "medium", "kernel": "s0m3e0", "se": False, "agg": None})
        for agg in AGG_CHANNEL_CHOICES:
            rows.append({"size": "medium", "kernel": "s0m3e0", "se": True, "agg": agg})
        for row in rows:
            ks, km, ke = parse_kernel_config(row["kernel"])
            cfg = ModelConfig(size=row["size"], kernel_start=ks, kernel_mid=km,
                              kernel_end=ke, use_se=row["se"], agg_channels=row["agg"])
            rep = profile(cfg, input_hw=(args.input_size,) * 2)
            print(json.dumps({
                "size": row["size"], "kernel": row["kernel"], "se": row["se"],
                "agg_channels": row["agg"], "params": rep.total_params,
                "flops": rep.total_flops, "convention": rep.convention,
            }))
        return 0
    cfg = _config_from_args(args)
    rep = profile(cfg, input_hw=(args.input_size,) * 2)
    print(rep.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "profile.json").write_text(rep.to_json() + "\n")
        _write_run_config(out, "describe", args)
    return 0


def _cmd_synth(args) -> int:
    species = tuple(range(1, args.species + 1))
    spec = SynthSpec(species=species, image_size=args.image_size,
                     px_per_cm=args.px_per_cm, seed=args.seed)
    fr = [float(x) for x in args.split.split(",")]
    if len(fr) != 3:
        raise ConfigError(f"--split needs three comma-separated fractions, got {args.split!r}")
    fractions = {"train": fr[0], "val": fr[1], "test": fr[2]}
    out = Path(args.out)
    samples, manifest = synthesize_dataset(spec, n_per_cell=args.n, out_dir=out,
                                           split_fractions=fractions)
    _write_run_config(out, "synth", args)
    print(json.dumps({"samples": len(samples), "manifest": str(out / "manifest.json"),
                      "image_size": args.image_size}))
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    samples = load_arrays(manifest, args.split)
    if not samples:
        raise DataError(f"manifest has no samples in split {args.split!r}")

    out = Path(args.out)
    start_iteration = 0
    optimizer = None
    if args.resume:
        model, meta, arrays = restore_model(args.resume)
        optimizer = restore_optimizer(model, meta, arrays,
                                      weight_decay=args.weight_decay)
        start_iteration = meta["iteration"]
    else:
        model = build(_config_from_args(args), seed=args.seed)

    aug = None
    if args.crop:
        aug = AugConfig(target_size=(args.crop, args.crop))
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                      base_lr=args.base_lr, warmup_iters=args.warmup,
                      min_lr=args.min_lr, weight_decay=args.weight_decay,
                      loss_weights=LossWeights(), aug=aug, seed=args.seed,
                      use_class_weights=not args.uniform_class_weights)
    result = train(model, samples, cfg, optimizer=optimizer,
                   start_iteration=start_iteration, log_path=out / "loss.csv")
    save_checkpoint(out / "checkpoint.npz", model, result.optimizer,
                    iteration=result.iterations, extra={"seed": args.seed})
    _write_run_config(out, "train", args)
    last = result.rows[-1] if result.rows else None
    print(json.dumps({"iterations": result.iterations,
                      "final_loss": last["loss_total"] if last else None,
                      "loss_csv": str(out / "loss.csv"),
                      "checkpoint": str(out / "checkpoint.npz")}))
    return 0


def _cmd_eval(args) -> int:
    model, _, _ = restore_model(args.checkpoint)
    manifest = load_manifest(args.manifest)
    samples = load_arrays(manifest, args.split)
    if not samples:
        raise DataError(f"manifest has no samples in split {args.split!r}")
    report = evaluate_model(model, samples)
    print(report.to_json())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"metrics_{args.split}.json").write_text(report.to_json() + "\n")
        _write_run_config(out, "eval", args)
    return 0


def _cmd_gradcheck(args) -> int:
    results = []
    if not args.tiny:
        results += primitive_checks()
    results += model_check()
    failed = [r for r in results if not r.passed]
    for r in results:
        print(r)
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 1 if failed else 0


def _time_forward(model, x: np.ndarray, warmup: int, iters: int) -> float:
    model.eval()
    with no_grad():
        for _ in range(warmup):
            model(Tensor(x))
        laps = []
        for _ in range(iters):
            t0 = time.perf_counter()
            model(Tensor(x))
            laps.append((time.perf_counter() - t0) * 1000.0)
    return statistics.median(laps)


def _cmd_bench(args) -> int:
    cfg = _config_from_args(args)
    if set(cfg.tasks) != set(TASKS):
        raise ConfigError("bench compares against all three single-task builds; "
                          "run it with --tasks seg,height,week")
    rng = np.random.default_rng(args.seed)
    x = rng.standard_normal((1, 3, args.input_size, args.input_size)).astype(np.float32)

    multi = build(cfg, seed=args.seed)
    multi_ms = _time_forward(multi, x, args.warmup, args.iters)
    singles = {}
    for task in TASKS:
        m = build_single_task(cfg, task, seed=args.seed)
        singles[task] = _time_forward(m, x, args.warmup, args.iters)
    total_single = sum(singles.values())
    print(json.dumps({
        "input_size": args.input_size, "warmup": args.warmup, "iters": args.iters,
        "multitask_ms": multi_ms,
        "single_task_ms": singles,
        "single_task_sum_ms": total_single,
        "latency_ratio": multi_ms / total_single,
    }, indent=2))
    return 0


def _cmd_gradcam(args) -> int:
    from .data import normalize_image, save_image

    model, _, _ = restore_model(args.checkpoint)
    image = load_image(args.image)
    x = normalize_image(image)[None].astype(np.float32)
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for task in tasks:
        heat, degenerate = grad_cam(model, x, task)
        path = out / f"gradcam_{task}.png"
        save_image(np.repeat(heat[0], 3, axis=0), path)
        summary[task] = {"path": str(path), "degenerate": degenerate,
                         "shape": list(heat.shape)}
    _write_run_config(out, "gradcam", args)
    print(json.dumps(summary, indent=2))
    return 0


# ---------------------------------------------------------------------------
# parser / dispatch

def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="weedmtl",
                                description="multi-task plant model toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("describe", help="parameter/FLOP profile for a config")
    _add_model_args(d)
    d.add_argument("--input-size", type=int, default=512)
    d.add_argument("--sweep", action="store_true",
                   help="emit the ablation grid as JSON lines")
    d.add_argument("--out", default=None)
    d.set_defaults(func=_cmd_describe)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, default=1, help="samples per species/week cell")
    s.add_argument("--species", type=int, default=16, help="number of species (1..16)")
    s.add_argument("--image-size", type=int, default=512)
    s.add_argument("--px-per-cm", type=float, default=None)
    s.add_argument("--split", default="0.8,0.1,0.1")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=_cmd_synth)

    t = sub.add_parser("train", help="train on a manifest")
    _add_model_args(t)
    t.add_argument("--manifest", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--base-lr", type=float, default=2e-4)
    t.add_argument("--warmup", type=int, default=1500)
    t.add_argument("--min-lr", type=float, default=0.0)
    t.add_argument("--weight-decay", type=float, default=1e-4)
    t.add_argument("--crop", type=int, default=0,
                   help="enable augmentation with this crop size (0 = off)")
    t.add_argument("--uniform-class-weights", action="store_true")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.add_argument("--seed", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="metrics report for a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", default=None)
    e.set_defaults(func=_cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    g.add_argument("--tiny", action="store_true",
                   help="only the whole-model check, skip per-primitive runs")
    g.set_defaults(func=_cmd_gradcheck)

    b = sub.add_parser("bench", help="latency: multitask vs single-task sum")
    _add_model_args(b)
    b.add_argument("--input-size", type=int, default=512)
    b.add_argument("--warmup", type=int, default=20)
    b.add_argument("--iters", type=int, default=100)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=_cmd_bench)

    c = sub.add_parser("gradcam", help="activation heatmaps for one image")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--image", required=True)
    c.add_argument("--tasks", default="seg,height,week")
    c.add_argument("--out", required=True)
    c.set_defaults(func=_cmd_gradcam)
    return p


def dispatch(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error:config: {exc}", file=sys.stderr)
    except DimensionError as exc:
        print(f"error:dimension: {exc}", file=sys.stderr)
    except DataError as exc:
        print(f"error:data: {exc}", file=sys.stderr)
    except FileNotFoundError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
    return 1


def main() -> None:
    raise SystemExit(dispatch())


if __name__ == "__main__":
    main()
