"""Command-line entry point: ``vcamba <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import VcambaError
from .imageio import read_image, write_pgm

EXIT_IO = 1


def _cmd_gen(args) -> int:
    from .synth import SpecRanges, make_dataset, save_dataset

    ranges = SpecRanges(height=args.size, width=args.size, frames=args.frames,
                        camouflage=args.camouflage)
    train, val = make_dataset(args.clips, ranges, args.seed)
    save_dataset(train, val, args.out)
    print(f"wrote {len(train)} train and {len(val)} val clips to {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .train import load_config, train

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    def report(row):
        if row["val_mDice"] != "":
            print(f"step {row['step'] + 1}: loss {row['loss']:.4f}  val mDice {row['val_mDice']:.4f}")

    res = train(cfg, args.out, progress=report)
    print(", ".join(f"{k} {v:.4f}" for k, v in res.metrics.items()))
    return 0


def _sequences(root: Path) -> list[Path]:
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    return subdirs or [root]


def _cmd_eval(args) -> int:
    from .errors import DataError
    from .metrics import evaluate, mean_scores
    from .train import write_metrics

    pred_root, gt_root = Path(args.pred), Path(args.gt)
    for d in (pred_root, gt_root):
        if not d.is_dir():
            raise DataError(f"{d} is not a directory")
    named, every = [], []
    for seq in _sequences(gt_root):
        rel = seq.relative_to(gt_root)
        rows = []
        for gt_file in sorted(seq.glob("*.pgm")):
            pred_file = pred_root / rel / gt_file.name
            if not pred_file.exists():
                raise DataError(f"missing prediction {pred_file}")
            rows.append(evaluate(read_image(pred_file), read_image(gt_file) > 0.5))
        if rows:
            named.append((str(rel) if str(rel) != "." else seq.name, mean_scores(rows)))
            every.extend(rows)
    if not every:
        raise DataError(f"no PGM masks under {gt_root}")
    named.append(("mean", mean_scores(every)))
    write_metrics(named, args.out)
    print(Path(args.out).read_text(), end="")
    return 0


def _cmd_ablate(args) -> int:
    from .train import TrainConfig, ablate, load_config

    cfg = load_config(args.config) if args.config else TrainConfig()
    if args.steps is not None:
        cfg = replace(cfg, steps=args.steps)
    variants = list(dict.fromkeys(["full", *args.variant]))
    seeds = [int(s) for s in args.seeds.split(",")]
    rows = ablate(variants, cfg, seeds, args.out)
    for r in rows:
        print(f"{r['variant']:>16} seed {r['seed']}: mDice {r['mDice']:.4f}  MAE {r['MAE']:.4f}")
    return 0


def _scan_grid(kind: str, h: int, w: int, n: int):
    from . import scan_paths as S

    if kind == "cross":
        return S.cross_scan_paths(h, w), (h, w)
    if kind == "spiral":
        return (S.spiral_scan_path(h, w, "low2high"), S.spiral_scan_path(h, w, "high2low")), (h, w)
    if kind == "spatiotemporal":
        return S.spatiotemporal_paths(n, h * w), (n, h * w)
    paths = S.dual_domain_paths(h * w)
    return (paths["seq2seq"], paths["point2point"]), (2, h * w)


def _cmd_scan_viz(args) -> int:
    paths, (rows, cols) = _scan_grid(args.kind, args.h, args.w, args.n)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "step", "row", "col"])
    for p in paths:
        for step, (r, c) in enumerate(p.cells(cols)):
            writer.writerow([p.name, step, r, c])
    if args.out is None:
        print(buf.getvalue(), end="")
        return 0
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".csv").write_text(buf.getvalue())
    tiles = []
    for p in paths:
        img = np.zeros(rows * cols)
        img[p.order] = np.arange(len(p)) / max(len(p) - 1, 1)
        tiles += [img.reshape(rows, cols), np.zeros((rows, 1))]
    write_pgm(out.with_suffix(".pgm"), np.concatenate(tiles[:-1], axis=1))
    print(f"wrote {out.with_suffix('.csv')} and {out.with_suffix('.pgm')}")
    return 0


def _rescale(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    return np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)


def _cmd_fft_viz(args) -> int:
    from .frequency import fft2_centered, ifft2_from_amp_phase

    img = read_image(args.image)
    gray = img.mean(axis=0) if img.ndim == 3 else img
    spec = fft2_centered(gray)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pgm(out / "amplitude.pgm", _rescale(np.log1p(spec.amplitude)))
    write_pgm(out / "phase.pgm", (spec.phase + np.pi) / (2 * np.pi))
    amp_only = ifft2_from_amp_phase(spec.amplitude, np.zeros_like(spec.phase))
    phase_only = ifft2_from_amp_phase(np.ones_like(spec.amplitude), spec.phase)
    write_pgm(out / "amplitude_only.pgm", _rescale(amp_only))
    write_pgm(out / "phase_only.pgm", _rescale(phase_only))
    print(f"wrote amplitude, phase and both reconstructions to {out}")
    return 0


def _cmd_bench(args) -> int:
    from . import bench

    results = bench.run(args.kernel, bench.lengths_between(args.lmin, args.lmax), args.reps, args.seed)
    bench.write_csv(results, args.kernel, args.out)
    ratios = bench.doubling_ratios(results)
    for (n, t), r in zip(results, [None, *ratios]):
        print(f"L={n:>6}  median {t * 1e3:9.3f} ms" + ("" if r is None else f"  x{r:.2f}"))
    return 0


def _cmd_gradcheck(args) -> int:
    from .checks import BLOCKS, check_block

    names = sorted(BLOCKS) if args.block == "all" else [args.block]
    status = 0
    for name in names:
        err = check_block(name, args.seed)
        ok = err <= 1e-4
        print(f"{name}: max rel err {err:.3e} {'ok' if ok else 'FAIL'}")
        status |= 0 if ok else 3
    return status


def build_parser() -> argparse.ArgumentParser:
    from .bench import KERNELS
    from .checks import BLOCKS

    ap = argparse.ArgumentParser(prog="vcamba", description="Desk-scale video camouflage detection toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic clip dataset")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clips", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--camouflage", type=float, default=0.9)
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a model from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score PGM predictions against PGM ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; eval is deterministic")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="train ablation variants next to the full model")
    p.add_argument("--variant", action="append", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seeds", default="0")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("scan-viz", help="dump a scan order as CSV and PGM")
    p.add_argument("--kind", choices=("cross", "spiral", "spatiotemporal", "dualdomain"), required=True)
    p.add_argument("--h", type=int, required=True)
    p.add_argument("--w", type=int, required=True)
    p.add_argument("--n", type=int, default=2)
    p.add_argument("--out", default=None, help="path prefix; CSV goes to stdout when omitted")
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity; paths are deterministic")
    p.set_defaults(func=_cmd_scan_viz)

    p = sub.add_parser("fft-viz", help="amplitude/phase maps and single-component reconstructions")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="accepted for uniformity")
    p.set_defaults(func=_cmd_fft_viz)

    p = sub.add_parser("bench", help="median wall time per sequence length")
    p.add_argument("--kernel", choices=KERNELS, required=True)
    p.add_argument("--lmin", type=int, default=1024)
    p.add_argument("--lmax", type=int, default=16384)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of one block")
    p.add_argument("--block", choices=[*sorted(BLOCKS), "all"], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (OSError, ValueError, VcambaError) as exc:
        print(f"vcamba {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
