"""Command-line entry points: generate | train | eval | ablate.

Exit codes: 0 success, 1 usage or config error, 2 I/O error, 3 validation
error (e.g. a private set covering every class, or a checkpoint whose class
space does not match the archive).

Output layout under ``run.out``::

    benchmark/                     archive written by ``generate``
    generate.ini                   effective config of the archive
    <mode>/seed<k>/config.ini      effective config of one training run
    <mode>/seed<k>/log.csv         per-step training log
    <mode>/seed<k>/curve.svg       loss and q_t curves
    <mode>/seed<k>/model.ckpt      checkpoint (student, teacher, velocity)
    <mode>/seed<k>/report.json     metrics of the EMA teacher on the eval split
    <mode>/seed<k>/report.csv
    <mode>/seed<k>/vis/*.ppm       image | ground truth | prediction strips
    ablation/runs.csv              one row per (mode, seed)
    ablation/summary.csv           mean and sample std per mode
"""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import nn
from .config import ConfigError, RunConfig, dump_run_config, load_run_config
from .dataset import build_benchmark, load_archive, save_archive
from .metrics import colorize, evaluate_predictions, mean_std
from .netpbm import to_uint8, write_ppm
from .trainer import (
    LOG_FIELDS,
    MODES,
    TrainerConfig,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
    with_things,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_INVALID = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def run_dir(rc: RunConfig, mode: str, seed: int) -> Path:
    return rc.out / mode / f"seed{seed}"


def trainer_for(rc: RunConfig, bench, mode: str | None, seed: int) -> TrainerConfig:
    cfg = rc.trainer if mode is None else replace(rc.trainer, mode=mode)
    return with_things(replace(cfg, seed=seed), bench.thing_ids)


def _check_crop(cfg: TrainerConfig, bench) -> None:
    h, w = bench.source_images.shape[1:3]
    if cfg.flags.decon and cfg.decon.morph.crop_size > min(h, w):
        raise ValueError(f"crop_size {cfg.decon.morph.crop_size} exceeds the {h}x{w} archive images")


# -- artifacts ---------------------------------------------------------------

def log_csv(log: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for row in log:
        w.writerow([row["step"]] + [repr(float(row[k])) for k in LOG_FIELDS[1:]])
    return buf.getvalue()


def curve_svg(log: list[dict], keys=("loss_source", "loss_target", "loss_decon", "q_t"), width=640, height=320) -> str:
    """Plain SVG line chart of selected log columns against the step."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#7f7f7f")
    steps = np.array([r["step"] for r in log], dtype=float)
    series = {k: np.array([r[k] for r in log], dtype=float) for k in keys}
    lo = min(float(v.min()) for v in series.values())
    hi = max(float(v.max()) for v in series.values())
    if hi == lo:
        hi = lo + 1.0
    m = 40
    x0, x1 = steps.min(), max(steps.max(), steps.min() + 1)

    def px(s, v):
        x = m + (s - x0) / (x1 - x0) * (width - 2 * m)
        y = height - m - (v - lo) / (hi - lo) * (height - 2 * m)
        return f"{x:.1f},{y:.1f}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{m}" y1="{height - m}" x2="{width - m}" y2="{height - m}" stroke="black"/>',
        f'<line x1="{m}" y1="{m}" x2="{m}" y2="{height - m}" stroke="black"/>',
        f'<text x="{m}" y="{m - 8}" font-size="11">{hi:.3g}</text>',
        f'<text x="{m}" y="{height - m + 14}" font-size="11">{lo:.3g} at step {int(x0)}</text>',
        f'<text x="{width - m}" y="{height - m + 14}" font-size="11" text-anchor="end">step {int(x1)}</text>',
    ]
    # thin long logs so the file stays small
    stride = max(1, len(steps) // 500)
    for i, (k, v) in enumerate(series.items()):
        pts = " ".join(px(s, y) for s, y in zip(steps[::stride], v[::stride]))
        out.append(f'<polyline fill="none" stroke="{colors[i % len(colors)]}" stroke-width="1" points="{pts}"/>')
        out.append(f'<text x="{width - m}" y="{m + 14 * i}" font-size="11" text-anchor="end" fill="{colors[i % len(colors)]}">{k}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_eval(out: Path, shape, theta, bench, cfg: TrainerConfig, n_vis: int = 8):
    """Predict on the eval split, write report.json/.csv and visual strips."""
    preds = predict(shape, theta, bench.eval_images, cfg, bench.cs)
    names = bench.class_names[: bench.cs.num_known] + ("unknown",)
    rep = evaluate_predictions(preds, bench.eval_labels, bench.cs, names)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "report.csv").write_text(rep.to_csv())
    vis = out / "vis"
    vis.mkdir(exist_ok=True)
    for i in range(min(n_vis, len(preds))):
        strip = np.concatenate(
            [to_uint8(bench.eval_images[i]), colorize(bench.eval_labels[i], bench.cs), colorize(preds[i], bench.cs)], axis=1
        )
        write_ppm(vis / f"{i:05d}.ppm", strip)
    return rep


def train_run(rc: RunConfig, bench, cfg: TrainerConfig, out: Path):
    _check_crop(cfg, bench)
    state, log = train(bench, cfg)
    out.mkdir(parents=True, exist_ok=True)
    echo = replace(rc, trainer=replace(rc.trainer, mode=cfg.mode))
    (out / "config.ini").write_text(dump_run_config(echo, {"mode": cfg.mode, "seed": cfg.seed}))
    (out / "log.csv").write_text(log_csv(log))
    (out / "curve.svg").write_text(curve_svg(log))
    save_checkpoint(out / "model.ckpt", state, cfg, bench.cs, bench.class_names)
    return state, log


# -- commands ----------------------------------------------------------------

def cmd_generate(rc: RunConfig, args) -> int:
    bench = build_benchmark(rc.scene, rc.counts, rc.data_seed)
    digest = save_archive(bench, rc.archive)
    rc.out.mkdir(parents=True, exist_ok=True)
    (rc.out / "generate.ini").write_text(dump_run_config(rc))
    print(f"{digest}  {rc.archive}")
    return EXIT_OK


def cmd_train(rc: RunConfig, args) -> int:
    bench = load_archive(rc.archive, with_eval=False)
    seed = rc.seeds[0] if args.seed is None else args.seed
    cfg = trainer_for(rc, bench, args.mode, seed)
    out = run_dir(rc, cfg.mode, seed)
    state, log = train_run(rc, bench, cfg, out)
    last = log[-1]
    print(f"{out}/model.ckpt step {state.step} loss {last['loss']:.4f} q_t {last['q_t']:.3f}")
    return EXIT_OK


def cmd_eval(rc: RunConfig, args) -> int:
    seed = rc.seeds[0] if args.seed is None else args.seed
    mode = args.mode or rc.trainer.mode
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir(rc, mode, seed) / "model.ckpt"
    state, cfg, cs, meta = load_checkpoint(ckpt)
    bench = load_archive(rc.archive)
    if cs != bench.cs:
        raise ValueError(f"checkpoint has {cs.num_known} known classes, archive has {bench.cs.num_known}")
    names = list(bench.class_names[: cs.num_known])
    if meta.get("class_names") and list(meta["class_names"][: cs.num_known]) != names:
        raise ValueError(f"checkpoint classes {meta['class_names']} do not match archive classes {names}")
    out = Path(args.report_dir) if args.report_dir else ckpt.parent
    rep = write_eval(out, cfg.net_shape(cs), state.teacher, bench, cfg)
    print(rep.summary_line())
    return EXIT_OK


def _ablation_job(job):
    rc, archive, mode, seed = job
    bench = load_archive(archive)
    cfg = trainer_for(rc, bench, mode, seed)
    out = run_dir(rc, mode, seed)
    t0 = time.perf_counter()
    state, _ = train_run(rc, bench, cfg, out)
    rep = write_eval(out, cfg.net_shape(bench.cs), state.teacher, bench, cfg)
    return mode, seed, rep.common_miou, rep.private_iou, rep.h_score, time.perf_counter() - t0


def ablate(rc: RunConfig, seeds=None, jobs: int | None = None, echo=print) -> list[dict]:
    """Every mode x seed on the archive at ``rc.archive``; returns summary rows."""
    seeds = tuple(rc.seeds if seeds is None else seeds)
    jobs = rc.jobs if jobs is None else jobs
    if not (rc.archive / "manifest.txt").is_file():
        bench = build_benchmark(rc.scene, rc.counts, rc.data_seed)
        echo(f"archive {save_archive(bench, rc.archive)}  {rc.archive}")
    work = [(rc, rc.archive, mode, seed) for mode in MODES for seed in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_ablation_job, work))
    else:
        results = []
        for job in work:
            results.append(_ablation_job(job))
            m, s, c, p, h, dt = results[-1]
            echo(f"{m:22s} seed {s}  common {100 * c:6.2f}  private {100 * p:6.2f}  H {100 * h:6.2f}  ({dt:.0f}s)")
    out = rc.out / "ablation"
    out.mkdir(parents=True, exist_ok=True)
    runs = io.StringIO()
    w = csv.writer(runs, lineterminator="\n")
    w.writerow(["config", "mode", "seed", "common", "private", "h_score"])
    for m, s, c, p, h, _ in results:
        w.writerow([MODES[m].letter, m, s, f"{100 * c:.4f}", f"{100 * p:.4f}", f"{100 * h:.4f}"])
    (out / "runs.csv").write_text(runs.getvalue())

    summary = []
    for mode in MODES:
        rows = [r for r in results if r[0] == mode]
        row = {"config": MODES[mode].letter, "mode": mode, "runs": len(rows)}
        for i, key in ((2, "common"), (3, "private"), (4, "h_score")):
            mu, sd = mean_std([100 * r[i] for r in rows])
            row[f"{key}_mean"], row[f"{key}_std"] = mu, sd
        summary.append(row)
    buf = io.StringIO()
    cols = ["config", "mode", "common_mean", "common_std", "private_mean", "private_std", "h_score_mean", "h_score_std", "runs"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in summary:
        w.writerow([f"{row[c]:.2f}" if isinstance(row[c], float) else row[c] for c in cols])
    (out / "summary.csv").write_text(buf.getvalue())
    return summary


def cmd_ablate(rc: RunConfig, args) -> int:
    seeds = tuple(int(s) for s in args.seeds.split(",")) if args.seeds else None
    summary = ablate(rc, seeds, args.jobs)
    for row in summary:
        print(
            f"{row['config']:4s} {row['mode']:22s} common {row['common_mean']:6.2f} ± {row['common_std']:5.2f}"
            f"  private {row['private_mean']:6.2f} ± {row['private_std']:5.2f}  H {row['h_score_mean']:6.2f} ± {row['h_score_std']:5.2f}"
        )
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opensetseg", description="Open-set domain adaptation lab for semantic segmentation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="INI run configuration")
        p.add_argument("--out", help="output directory (run.out)")
        p.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE")

    p = sub.add_parser("generate", help="write the synthetic benchmark archive")
    common(p)
    p.add_argument("--seed", type=int, help="benchmark seed (scene.seed)")
    for name, helptext in (("train", "train one mode"), ("eval", "evaluate a checkpoint")):
        p = sub.add_parser(name, help=helptext)
        common(p)
        p.add_argument("--mode", choices=list(MODES))
        p.add_argument("--seed", type=int, help="training seed (default: first of run.seeds)")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint path (default: the run directory's model.ckpt)")
            p.add_argument("--report-dir", help="where reports go (default: next to the checkpoint)")
    p = sub.add_parser("ablate", help="all five modes over several seeds")
    common(p)
    p.add_argument("--seeds", help="comma-separated training seeds (default: run.seeds)")
    p.add_argument("--jobs", type=int, help="parallel worker processes (default: run.jobs)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.override)
    if args.out:
        overrides.append(f"run.out={args.out}")
    if args.command == "generate" and args.seed is not None:
        overrides.append(f"scene.seed={args.seed}")
    try:
        rc = load_run_config(args.config, overrides)
        if args.command == "ablate" and args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return COMMANDS[args.command](rc, args)
    except ConfigError as exc:
        print(f"opensetseg: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"opensetseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"opensetseg: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
