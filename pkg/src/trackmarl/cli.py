"""Command-line interface: train, eval, sweep-dropout, plot.

Every training run directory receives the resolved config, per-seed metrics
and timing CSVs, and per-seed checkpoints; reruns with the same config and
seeds reproduce the metrics files byte for byte. Wallclock timings live in a
sidecar CSV precisely so the metrics files stay deterministic.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import arena, config, marl, nets, tracklets

OUT_ROOT_ENV = "TRACKMARL_OUT_ROOT"


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _resolve_out(args, cfg_path: Path) -> Path | None:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ROOT_ENV)
    if root:
        return Path(root) / cfg_path.stem
    return None


def _prepare_outdir(out: Path, overwrite: bool) -> bool:
    if out.exists() and any(out.iterdir()) and not overwrite:
        _err(f"output directory {out} is not empty (pass --overwrite to reuse it)")
        return False
    out.mkdir(parents=True, exist_ok=True)
    return True


def _load_run_config(args) -> config.RunConfig:
    cfg = config.load(args.config, args.override or ())
    if getattr(args, "seeds", None):
        seeds = tuple(int(s) for s in args.seeds.split(","))
        cfg = config.RunConfig(
            task=cfg.task,
            trainer=cfg.trainer,
            representation=cfg.representation,
            dropout=cfg.dropout,
            knn=cfg.knn,
            seeds=seeds,
            eval_dropout=cfg.eval_dropout,
        )
    return cfg


def _train_one(cfg: config.RunConfig, out: Path, seed: int) -> float:
    tag = f"seed{seed}"
    try:
        result = marl.train(
            cfg.task,
            cfg.trainer,
            representation=cfg.representation,
            dropout=cfg.dropout,
            knn=cfg.knn,
            seed=seed,
            eval_dropout=cfg.eval_dropout,
        )
    except marl.TrainDivergedError as err:
        k = (arena.layout(cfg.task).n_entities - 1) if cfg.knn is None else cfg.knn
        spec = marl.make_specs(cfg.task, cfg.representation, cfg.knn)[0]
        marl.save_agents(out / f"checkpoint_{tag}.ckpt", err.last_good_params, spec, k)
        marl.write_metrics_csv(out / f"metrics_{tag}.csv", err.metrics)
        raise
    marl.write_metrics_csv(out / f"metrics_{tag}.csv", result.metrics)
    marl.write_timing_csv(out / f"timing_{tag}.csv", result.timings)
    k = (arena.layout(cfg.task).n_entities - 1) if cfg.knn is None else cfg.knn
    marl.save_agents(out / f"checkpoint_{tag}.ckpt", result.params, result.specs[0], k)
    return result.final_metric


def cmd_train(args) -> int:
    try:
        cfg = _load_run_config(args)
    except config.ConfigError as err:
        _err(str(err))
        return 2
    out = _resolve_out(args, Path(args.config))
    if out is None:
        _err(f"no output directory: pass --out or set ${OUT_ROOT_ENV}")
        return 2
    if not _prepare_outdir(out, args.overwrite):
        return 1
    config.save_resolved(cfg, out / "resolved_config.json")
    finals = []
    for seed in cfg.seeds:
        try:
            final = _train_one(cfg, out, seed)
        except marl.TrainDivergedError as err:
            _err(f"seed {seed}: {err} (last good checkpoint written)")
            return 1
        finals.append((seed, final))
        print(f"seed={seed} final_metric={final!r}")
    with open(out / "final_metrics.csv", "w", encoding="utf-8") as f:
        f.write("seed,final_metric\n")
        for seed, final in finals:
            f.write(f"{seed},{final!r}\n")
    return 0


def cmd_eval(args) -> int:
    if args.episodes < 1:
        _err("at least 1 episode is required")
        return 2
    try:
        cfg = _load_run_config(args)
    except config.ConfigError as err:
        _err(str(err))
        return 2
    try:
        params_list, spec, knn = marl.load_agents(args.checkpoint)
    except nets.CheckpointError as err:
        _err(str(err))
        return 2
    lay = arena.layout(cfg.task)
    want_dim = tracklets.node_embedding_dim(lay.n_roles)
    if spec.node_dim != want_dim or len(params_list) != int(lay.controllable.sum()):
        _err(
            f"checkpoint was trained for node_dim={spec.node_dim}, {len(params_list)} agents; "
            f"this task needs node_dim={want_dim}, {int(lay.controllable.sum())} agents"
        )
        return 2
    factory = marl.EnvPipelineFactory(cfg.task, knn, cfg.dropout if cfg.eval_dropout else 0.0)
    specs = [spec] * len(params_list)
    mean_r, std_r, rewards = marl.evaluate(factory, params_list, specs, args.episodes, args.seed)
    print(f"mean_reward={mean_r!r} std_reward={std_r!r} episodes={args.episodes}")
    out = Path(args.out) if args.out else Path(str(args.checkpoint) + ".eval.csv")
    with open(out, "w", encoding="utf-8") as f:
        f.write("episode,reward\n")
        for i, r in enumerate(rewards):
            f.write(f"{i},{float(r)!r}\n")
        f.write(f"mean,{mean_r!r}\n")
        f.write(f"std,{std_r!r}\n")
    return 0


def cmd_sweep_dropout(args) -> int:
    try:
        rates = [float(r) for r in args.rates.split(",")]
    except ValueError:
        _err(f"cannot parse rates {args.rates!r}")
        return 2
    if len(set(rates)) != len(rates):
        _err("duplicate dropout rates")
        return 2
    if any(not 0.0 <= r <= 1.0 for r in rates):
        _err("dropout rates must lie in [0, 1]")
        return 2
    try:
        base = _load_run_config(args)
    except config.ConfigError as err:
        _err(str(err))
        return 2
    out = _resolve_out(args, Path(args.config))
    if out is None:
        _err(f"no output directory: pass --out or set ${OUT_ROOT_ENV}")
        return 2
    if not _prepare_outdir(out, args.overwrite):
        return 1
    per_rate = {}
    details = []
    for rate in rates:
        cfg = config.RunConfig(
            task=base.task,
            trainer=base.trainer,
            representation=base.representation,
            dropout=rate,
            knn=base.knn,
            seeds=base.seeds,
            eval_dropout=True,
        )
        rate_dir = out / f"rate_{rate:g}"
        rate_dir.mkdir(parents=True, exist_ok=True)
        config.save_resolved(cfg, rate_dir / "resolved_config.json")
        finals = []
        for seed in cfg.seeds:
            try:
                final = _train_one(cfg, rate_dir, seed)
            except marl.TrainDivergedError as err:
                _err(f"rate {rate} seed {seed}: {err}")
                return 1
            finals.append(final)
            details.append((rate, seed, final))
            print(f"rate={rate:g} seed={seed} final_metric={final!r}")
        per_rate[rate] = finals
    with open(out / "sweep_summary.csv", "w", encoding="utf-8") as f:
        f.write(",".join(f"{r:g}" for r in rates) + "\n")
        f.write(",".join(repr(float(np.mean(per_rate[r]))) for r in rates) + "\n")
        f.write(",".join(repr(float(np.std(per_rate[r]))) for r in rates) + "\n")
    with open(out / "sweep_details.csv", "w", encoding="utf-8") as f:
        f.write("dropout_rate,seed,final_metric\n")
        for rate, seed, final in details:
            f.write(f"{rate:g},{seed},{final!r}\n")
    return 0


# ---------------------------------------------------------------------------
# Plotting (dependency-free SVG)
# ---------------------------------------------------------------------------


def _svg_learning_curve(xs, means, lows, highs, path) -> None:
    width, height = 720, 440
    ml, mr, mt, mb = 70, 20, 20, 50
    x0, x1 = min(xs), max(xs)
    y0 = min(lows)
    y1 = max(highs)
    if y1 - y0 < 1e-12:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    span_x = max(x1 - x0, 1)

    def sx(x):
        return ml + (x - x0) / span_x * (width - ml - mr)

    def sy(y):
        return height - mb - (y - y0) / (y1 - y0) * (height - mt - mb)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    if any(h > l for l, h in zip(lows, highs)):
        band = (
            " ".join(f"{sx(x):.2f},{sy(h):.2f}" for x, h in zip(xs, highs))
            + " "
            + " ".join(f"{sx(x):.2f},{sy(l):.2f}" for x, l in zip(reversed(xs), reversed(lows)))
        )
        parts.append(f'<polygon points="{band}" fill="#9ecae1" fill-opacity="0.5" stroke="none"/>')
    line = " ".join(f"{sx(x):.2f},{sy(m):.2f}" for x, m in zip(xs, means))
    parts.append(f'<polyline points="{line}" fill="none" stroke="#08519c" stroke-width="2"/>')
    parts.append(
        f'<line x1="{ml}" y1="{height - mb}" x2="{width - mr}" y2="{height - mb}" stroke="black"/>'
    )
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{height - mb}" stroke="black"/>')
    for i in range(5):
        xv = x0 + span_x * i / 4
        yv = y0 + (y1 - y0) * i / 4
        parts.append(
            f'<text x="{sx(xv):.1f}" y="{height - mb + 18}" font-size="11" text-anchor="middle">{xv:g}</text>'
        )
        parts.append(
            f'<text x="{ml - 6}" y="{sy(yv) + 4:.1f}" font-size="11" text-anchor="end">{yv:.4g}</text>'
        )
        parts.append(
            f'<line x1="{ml}" y1="{sy(yv):.1f}" x2="{width - mr}" y2="{sy(yv):.1f}" stroke="#dddddd"/>'
        )
    parts.append(
        f'<text x="{(ml + width - mr) / 2}" y="{height - 12}" font-size="13" text-anchor="middle">training episodes</text>'
    )
    parts.append(
        f'<text x="16" y="{(mt + height - mb) / 2}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {(mt + height - mb) / 2})">mean eval reward</text>'
    )
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


def cmd_plot(args) -> int:
    runs = []
    for path in args.metrics:
        try:
            rows = marl.read_metrics_csv(path)
        except (OSError, ValueError) as err:
            _err(str(err))
            return 2
        if not rows:
            _err(f"{path}: no evaluation rounds")
            return 2
        runs.append(rows)
    xs = [r["train_episodes"] for r in runs[0]]
    for path, rows in zip(args.metrics[1:], runs[1:]):
        if [r["train_episodes"] for r in rows] != xs:
            _err(f"{path}: train_episodes do not match {args.metrics[0]}")
            return 2
    series = np.array([[r["mean_eval_reward"] for r in rows] for rows in runs])
    means = series.mean(axis=0)
    lows = series.min(axis=0)
    highs = series.max(axis=0)
    _svg_learning_curve(xs, means, lows, highs, args.out_svg)
    with open(args.out_csv, "w", encoding="utf-8") as f:
        f.write("train_episodes,mean_eval_reward,min_eval_reward,max_eval_reward\n")
        for x, m, lo, hi in zip(xs, means, lows, highs):
            f.write(f"{x},{float(m)!r},{float(lo)!r},{float(hi)!r}\n")
    print(f"wrote {args.out_svg} and {args.out_csv} ({len(runs)} runs, {len(xs)} rounds)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trackmarl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train per seed and write metrics/checkpoints")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/<config stem>)")
    p_train.add_argument("--seeds", help="comma-separated seed list overriding the config")
    p_train.add_argument("--override", action="append", metavar="K=V", help="dotted-path config override")
    p_train.add_argument("--overwrite", action="store_true")
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="greedy evaluation of a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--episodes", type=int, default=100)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.add_argument("--out", help="CSV output path (default <checkpoint>.eval.csv)")
    p_eval.add_argument("--override", action="append", metavar="K=V")
    p_eval.set_defaults(fn=cmd_eval)

    p_sweep = sub.add_parser("sweep-dropout", help="full training run per dropout rate per seed")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--rates", required=True, help="comma-separated rates, e.g. 0,0.1,0.2,0.4")
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--seeds")
    p_sweep.add_argument("--override", action="append", metavar="K=V")
    p_sweep.add_argument("--overwrite", action="store_true")
    p_sweep.set_defaults(fn=cmd_sweep_dropout)

    p_plot = sub.add_parser("plot", help="SVG learning curve with min/max band across seeds")
    p_plot.add_argument("metrics", nargs="+", help="metrics CSV files (one per seed)")
    p_plot.add_argument("--out-svg", required=True)
    p_plot.add_argument("--out-csv", required=True)
    p_plot.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
