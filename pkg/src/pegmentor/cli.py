"""Headless command-line driver for every pipeline stage.

Exit codes are a stable contract: 0 success, 1 usage error, 2 data or
environment error. Every subcommand that samples takes an explicit --seed so
paper-protocol runs replay exactly.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import agent, checkpoint, config as config_mod
from . import overlay, pnp, server, service, sim
from .errors import MalformedFile

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(args) -> config_mod.AppConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.AppConfig()
    if getattr(args, "set", None):
        cfg = config_mod.apply_overrides(cfg, args.set)
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (defaults built in)")
    p.add_argument("--set", action="append", metavar="PATH=VALUE",
                   help="override any config field, e.g. episode.horizon=60")
    p.add_argument("--json", action="store_true", help="machine-readable output")


def cmd_demo_gen(args) -> int:
    if args.n < 1:
        print("error: --n must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load_config(args)
    episodes = sim.generate_demonstrations(args.n, cfg.episode, args.seed)
    try:
        sim.save_episodes(args.out, episodes, cfg.episode, args.seed)
    except OSError as e:
        print(f"error: cannot write {args.out}: {e}", file=sys.stderr)
        return EXIT_DATA
    successes = sum(ep.success for ep in episodes)
    if args.json:
        print(json.dumps({"episodes": len(episodes), "successes": successes,
                          "path": str(args.out)}))
    else:
        print(f"wrote {len(episodes)} episodes ({successes} successful) to {args.out}")
    return EXIT_OK


def _train_one(packed):
    cfg_json, demos_path, seed, out_dir = packed
    cfg = config_mod.from_json(cfg_json)
    episodes, ep_cfg, _ = sim.load_episodes(demos_path)
    train_cfg = dataclasses.replace(cfg.train, seed=seed)
    ac, stats = agent.train(cfg.episode, episodes, train_cfg)
    out_dir = Path(out_dir)
    ckpt = out_dir / f"policy-seed{seed}.pgm1"
    checkpoint.save_checkpoint(ckpt, ac)
    (out_dir / f"stats-seed{seed}.jsonl").write_text(stats.to_jsonl())
    rate = agent.evaluate(ac, cfg.episode, cfg.train.eval_episodes, seed=seed + 500_000)
    return seed, str(ckpt), rate


def cmd_train(args) -> int:
    cfg = _load_config(args)
    try:
        sim.load_episodes(args.demos)
    except FileNotFoundError:
        print(f"error: demos file {args.demos} not found", file=sys.stderr)
        return EXIT_DATA
    except MalformedFile as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    seeds = [int(s) for s in args.seeds.split(",") if s != ""]
    if not seeds:
        print("error: --seeds must list at least one seed", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    jobs = [(config_mod.to_json(cfg), args.demos, s, str(out_dir)) for s in seeds]
    if len(seeds) == 1 or args.sequential:
        results = [_train_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(min(len(seeds), args.workers)) as ex:
            results = list(ex.map(_train_one, jobs))

    results.sort(key=lambda r: -r[2])
    top = results[:3]
    best3 = float(np.mean([r[2] for r in top]))
    if args.json:
        print(json.dumps({"runs": [{"seed": s, "checkpoint": c, "eval_success_rate": r}
                                   for s, c, r in results],
                          "best3_mean": best3}))
    else:
        for s, c, r in results:
            print(f"seed {s}: eval success {r:.3f} -> {c}")
        print(f"best-{len(top)} mean success: {best3:.3f}")
    return EXIT_OK


def _resolve_policy(spec: str, ep_cfg: sim.EpisodeConfig):
    if spec == "scripted":
        return lambda s, g: sim.scripted_policy(s, g, ep_cfg)
    return checkpoint.load_checkpoint(spec)


def cmd_eval(args) -> int:
    if args.n_short + args.n_long < 1:
        print("error: at least one trial required", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load_config(args)
    try:
        policy = _resolve_policy(args.checkpoint, cfg.episode)
    except (FileNotFoundError, MalformedFile) as e:
        print(f"error: cannot load checkpoint: {e}", file=sys.stderr)
        return EXIT_DATA

    rows = []
    total_n, total_s = 0, 0.0
    for name, mode, n in (("Short range", "short", args.n_short),
                          ("Long range", "long", args.n_long)):
        if n == 0:
            continue
        ep_cfg = dataclasses.replace(cfg.episode, range_mode=mode)
        rate = agent.evaluate(policy, ep_cfg, n, seed=args.seed)
        rows.append((name, n, rate))
        total_n += n
        total_s += rate * n
    rows.append(("All", total_n, total_s / total_n))

    if args.json:
        print(json.dumps({"rows": [{"distance": d, "trials": n, "success_rate": r}
                                   for d, n, r in rows]}))
    else:
        print(f"{'Distance':<14}{'Trials':>12}{'Success Rate (%)':>20}")
        for d, n, r in rows:
            print(f"{d:<14}{f'{int(round(r * n))}/{n}':>12}{100 * r:>20.1f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        with open(args.clicks) as f:
            clicks = json.load(f)
        with open(args.intrinsics) as f:
            intr = json.load(f)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except json.JSONDecodeError as e:
        print(f"error: malformed input: {e}", file=sys.stderr)
        return EXIT_DATA
    try:
        from . import geometry as geo

        k = geo.CameraIntrinsics(fx=intr["fx"], fy=intr["fy"], cx=intr["cx"], cy=intr["cy"],
                                 width=int(intr.get("width", 640)),
                                 height=int(intr.get("height", 480)))
        corrs = [pnp.Correspondence(np.array(c["world"]),
                                    geo.Pixel(c["pixel"][0], c["pixel"][1]))
                 for c in clicks]
    except (KeyError, TypeError, ValueError) as e:
        print(f"error: malformed input field: {e}", file=sys.stderr)
        return EXIT_DATA
    if len(corrs) < 3:
        print(f"error: need at least 3 clicks, got {len(corrs)}", file=sys.stderr)
        return EXIT_USAGE
    try:
        result = pnp.solve_pnp(k, corrs)
    except pnp.DegenerateGeometry as e:
        print(f"error: degenerate geometry: {e}", file=sys.stderr)
        return EXIT_DATA
    service.save_calibration(args.out, result, k, corrs)
    if args.json:
        print(json.dumps({"rms_error_px": result.rms_error_px,
                          "converged": result.converged, "path": str(args.out)}))
    else:
        print(f"rms_error_px: {result.rms_error_px:.6g} "
              f"({'converged' if result.converged else 'not converged'})")
    return EXIT_OK


def cmd_bench_overlay(args) -> int:
    counts = [int(c) for c in args.counts.split(",")]
    if args.repeats < 1 or not counts:
        print("error: need counts and repeats >= 1", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load_config(args)
    report = overlay.bench_overlay_latency(counts, args.repeats, args.seed, rig=cfg.rig)
    Path(args.out).write_text(report.to_csv())
    means = [r["mean_ms"] for r in report.rows]
    realtime = {r["n_points"]: r["mean_ms"] <= 1000.0 / 30.0 for r in report.rows}
    monotone = all(a <= b for a, b in zip(means, means[1:]))
    if args.json:
        print(json.dumps({"rows": report.rows, "monotone": monotone,
                          "realtime_30hz": realtime}))
    else:
        for r in report.rows:
            hz = 1000.0 / r["mean_ms"]
            print(f"{r['n_points']:>6} points: {r['mean_ms']:8.3f} ms "
                  f"+- {r['std_ms']:.3f} ({hz:5.1f} Hz)")
        if 2600 in realtime:
            verdict = "holds" if realtime[2600] else "FAILS"
            print(f"real-time (>30 Hz) at 2600 points: {verdict}")
    if not monotone:
        print("warning: latency means are not monotone in point count", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_serve(args) -> int:
    cfg = _load_config(args)
    policy = None
    if args.policy:
        try:
            policy = _resolve_policy(args.policy, cfg.episode)
        except (FileNotFoundError, MalformedFile) as e:
            print(f"error: cannot load policy: {e}", file=sys.stderr)
            return EXIT_DATA
    host, _, port = args.bind.rpartition(":")
    svc = service.MentorService(cfg, policy=policy)
    srv = server.MentorServer(svc, host=host or "127.0.0.1", port=int(port),
                              ws_port=args.ws_port)

    import logging

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    try:
        asyncio.run(srv.serve_forever())
    except KeyboardInterrupt:
        print("interrupted, shutting down")
    except OSError as e:
        print(f"error: cannot bind {args.bind}: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def build_parser() -> _Parser:
    p = _Parser(prog="pegmentor",
                description="Peg-transfer guidance pipeline: demos, training, "
                            "calibration, overlay benchmark, and the console service.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("demo-gen", help="generate scripted demonstrations")
    d.add_argument("--n", type=int, required=True)
    d.add_argument("--seed", type=int, required=True)
    d.add_argument("--out", required=True)
    _add_common(d)
    d.set_defaults(fn=cmd_demo_gen)

    t = sub.add_parser("train", help="train policies, one run per seed")
    t.add_argument("--demos", required=True)
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--seeds", required=True, help="comma-separated seed list")
    t.add_argument("--workers", type=int, default=3)
    t.add_argument("--sequential", action="store_true")
    _add_common(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint, Table-style report")
    e.add_argument("--checkpoint", required=True,
                   help="checkpoint path, or 'scripted' for the demo policy")
    e.add_argument("--n-short", type=int, default=500)
    e.add_argument("--n-long", type=int, default=500)
    e.add_argument("--seed", type=int, required=True)
    _add_common(e)
    e.set_defaults(fn=cmd_eval)

    c = sub.add_parser("calibrate", help="solve a pose from a clicks file")
    c.add_argument("--clicks", required=True,
                   help="JSON list of {world:[x,y,z], pixel:[u,v]}")
    c.add_argument("--intrinsics", required=True, help="JSON intrinsics")
    c.add_argument("--out", required=True)
    _add_common(c)
    c.set_defaults(fn=cmd_calibrate)

    b = sub.add_parser("bench-overlay", help="overlay latency benchmark")
    b.add_argument("--counts", default="200,1000,2600,5000")
    b.add_argument("--repeats", type=int, default=300)
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--out", required=True, help="CSV output path")
    _add_common(b)
    b.set_defaults(fn=cmd_bench_overlay)

    s = sub.add_parser("serve", help="run the console service")
    s.add_argument("--bind", default="127.0.0.1:8642")
    s.add_argument("--ws-port", type=int, default=None,
                   help="also serve the protocol over WebSocket on this port")
    s.add_argument("--policy", help="checkpoint path or 'scripted'")
    _add_common(s)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MalformedFile as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
