"""Command-line interface: synth / discover / eval / moe-check / render.

Exit codes: 0 success, 1 validation or input error (message names the
offending flag or file), 2 gradient-check failure in moe-check. All file
outputs are byte-deterministic given identical inputs; every written
report embeds the effective configuration and the tool version.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor

from . import __version__
from .discovery import DiscoveryConfig, discover
from .formats import (
    FormatError,
    fmt_float,
    load_scene,
    read_boxes,
    write_boxes,
    write_records,
    write_report,
)
from .metrics import evaluate
from .moe import fault_injection_error, moe_gradient_report, sample_check_instance
from .render import render
from .synth import FragmentSpec, derive_scene_specs, generate, save_synth_scene

TOOL = f"ow3d {__version__}"


class _Parser(argparse.ArgumentParser):
    # validation failures exit 1 (argparse default is 2, reserved for moe-check)
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(self._exit_with(message))

    @staticmethod
    def _exit_with(message) -> int:
        print(f"error: {message}", file=sys.stderr)
        return 1


def _parse_deltas(raw: str):
    try:
        deltas = tuple(float(p) for p in raw.split(",") if p.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"--deltas: not a number list: {raw!r}") from None
    if not deltas:
        raise argparse.ArgumentTypeError("--deltas: empty list")
    return deltas


def _parse_range(raw: str):
    parts = raw.split("..")
    try:
        if len(parts) == 1:
            lo = hi = int(parts[0])
        elif len(parts) == 2:
            lo, hi = int(parts[0]), int(parts[1])
        else:
            raise ValueError
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"--objects: expected N or LO..HI, got {raw!r}"
        ) from None
    if lo < 0 or hi < lo:
        raise argparse.ArgumentTypeError(f"--objects: invalid range {raw!r}")
    return lo, hi


def _parse_grid(raw: str):
    parts = raw.lower().split("x")
    try:
        dims = tuple(int(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"--grid: expected XxYxZ, got {raw!r}") from None
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise argparse.ArgumentTypeError(f"--grid: expected three positive dims, got {raw!r}")
    return dims


def build_parser() -> _Parser:
    parser = _Parser(prog="ow3d", description=__doc__)
    parser.add_argument("--version", action="version", version=TOOL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[], help="generate synthetic scenes")
    p.add_argument("--seed", type=int, required=True, help="master seed (u64)")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--objects", type=_parse_range, default=(3, 8), metavar="LO..HI")
    p.add_argument("--frag", type=int, default=1, help="fragments per mask (1 = clean)")
    p.add_argument("--drop", type=float, default=0.0, help="fragment drop probability")
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=160)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("discover", help="run discovery on one scene")
    p.add_argument("--scene", required=True, help="scene manifest path")
    p.add_argument("--deltas", type=_parse_deltas, default=(0.2, 0.5, 1.0, 2.0))
    p.add_argument("--n-point", type=int, default=None, help="per-scale budget (default: half of assigned pixels)")
    p.add_argument("--search-radius", type=float, default=1.5)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--nms-iou-3d", type=float, default=0.5)
    p.add_argument("--score-thresh", type=float, default=0.6)
    p.add_argument("--cluster-eps", type=float, default=0.1)
    p.add_argument("--cluster-min-pts", type=int, default=5)
    p.add_argument("--cluster-min-points", type=int, default=20)
    p.add_argument("--out", required=True, help="output boxes file")

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", nargs="+", required=True, help="prediction boxes file(s)")
    p.add_argument("--gt", nargs="+", required=True, help="ground-truth manifest(s)")
    p.add_argument("--iou", type=float, default=0.25)
    p.add_argument("--split-ap", choices=("none", "ignore-other"), default="none")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--report", required=True, help="output report path")

    p = sub.add_parser("moe-check", help="finite-difference check of the fusion kernel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--grid", type=_parse_grid, default=(4, 4, 4))
    p.add_argument("--router-hidden", type=int, default=16)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)

    p = sub.add_parser("render", help="render a scene and boxes to SVG")
    p.add_argument("--scene", required=True)
    p.add_argument("--boxes", default=None, help="optional boxes file to overlay")
    p.add_argument("--out", required=True, help="output SVG path")

    return parser


def _cmd_synth(args) -> int:
    if args.scenes < 0:
        print("error: --scenes must be >= 0", file=sys.stderr)
        return 1
    os.makedirs(args.out, exist_ok=True)
    lo, hi = args.objects
    specs = derive_scene_specs(
        args.seed,
        args.scenes,
        objects=(lo, hi),
        raster_width=args.width,
        raster_height=args.height,
        fragmentation=FragmentSpec(
            enabled=(args.frag > 1 or args.drop > 0.0),
            fragments=args.frag,
            drop=args.drop,
        ),
    )

    def build(i: int) -> str:
        scene_dir = os.path.join(args.out, f"scene_{i:04d}")
        save_synth_scene(generate(specs[i]), scene_dir)
        return os.path.join(f"scene_{i:04d}", "manifest.owtx")

    if args.jobs > 1 and args.scenes > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            manifests = list(pool.map(build, range(args.scenes)))
    else:
        manifests = [build(i) for i in range(args.scenes)]

    records = [
        (
            "config",
            {
                "drop": fmt_float(args.drop),
                "frag": str(args.frag),
                "height": str(args.height),
                "objects": f"{lo}..{hi}",
                "scenes": str(args.scenes),
                "seed": str(args.seed),
                "tool": TOOL,
                "width": str(args.width),
            },
        )
    ]
    for i, rel in enumerate(manifests):
        records.append(("scene", {"index": str(i), "manifest": rel}))
    write_records(records, os.path.join(args.out, "index.owtx"))
    return 0


def _cmd_discover(args) -> int:
    scene = load_scene(args.scene)
    config = DiscoveryConfig(
        deltas=args.deltas,
        n_point=args.n_point,
        search_radius_px=args.search_radius,
        nms_iou_2d=args.nms_iou,
        nms_iou_3d=args.nms_iou_3d,
        score_threshold=args.score_thresh,
        cluster_eps=args.cluster_eps,
        cluster_min_pts=args.cluster_min_pts,
        cluster_min_points=args.cluster_min_points,
    )
    found = discover(scene, config)
    header = {
        "cluster_eps": fmt_float(config.cluster_eps),
        "cluster_min_points": str(config.cluster_min_points),
        "cluster_min_pts": str(config.cluster_min_pts),
        "deltas": ",".join(fmt_float(d) for d in config.deltas),
        "n_point": "auto" if config.n_point is None else str(config.n_point),
        "nms_iou": fmt_float(config.nms_iou_2d),
        "nms_iou_3d": fmt_float(config.nms_iou_3d),
        "scene": args.scene,
        "score_thresh": fmt_float(config.score_threshold),
        "search_radius_px": fmt_float(config.search_radius_px),
        "tool": TOOL,
    }
    write_boxes(
        args.out,
        header,
        [d.box for d in found],
        extras=[
            {"proposal": d.proposal_index, "scales": ",".join(str(s) for s in d.scales)}
            for d in found
        ],
    )
    return 0


def _cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        print(
            f"error: --pred and --gt must pair up ({len(args.pred)} vs {len(args.gt)})",
            file=sys.stderr,
        )
        return 1

    def load_pair(i: int):
        _, preds = read_boxes(args.pred[i])
        scene = load_scene(args.gt[i])
        gts = [ann.box for ann in scene.annotations if ann.objectness == 1]
        tags = [ann.split for ann in scene.annotations if ann.objectness == 1]
        return preds, gts, tags

    if args.jobs > 1 and len(args.pred) > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            scenes = list(pool.map(load_pair, range(len(args.pred))))
    else:
        scenes = [load_pair(i) for i in range(len(args.pred))]

    report = evaluate(scenes, args.iou, split_ap=(args.split_ap == "ignore-other"))
    # --jobs is execution sizing, not result-affecting config: reports must
    # be byte-identical across parallelism levels, so it is not echoed
    config = {
        "gt": " ".join(args.gt),
        "iou": fmt_float(args.iou),
        "pred": " ".join(args.pred),
        "split_ap": args.split_ap,
        "tool": TOOL,
    }
    write_report(args.report, config, report.fields())
    return 0


def _cmd_moe_check(args) -> int:
    block, f_p, f_i, instance_seed = sample_check_instance(
        args.seed,
        channels=args.channels,
        dims=args.grid,
        router_hidden=args.router_hidden,
    )
    report = moe_gradient_report(block, f_p, f_i, step=args.step, seed=instance_seed)
    print(f"{TOOL} gradient check: seed={args.seed} channels={args.channels} "
          f"grid={args.grid[0]}x{args.grid[1]}x{args.grid[2]} step={args.step:g} tol={args.tol:g}")
    failed = False
    for name in sorted(report):
        err = report[name]
        ok = err < args.tol
        failed |= not ok
        print(f"  {name:<24s} max_rel_err={err:.3e}  {'PASS' if ok else 'FAIL'}")
    fault = fault_injection_error(block, f_p, f_i, step=args.step, seed=instance_seed)
    fault_ok = fault > 1e-2
    failed |= not fault_ok
    print(f"  fault-injection check    rel_err={fault:.3e}  "
          f"{'PASS (detected)' if fault_ok else 'FAIL (missed corruption)'}")
    print("RESULT:", "FAIL" if failed else "PASS")
    return 2 if failed else 0


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    preds = []
    if args.boxes is not None:
        _, preds = read_boxes(args.boxes)
    render(scene, preds, args.out)
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "discover": _cmd_discover,
    "eval": _cmd_eval,
    "moe-check": _cmd_moe_check,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 1
    try:
        return _COMMANDS[args.command](args)
    except FormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
