"""Command-line surface: gen, splat, fit, propagate, sample, metrics, bench.

Every subcommand is deterministic given (inputs, seed, flags) regardless
of the worker count; SQUASPLAT_THREADS overrides the default parallelism.
Runtime failures exit 1 with a single machine-parsable line on stderr;
usage errors exit 2.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import backend, io, scenegen
from .core import FieldConfig, GridSpec, make_cluster
from .fit import FitConfig, LossWeights, fit_scene
from .metrics import default_rayset, iou_miou, ray_iou
from .splat import bench_splat, splat_naive, splat_tiled
from .temporal import FramePose, StreamConfig, run_stream
from .viewgeom import FrameData, SampleSpec, make_plane, sample_multiframe


def _vec3(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z got {text!r}")
    return parts


def _ints(text):
    return [int(v) for v in text.split(",")]


def _grid_from_args(args) -> GridSpec:
    if args.lower is not None or args.upper is not None or args.res is not None:
        if None in (args.lower, args.upper, args.res):
            raise ValueError("--lower/--upper/--res must be given together")
        return GridSpec(np.array(args.lower), np.array(args.upper), tuple(args.res))
    return scenegen.grid_preset(args.grid)


def _field_from_args(args, base: FieldConfig | None = None) -> FieldConfig:
    base = base or FieldConfig()
    lam = args.lam if getattr(args, "lam", None) is not None else base.lam
    cut = args.cutoff if getattr(args, "cutoff", None) is not None else base.cutoff
    return FieldConfig(lam=lam, cutoff=cut)


def cmd_gen(args) -> int:
    spec = _grid_from_args(args)
    cfg = _field_from_args(args)
    params = {}
    if args.extent is not None:
        params["extent"] = args.extent
    if args.extent2 is not None:
        params["extent2"] = args.extent2
    params["class_id"] = args.class_id
    params["n"] = args.n
    params["radius"] = args.radius
    doc, target = scenegen.gen_scene(args.kind, spec, cfg, seed=args.seed,
                                     num_classes=args.classes, **params)
    io.save_scene(args.out, doc)
    if args.target_out:
        if target is None:
            raise ValueError(f"kind {args.kind!r} has no analytic target grid")
        io.save_grid(args.target_out, target)
    print(f"wrote {args.out}" + (f" and {args.target_out}" if args.target_out else ""))
    return 0


def cmd_splat(args) -> int:
    doc = io.load_scene(args.scene)
    cfg = _field_from_args(args, doc.field_cfg)
    scene = doc.expand()
    if args.naive:
        grid = splat_naive(scene, doc.grid, cfg, workers=args.workers,
                           num_classes=doc.num_classes)
    else:
        grid = splat_tiled(scene, doc.grid, cfg, tile_size=args.tile_size,
                           workers=args.workers, num_classes=doc.num_classes)
    io.save_grid(args.grid_out, io.GridFile.from_voxel_grid(grid, args.full_prob))
    print(f"wrote {args.grid_out}")
    return 0


def cmd_bench(args) -> int:
    doc = io.load_scene(args.scene)
    cfg = _field_from_args(args, doc.field_cfg)
    lanes = None
    if args.lanes == "both":
        lanes = backend.available_backends()
    elif args.lanes != "auto":
        lanes = [args.lanes]
    report = bench_splat(doc.expand(), doc.grid, cfg, repeats=args.repeats,
                         tile_size=args.tile_size, workers=args.workers,
                         lanes=lanes)
    text = report.to_text()
    io.write_json(args.report, report.to_dict())
    with open(args.report + ".txt", "w") as f:
        f.write(text)
    print(text, end="")
    return 0


def cmd_fit(args) -> int:
    gf = io.load_grid(args.target)
    target = gf.voxel_grid()
    cfg = FitConfig(schedule=tuple(args.schedule), iters_per_stage=args.iters_per_stage,
                    lr=args.lr, momentum=args.momentum,
                    weights=LossWeights(args.w_occ, args.w_sem), seed=args.seed,
                    tile_size=args.tile_size, workers=args.workers,
                    field_cfg=_field_from_args(args))
    result = fit_scene(target, args.clusters, cfg)
    doc = io.SceneDocument(target.spec, cfg.field_cfg,
                           scenegen.default_class_names(target.num_classes),
                           clusters=result.clusters)
    io.save_scene(args.scene_out, doc)
    with open(args.trace_out, "w") as f:
        f.write("stage\titer\tloss\tiou\n")
        for stage, it, loss, iou in result.trace:
            f.write(f"{stage}\t{it}\t{loss!r}\t{iou!r}\n")
    final = result.trace[-1]
    print(f"fit done: final loss {final[2]:.6f} IoU {final[3]:.4f}; "
          f"wrote {args.scene_out} and {args.trace_out}")
    return 0


def cmd_propagate(args) -> int:
    frames = io.load_stream(args.stream)
    base = os.path.dirname(os.path.abspath(args.stream))
    seq = []
    for pose, scene_path in frames:
        path = scene_path if os.path.isabs(scene_path) else os.path.join(base, scene_path)
        doc = io.load_scene(path)
        clusters = list(doc.clusters)
        for s in doc.superquadrics:
            clusters.append(make_cluster(
                s.center, np.zeros((1, 3)), s.rotation[None, :],
                s.scale[None, :], s.eps[None, :], [s.sigma], s.sem))
        seq.append((pose, clusters))
    cfg = StreamConfig(n_p=args.np, n_q=args.nq, tau=args.tau, seed=args.seed)
    per_frame, report = run_stream(seq, cfg)
    out = {"config": {"np": args.np, "nq": args.nq, "tau": args.tau,
                      "seed": args.seed},
           "frames": []}
    for t, queries in enumerate(per_frame):
        out["frames"].append({
            "report": report[t],
            "queries": [{
                "id": q.id,
                "provenance": q.provenance,
                "ref_point": [float(v) for v in q.ref_point],
                "score": float(q.cluster.scales.max()),
            } for q in queries],
        })
    io.write_json(args.out, out)
    print(f"wrote {args.out}")
    return 0


def cmd_sample(args) -> int:
    cams = io.load_rig(args.rig)
    offsets = np.array([_vec3(t) for t in args.offsets.split(";")]) \
        if args.offsets else np.zeros((1, 3))
    ns = offsets.shape[0]
    weights = np.full((ns, args.scales), 1.0 / args.scales)
    spec = SampleSpec(np.array(args.ref), offsets, weights)
    w0, h0 = args.plane_size
    frames = []
    for t in range(args.frames):
        planes = []
        for _v in range(len(cams)):
            planes.append([make_plane(args.pattern, args.channels,
                                      max(1, h0 >> l), max(1, w0 >> l), l)
                           for l in range(args.scales)])
        step = np.array(args.step) * t
        frames.append(FrameData(FramePose(np.array([1.0, 0, 0, 0]), step, float(t)),
                                planes))
    feats, flags = sample_multiframe(spec, frames, cams)
    io.write_json(args.out, {
        "rows": [[float(v) for v in row] for row in feats],
        "hit": [bool(b) for b in flags],
        "order": "t-major, point-minor",
    })
    print(f"wrote {args.out}")
    return 0


def cmd_metrics(args) -> int:
    pred = io.load_grid(args.pred)
    gt = io.load_grid(args.gt)
    lp, lg = pred.label_grid(), gt.label_grid()
    res = iou_miou(lp, lg)
    out = {
        "iou": res["iou"],
        "per_class_iou": [None if np.isnan(v) else float(v)
                          for v in res["per_class_iou"]],
        "miou": None if np.isnan(res["miou"]) else float(res["miou"]),
    }
    lines = [f"IoU  {res['iou']:.6f}", f"mIoU {res['miou']:.6f}"]
    if not args.no_ray:
        rays = io.load_rayset(args.rayset) if args.rayset else default_rayset()
        rr = ray_iou(lp, lg, rays)
        out["ray_iou"] = {str(k): v for k, v in rr["per_threshold"].items()}
        out["ray_iou_mean"] = rr["mean"]
        for k, v in rr["per_threshold"].items():
            lines.append(f"RayIoU@{k:g}m {v:.6f}")
        lines.append(f"RayIoU mean {rr['mean']:.6f}")
    io.write_json(args.report, out)
    print("\n".join(lines))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="squasplat",
                                 description="superquadric scene engine")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate synthetic scenes and targets")
    g.add_argument("--kind", required=True, choices=["box", "l-shape", "random", "ring"])
    g.add_argument("--out", required=True)
    g.add_argument("--target-out")
    g.add_argument("--grid", default="cube32", choices=sorted(scenegen.GRID_PRESETS))
    g.add_argument("--lower", type=_vec3)
    g.add_argument("--upper", type=_vec3)
    g.add_argument("--res", type=_ints)
    g.add_argument("--extent", type=_vec3)
    g.add_argument("--extent2", type=_vec3)
    g.add_argument("--class-id", type=int, default=1)
    g.add_argument("--classes", type=int, default=4)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--radius", type=float, default=2.5)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--cutoff", type=float)
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("splat", help="splat a scene into a voxel grid")
    s.add_argument("--scene", required=True)
    s.add_argument("--grid-out", required=True)
    s.add_argument("--tile-size", type=int, default=4)
    s.add_argument("--naive", action="store_true")
    s.add_argument("--cutoff", type=float)
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--workers", type=int)
    s.add_argument("--full-prob", action="store_true")
    s.set_defaults(func=cmd_splat)

    b = sub.add_parser("bench", help="compare naive and tiled splatting")
    b.add_argument("--scene", required=True)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--report", required=True)
    b.add_argument("--tile-size", type=int, default=4)
    b.add_argument("--workers", type=int)
    b.add_argument("--lanes", default="auto",
                   choices=["auto", "compiled", "python", "both"])
    b.add_argument("--cutoff", type=float)
    b.add_argument("--lambda", dest="lam", type=float)
    b.set_defaults(func=cmd_bench)

    f = sub.add_parser("fit", help="fit superquadric clusters to a target grid")
    f.add_argument("--target", required=True)
    f.add_argument("--clusters", type=int, required=True)
    f.add_argument("--schedule", type=_ints, default=[2, 2, 4, 4, 8, 8])
    f.add_argument("--iters-per-stage", type=int, default=150)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--lr", type=float, default=5e-2)
    f.add_argument("--momentum", type=float, default=0.9)
    f.add_argument("--w-occ", type=float, default=1.0)
    f.add_argument("--w-sem", type=float, default=0.5)
    f.add_argument("--tile-size", type=int, default=4)
    f.add_argument("--workers", type=int)
    f.add_argument("--scene-out", required=True)
    f.add_argument("--trace-out", required=True)
    f.add_argument("--lambda", dest="lam", type=float)
    f.add_argument("--cutoff", type=float)
    f.set_defaults(func=cmd_fit)

    p = sub.add_parser("propagate", help="temporal query propagation over a stream")
    p.add_argument("--stream", required=True)
    p.add_argument("--np", type=int, default=500)
    p.add_argument("--nq", type=int, default=600)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_propagate)

    m = sub.add_parser("sample", help="multi-frame view sampling driver")
    m.add_argument("--rig", required=True)
    m.add_argument("--pattern", default="ramp", choices=["const", "ramp", "checker"])
    m.add_argument("--channels", type=int, default=4)
    m.add_argument("--plane-size", type=_ints, default=[64, 48],
                   help="W,H of the scale-0 plane")
    m.add_argument("--scales", type=int, default=2)
    m.add_argument("--frames", type=int, default=2)
    m.add_argument("--ref", type=_vec3, default=[2.0, 0.0, 0.0])
    m.add_argument("--offsets", help='semicolon-separated "dx,dy,dz" triples')
    m.add_argument("--step", type=_vec3, default=[0.0, 0.0, 0.0],
                   help="per-frame ego translation applied to past frames")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_sample)

    me = sub.add_parser("metrics", help="IoU / mIoU / RayIoU between grids")
    me.add_argument("--pred", required=True)
    me.add_argument("--gt", required=True)
    me.add_argument("--rayset")
    me.add_argument("--no-ray", action="store_true")
    me.add_argument("--report", required=True)
    me.set_defaults(func=cmd_metrics)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:      # runtime errors: one parsable line, exit 1
        print(f"squasplat: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
