"""Command line front end: one subcommand per pipeline stage.

Stages communicate through files (.nfvol volumes, graph directories,
proposals.tsv), so each command is an independent process and a run can
be resumed or inspected at any point. A JSON config supplies defaults;
explicit flags win over the config.
"""

import argparse
import json
import shlex
import sys

import numpy as np

from . import connect as cn
from . import flight as fl
from . import metrics as mx
from . import segment as sg
from . import volume as vl
from .graph import SegmentGraph, export_swc


def _load_config(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _pick(value, cfg, key, default):
    if value is not None:
        return value
    return cfg.get(key, default)


def _flight_params(args, cfg):
    kwargs = dict(cfg.get("flight", {}))
    for key in ("bg_threshold", "max_steps", "merge_radius",
                "self_exclusion"):
        v = getattr(args, key, None)
        if v is not None:
            kwargs[key] = v
    return fl.FlightParams(**kwargs)


def _steering(args, cfg, volume, params):
    kind = _pick(args.steering, cfg, "steering", "centroid")
    if kind == "centroid":
        return fl.centroid_steering(volume, params)
    if kind == "oracle":
        truth_path = _pick(args.truth, cfg, "truth", None)
        if not truth_path:
            raise SystemExit("oracle steering needs --truth <truth.json>")
        with open(truth_path) as f:
            truth = vl.GroundTruth.from_json_dict(json.load(f))
        return fl.oracle_steering(truth, params)
    if kind == "external":
        command = _pick(args.command, cfg, "command", None)
        if not command:
            raise SystemExit("external steering needs --command")
        return fl.external_steering(shlex.split(command), volume, params)
    raise SystemExit(f"unknown steering {kind!r}")


def _graph_length_um(g):
    total = 0.0
    for fid in g.fragment_ids:
        pts = np.array([g.node_um(n) for n in g.fragment_nodes(fid)])
        if len(pts) > 1:
            total += float(np.linalg.norm(np.diff(pts, axis=0),
                                          axis=1).sum())
    return total


def cmd_phantom(args, cfg, seed, threads):
    spec = vl.PhantomSpec.from_json_file(args.spec)
    if seed is not None:
        spec.seed = seed
    ph, gt = vl.generate_phantom(spec)
    vl.write_nfvol(args.out, ph)
    if args.truth_out:
        with open(args.truth_out, "w") as f:
            json.dump(gt.to_json_dict(), f)
    print(f"phantom {ph.dims} -> {args.out} ({len(gt.curves)} curves)")


def cmd_segment(args, cfg, seed, threads):
    v = vl.read_nfvol(args.input)
    nv = vl.min_max_normalize(v)
    command = _pick(args.command, cfg, "command", None)
    spec = sg.SegmenterSpec(
        method=_pick(args.method, cfg, "method", "hessian"),
        sigma=_pick(args.sigma, cfg, "sigma", 2.0),
        command=tuple(shlex.split(command)) if command else ())
    mask = sg.run_blockwise(nv, spec, sg.ChunkLayout(),
                            _pick(args.threshold, cfg, "threshold", 0.5))
    out = vl.Volume(mask.astype(np.uint16), origin=v.origin, pitch=v.pitch)
    vl.write_nfvol(args.out, out)
    print(f"segment {spec.method}: {int(mask.sum())} foreground voxels "
          f"-> {args.out}")


def cmd_skeletonize(args, cfg, seed, threads):
    v = vl.read_nfvol(args.input)
    skel = sg.skeletonize_blockwise(v.data > 0, sg.ChunkLayout())
    out = vl.Volume(skel.astype(np.uint16), origin=v.origin, pitch=v.pitch)
    vl.write_nfvol(args.out, out)
    print(f"skeleton: {int(skel.sum())} voxels -> {args.out}")


def cmd_extract_graph(args, cfg, seed, threads):
    v = vl.read_nfvol(args.input)
    interval = _pick(args.interval, cfg, "interval", 3)
    g = sg.extract_graph(v.data > 0, interval, origin=v.origin,
                         pitch=v.pitch)
    g.save(args.out)
    print(f"graph: {len(g.nodes)} nodes, {len(g.edges)} edges, "
          f"{len(g.fragment_ids)} fragments -> {args.out}")


def cmd_connect(args, cfg, seed, threads):
    g = SegmentGraph.load(args.graph)
    v = vl.read_nfvol(args.volume)
    nv = vl.min_max_normalize(v)
    params = _flight_params(args, cfg)
    steering = _steering(args, cfg, nv, params)
    interval = _pick(args.interval, cfg, "interval", 3)
    g2, props = cn.connect_all(g, nv, steering, params, interval,
                               threads=threads or 1)
    g2.save(args.out)
    proposals_path = args.proposals or f"{args.out}/proposals.tsv"
    cn.save_proposals(props, proposals_path)
    accepted = sum(1 for p in props if p.status == "Accepted")
    print(f"connect: {g.n_components()} -> {g2.n_components()} components, "
          f"{accepted} merges, {len(props) - accepted} proposals "
          f"-> {args.out}")


def cmd_benchmark(args, cfg, seed, threads):
    g = SegmentGraph.load(args.graph)
    v = vl.read_nfvol(args.volume)
    nv = vl.min_max_normalize(v)
    params = _flight_params(args, cfg)
    steering = _steering(args, cfg, nv, params)
    ids = cn.split_at_junctions(g)
    paths = [np.array([g.node_um(n) for n in p]) for p in ids]
    report = cn.run_benchmark(paths, nv, steering, params,
                              threads=threads or 1)
    if args.json_out:
        with open(args.json_out, "w") as f:
            json.dump(report.to_json_dict(), f, indent=1)
    sys.stdout.write(report.to_text_table())


def cmd_metrics(args, cfg, seed, threads):
    pred = SegmentGraph.load(args.pred)
    truth = SegmentGraph.load(args.truth)
    tol = _pick(args.tol, cfg, "tol", 2.0)
    prf = mx.skeleton_prf(pred, truth, tol)
    table = mx.prf_table([(args.label, prf, _graph_length_um(truth))])
    if args.out:
        with open(args.out, "w") as f:
            f.write(table)
    sys.stdout.write(table)


def cmd_export_swc(args, cfg, seed, threads):
    g = SegmentGraph.load(args.graph)
    root = args.root if args.root is not None else min(g.nodes)
    text = export_swc(g, root)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"swc: {text.count(chr(10))} records -> {args.out}")
    else:
        sys.stdout.write(text)


def cmd_serve(args, cfg, seed, threads):
    from .server import serve

    serve(args.graph, args.volume,
          host=_pick(args.host, cfg, "host", "127.0.0.1"),
          port=_pick(args.port, cfg, "port", 8000),
          proposals_path=args.proposals, ui_dir=args.ui)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="curvitrace",
        description="reconstruct curvilinear structures in 3D volumes")
    parser.add_argument("--config", help="JSON file of default options")
    parser.add_argument("--seed", type=int, help="override random seed")
    parser.add_argument("--threads", type=int,
                        help="worker threads for flights")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("phantom", help="render a synthetic tube volume")
    p.add_argument("spec", help="PhantomSpec JSON file")
    p.add_argument("out", help="output .nfvol path")
    p.add_argument("--truth-out", help="write ground-truth curves JSON")
    p.set_defaults(fn=cmd_phantom)

    p = sub.add_parser("segment", help="score and binarize a volume")
    p.add_argument("input", help="input .nfvol")
    p.add_argument("out", help="output mask .nfvol")
    p.add_argument("--method", choices=("threshold", "hessian", "external"))
    p.add_argument("--sigma", type=float)
    p.add_argument("--command", help="external scorer command line")
    p.add_argument("--threshold", type=float)
    p.set_defaults(fn=cmd_segment)

    p = sub.add_parser("skeletonize", help="thin a foreground mask")
    p.add_argument("input", help="mask .nfvol")
    p.add_argument("out", help="skeleton .nfvol")
    p.set_defaults(fn=cmd_skeletonize)

    p = sub.add_parser("extract-graph",
                       help="fragment graph from a skeleton")
    p.add_argument("input", help="skeleton .nfvol")
    p.add_argument("out", help="output graph directory")
    p.add_argument("--interval", type=int)
    p.set_defaults(fn=cmd_extract_graph)

    p = sub.add_parser("connect", help="bridge fragments with agents")
    p.add_argument("--graph", required=True, help="input graph directory")
    p.add_argument("--volume", required=True, help="image .nfvol")
    p.add_argument("--out", required=True, help="output graph directory")
    p.add_argument("--steering", choices=("centroid", "oracle", "external"))
    p.add_argument("--truth", help="ground-truth JSON for oracle steering")
    p.add_argument("--command", help="external predictor command line")
    p.add_argument("--proposals", help="proposals TSV path")
    p.add_argument("--interval", type=int)
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--merge-radius", dest="merge_radius", type=float)
    p.add_argument("--self-exclusion", dest="self_exclusion", type=float)
    p.set_defaults(fn=cmd_connect)

    p = sub.add_parser("benchmark", help="two-agent path benchmark")
    p.add_argument("--graph", required=True,
                   help="ground-truth graph directory (may branch)")
    p.add_argument("--volume", required=True, help="image .nfvol")
    p.add_argument("--steering", choices=("centroid", "oracle", "external"))
    p.add_argument("--truth", help="ground-truth JSON for oracle steering")
    p.add_argument("--command", help="external predictor command line")
    p.add_argument("--json-out", dest="json_out", help="report JSON path")
    p.add_argument("--bg-threshold", dest="bg_threshold", type=float)
    p.add_argument("--max-steps", dest="max_steps", type=int)
    p.add_argument("--merge-radius", dest="merge_radius", type=float)
    p.add_argument("--self-exclusion", dest="self_exclusion", type=float)
    p.set_defaults(fn=cmd_benchmark)

    p = sub.add_parser("metrics", help="skeleton recall/precision/F1")
    p.add_argument("--pred", required=True, help="predicted graph dir")
    p.add_argument("--truth", required=True, help="reference graph dir")
    p.add_argument("--tol", type=float)
    p.add_argument("--label", default="scenario")
    p.add_argument("--out", help="write the TSV table here too")
    p.set_defaults(fn=cmd_metrics)

    p = sub.add_parser("export-swc", help="write a component as SWC")
    p.add_argument("graph", help="graph directory")
    p.add_argument("--root", type=int, help="root node id")
    p.add_argument("--out", help="output file (default stdout)")
    p.set_defaults(fn=cmd_export_swc)

    p = sub.add_parser("serve", help="run the proofreading HTTP service")
    p.add_argument("--graph", required=True, help="graph directory")
    p.add_argument("--volume", required=True, help="image .nfvol")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--proposals", help="proposals TSV path")
    p.add_argument("--ui", help="static UI directory to mount")
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    cfg = _load_config(args.config)
    args.fn(args, cfg, args.seed, args.threads)
    return 0


if __name__ == "__main__":
    sys.exit(main())
