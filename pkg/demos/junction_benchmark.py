"""Benchmark agent flights over a branching tree, path by path.

A tree with three junctions decomposes into seven non-branching paths.
For every path, two agents launch from opposite ends and must each
reach the far terminal; the report buckets paths as short, medium, or
long relative to the length distribution.

Run:  python3 demos/junction_benchmark.py
"""

import numpy as np

import curvitrace as ct
from curvitrace import flight as fl
from curvitrace import volume as vl

J1, J2, J3 = (30.0, 40.0, 40.0), (55.0, 20.0, 40.0), (55.0, 60.0, 40.0)
SEGMENTS = [
    ((8.0, 40.0, 40.0), J1),
    (J1, J2), (J1, J3),
    (J2, (90.0, 8.0, 40.0)), (J2, (90.0, 32.0, 40.0)),
    (J3, (90.0, 48.0, 40.0)), (J3, (90.0, 72.0, 40.0)),
]


def polyline(a, b, spacing=2.0):
    a, b = np.asarray(a), np.asarray(b)
    n = max(5, int(np.ceil(np.linalg.norm(b - a) / spacing)) + 1)
    return a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)


curves = [polyline(a, b) for a, b in SEGMENTS]
vol, truth = vl.generate_phantom(
    vl.PhantomSpec(curves=curves, dims=(100, 80, 80)))
nv = vl.min_max_normalize(vol)

# Build the reference graph with shared junction nodes, then let
# split_at_junctions recover the non-branching decomposition.
graph = ct.SegmentGraph()
fid = graph.new_fragment()
junction_ids = {}
for a, b in SEGMENTS:
    ids = []
    for p in polyline(a, b):
        key = tuple(p)
        if key in (J1, J2, J3):
            if key not in junction_ids:
                junction_ids[key] = graph.add_node(key, fid)
            ids.append(junction_ids[key])
        else:
            ids.append(graph.add_node(key, fid))
    for u, v in zip(ids, ids[1:]):
        graph.add_edge(u, v)

paths = ct.split_at_junctions(graph)
print(f"tree: {len(graph.nodes)} nodes, 3 junctions -> {len(paths)} paths")

params = fl.FlightParams()
paths_um = [np.array([graph.node_um(n) for n in p]) for p in paths]
report = ct.run_benchmark(paths_um, nv,
                          fl.oracle_steering(truth, params), params,
                          threads=4)
print(report.to_text_table())
