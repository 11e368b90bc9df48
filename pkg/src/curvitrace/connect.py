"""Connection stage: launch agents from fragment ends and merge fragments.

Flights run against an immutable snapshot of the input graph, so they can
run in parallel; merges are then applied serially in a deterministic order
and the input graph is never mutated.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import flight as fl
from .geometry import fit_bspline, rmf
from .graph import SegmentGraph

CONFIDENCES = ("OracleMerged", "CentroidMerged", "LowConfidence")
STATUSES = ("Proposed", "Accepted", "Rejected")


@dataclass
class MergeProposal:
    """One agent flight worth keeping: either an applied merge or a
    candidate for proofreading."""

    source: tuple                     # (fragment_id, end)
    target: tuple = (None, None)      # (fragment_id, node_id)
    trajectory: tuple = ()            # ((x, y, z) um, ...)
    confidence: str = "LowConfidence"
    status: str = "Proposed"
    id: int = None

    def __post_init__(self):
        if self.confidence not in CONFIDENCES:
            raise ValueError(f"unknown confidence {self.confidence!r}")
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        self.trajectory = tuple(tuple(float(c) for c in p)
                                for p in self.trajectory)

    def to_json_dict(self):
        return {
            "id": self.id,
            "source": {"fragment": self.source[0], "end": self.source[1]},
            "target": {"fragment": self.target[0], "node": self.target[1]},
            "trajectory": [list(p) for p in self.trajectory],
            "confidence": self.confidence,
            "status": self.status,
        }


def find_endpoints(graph):
    """(fragment_id, end) for every free end of a multi-node fragment.

    An end that already carries a cross-fragment edge has degree > 1 and
    is skipped, which is what makes a second connection pass a no-op.
    """
    out = []
    for fid in graph.fragment_ids:
        order = graph.fragment_nodes(fid)
        if len(order) < 2:
            continue
        if graph.degree(order[0]) == 1:
            out.append((fid, 0))
        if graph.degree(order[-1]) == 1:
            out.append((fid, 1))
    return out


def apply_merge(graph, proposal, interval=3):
    """Insert a proposal's trajectory into the graph as Trajectory
    nodes/edges from the source endpoint to the target node.

    The trajectory is resampled at the graph sampling interval; interior
    points become nodes of a fresh fragment. A proposal without a target
    appends a dangling chain (an unmerged extension kept for review).
    """
    fid, end = proposal.source
    source_node = graph.endpoints_of(fid)[end]
    traj = np.asarray(proposal.trajectory, dtype=float)
    idx = list(range(0, len(traj), interval))
    if idx and idx[-1] != len(traj) - 1:
        idx.append(len(traj) - 1)
    idx = [i for i in idx if i != 0]

    chain = [source_node]
    added_nodes = []
    if idx:
        bridge = graph.new_fragment()
        for i in idx:
            pos = tuple(traj[i] / graph.pitch)
            nid = graph.add_node(pos, bridge)
            chain.append(nid)
            added_nodes.append((nid, pos, bridge))
    target_node = proposal.target[1]
    if target_node is not None:
        chain.append(target_node)
    added_edges = []
    for a, b in zip(chain, chain[1:]):
        graph.add_edge(a, b, "Trajectory")
        added_edges.append((a, b))
    return {"nodes": added_nodes, "edges": added_edges}


def connect_all(graph, volume, steering, params, interval=3, threads=1):
    """Fly one agent per free end; return (new graph, proposals).

    Merged flights are applied in (fragment, end) order. Only the first
    merge between any unordered fragment pair is applied; repeats and
    self-merges are demoted to low-confidence proposals so the result
    stays loop-free across distinct pairs. Flights that lose the signal
    or time out after more than 2 steps are kept as low-confidence
    proposals; out-of-bounds flights are dropped.
    """
    endpoints = find_endpoints(graph)
    label = getattr(steering, "confidence_label", "CentroidMerged")

    def one(ep):
        agent = fl.init_agent(graph, ep[0], ep[1])
        try:
            return fl.fly(agent, steering, volume, graph, params)
        except ValueError:
            return np.asarray(agent.trajectory, dtype=float), None

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flights = list(pool.map(one, endpoints))
    else:
        flights = [one(ep) for ep in endpoints]

    new_graph = graph.copy()
    proposals = []
    merged_pairs = set()
    for (fid, end), (traj, status) in zip(endpoints, flights):
        if status is None or status.kind == "OutOfBounds":
            continue
        coords = tuple(map(tuple, traj))
        if status.kind == "Merged":
            pair = frozenset((fid, status.fragment_id))
            prop = MergeProposal(source=(fid, end),
                                 target=(status.fragment_id, status.node_id),
                                 trajectory=coords)
            if status.fragment_id == fid or pair in merged_pairs:
                prop.confidence = "LowConfidence"
            else:
                prop.confidence = label
                prop.status = "Accepted"
                apply_merge(new_graph, prop, interval)
                merged_pairs.add(pair)
            proposals.append(prop)
        elif len(traj) - 1 > 2:
            proposals.append(MergeProposal(source=(fid, end),
                                           trajectory=coords))
    for i, prop in enumerate(proposals):
        prop.id = i
    return new_graph, proposals


PROPOSAL_COLUMNS = ("id", "source_fragment", "source_end", "target_fragment",
                    "target_node", "confidence", "status", "trajectory")


def save_proposals(proposals, path):
    with open(path, "w") as f:
        f.write("\t".join(PROPOSAL_COLUMNS) + "\n")
        for p in proposals:
            traj = ";".join(",".join("%.17g" % c for c in pt)
                            for pt in p.trajectory)
            tf = "" if p.target[0] is None else str(p.target[0])
            tn = "" if p.target[1] is None else str(p.target[1])
            f.write("\t".join([str(p.id), str(p.source[0]),
                               str(p.source[1]), tf, tn, p.confidence,
                               p.status, traj]) + "\n")


def load_proposals(path):
    proposals = []
    with open(path) as f:
        header = f.readline().rstrip("\n").split("\t")
        if tuple(header) != PROPOSAL_COLUMNS:
            raise ValueError(f"unexpected proposals header {header}")
        for line in f:
            row = line.rstrip("\n").split("\t")
            pid, sf, se, tf, tn, conf, status, traj = row
            coords = tuple(tuple(float(c) for c in pt.split(","))
                           for pt in traj.split(";")) if traj else ()
            proposals.append(MergeProposal(
                source=(int(sf), int(se)),
                target=(int(tf) if tf else None, int(tn) if tn else None),
                trajectory=coords, confidence=conf, status=status,
                id=int(pid)))
    return proposals


def split_at_junctions(graph):
    """Maximal simple paths between junction/terminal nodes, as node ids.

    Every edge lands in exactly one path. A component that is a pure
    cycle has no natural breakpoint; it becomes a single path that starts
    and ends on its smallest node id.
    """
    breakpoints = {n for n in graph.nodes if graph.degree(n) != 2}
    visited = set()

    def walk(start, first):
        visited.add(frozenset((start, first)))
        path = [start, first]
        prev, cur = start, first
        while cur not in breakpoints and cur != start:
            nxt = [x for x in graph.neighbors(cur) if x != prev][0]
            visited.add(frozenset((cur, nxt)))
            path.append(nxt)
            prev, cur = cur, nxt
        return path

    paths = []
    for bp in sorted(breakpoints):
        for nb in sorted(graph.neighbors(bp)):
            if frozenset((bp, nb)) not in visited:
                paths.append(walk(bp, nb))
    for a, b in sorted(graph.edges):
        if frozenset((a, b)) not in visited:
            paths.append(walk(min(a, b), max(a, b)))
    return paths


@dataclass(frozen=True)
class PathResult:
    index: int
    length_um: float
    category: str
    success: bool
    forward_status: str
    reverse_status: str


@dataclass(frozen=True)
class BenchmarkReport:
    results: tuple
    mu: float
    sigma: float

    def category_stats(self):
        stats = {}
        for cat in ("short", "medium", "long"):
            rs = [r for r in self.results if r.category == cat]
            n_ok = sum(r.success for r in rs)
            rate = n_ok / len(rs) if rs else None
            stats[cat] = {"count": len(rs), "successes": n_ok, "rate": rate}
        return stats

    def to_json_dict(self):
        return {
            "mu": self.mu,
            "sigma": self.sigma,
            "paths": [{"index": r.index, "length_um": r.length_um,
                       "category": r.category, "success": r.success,
                       "forward": r.forward_status,
                       "reverse": r.reverse_status}
                      for r in self.results],
            "categories": self.category_stats(),
        }

    def to_text_table(self):
        lines = ["path\tlength_um\tcategory\tsuccess\tforward\treverse"]
        for r in self.results:
            lines.append(f"{r.index}\t{r.length_um:.2f}\t{r.category}\t"
                         f"{'yes' if r.success else 'no'}\t"
                         f"{r.forward_status}\t{r.reverse_status}")
        lines.append("")
        lines.append(f"mu\t{self.mu:.3f}")
        lines.append(f"sigma\t{self.sigma:.3f}")
        for cat, s in self.category_stats().items():
            rate = "-" if s["rate"] is None else f"{s['rate']:.3f}"
            lines.append(f"{cat}\t{s['successes']}/{s['count']}\t{rate}")
        return "\n".join(lines) + "\n"


def _categorize(length, mu, sigma):
    if length < mu:
        return "short"
    if length < mu + sigma:
        return "medium"
    return "long"


def _fly_leg(points, volume, steering, params):
    """One benchmark agent: start at points[0] aimed along the path,
    succeed by reaching points[-1] within merge_radius."""
    seed = np.asarray(points[:5], dtype=float)
    curve = fit_bspline(seed)
    frame = rmf(curve, max(16, 4 * len(seed)))[0]
    state = fl.AgentState(frame=frame,
                          trajectory=(tuple(frame.position),))
    target = SegmentGraph()
    target.add_node(tuple(points[-1]), target.new_fragment())
    try:
        _, status = fl.fly(state, steering, volume, target, params)
    except ValueError:
        return "SteeringError"
    return status.kind


def run_benchmark(paths, volume, steering, params, threads=1):
    """Two agents per path, one from each end; a path succeeds only when
    both reach the opposite terminal."""
    pts_list = [np.asarray(p, dtype=float) for p in paths]
    for p in pts_list:
        if len(p) < 2:
            raise ValueError("benchmark paths need at least 2 nodes")
    lengths = [float(np.linalg.norm(np.diff(p, axis=0), axis=1).sum())
               for p in pts_list]
    mu = float(np.mean(lengths))
    sigma = float(np.std(lengths))

    def legs(p):
        return (_fly_leg(p, volume, steering, params),
                _fly_leg(p[::-1], volume, steering, params))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(legs, pts_list))
    else:
        outcomes = [legs(p) for p in pts_list]

    results = []
    for i, (L, (fwd, rev)) in enumerate(zip(lengths, outcomes)):
        results.append(PathResult(
            index=i, length_um=L, category=_categorize(L, mu, sigma),
            success=(fwd == "Merged" and rev == "Merged"),
            forward_status=fwd, reverse_status=rev))
    return BenchmarkReport(results=tuple(results), mu=mu, sigma=sigma)
