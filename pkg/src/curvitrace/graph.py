"""Spatial graph of skeleton nodes.

Fragments are non-branching runs of nodes; edges carry a provenance tag
saying whether they came from skeletonization, an agent trajectory, or a
manual edit. Node positions are global voxel coordinates (floats); the
graph's pitch converts them to microns. Persistence is two TSV tables
plus a small JSON sidecar, and every mutation made during proofreading
can be re-applied from a JSONL audit log.
"""

import json
import os
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

PROVENANCES = ("Skeleton", "Trajectory", "Manual")


@dataclass(frozen=True)
class Node:
    position: tuple
    fragment_id: int
    flags: frozenset = frozenset()


class SegmentGraph:
    def __init__(self, pitch=1.0, volume_hash=None):
        self.pitch = float(pitch)
        self.volume_hash = volume_hash
        self.nodes = {}
        self.edges = {}
        self._adj = {}
        self._next_node = 0
        self._next_fragment = 0

    def __eq__(self, other):
        if not isinstance(other, SegmentGraph):
            return NotImplemented
        return (self.pitch == other.pitch
                and self.volume_hash == other.volume_hash
                and self.nodes == other.nodes
                and self.edges == other.edges
                and self._next_node == other._next_node
                and self._next_fragment == other._next_fragment)

    # -- construction ---------------------------------------------------

    def new_fragment(self):
        fid = self._next_fragment
        self._next_fragment += 1
        return fid

    def add_node(self, position, fragment_id, flags=(), node_id=None):
        if node_id is None:
            node_id = self._next_node
        elif node_id in self.nodes:
            raise ValueError(f"node {node_id} already exists")
        pos = tuple(float(c) for c in position)
        if len(pos) != 3:
            raise ValueError("position must have three components")
        self.nodes[node_id] = Node(pos, int(fragment_id), frozenset(flags))
        self._adj[node_id] = set()
        self._next_node = max(self._next_node, node_id + 1)
        self._next_fragment = max(self._next_fragment, int(fragment_id) + 1)
        return node_id

    def add_edge(self, a, b, provenance="Skeleton"):
        if a not in self.nodes or b not in self.nodes:
            raise KeyError(f"edge ({a}, {b}) references a missing node")
        if a == b:
            raise ValueError("self-loops are not allowed")
        if provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {provenance!r}")
        key = (a, b) if a < b else (b, a)
        if key in self.edges:
            raise ValueError(f"edge {key} already exists")
        self.edges[key] = provenance
        self._adj[a].add(b)
        self._adj[b].add(a)
        return key

    def remove_edge(self, a, b):
        key = (a, b) if a < b else (b, a)
        if key not in self.edges:
            raise KeyError(f"edge {key} does not exist")
        del self.edges[key]
        self._adj[a].discard(b)
        self._adj[b].discard(a)

    # -- queries ----------------------------------------------------------

    def neighbors(self, n):
        return set(self._adj[n])

    def degree(self, n):
        return len(self._adj[n])

    @property
    def fragment_ids(self):
        return sorted({nd.fragment_id for nd in self.nodes.values()})

    def fragment_nodes(self, fragment_id):
        """Node ids of one fragment in path order (intra-fragment edges)."""
        members = [n for n, nd in self.nodes.items()
                   if nd.fragment_id == fragment_id]
        if not members:
            raise KeyError(f"no such fragment {fragment_id}")
        mset = set(members)
        adj = {n: sorted(m for m in self._adj[n] if m in mset)
               for n in members}
        deg1 = [n for n in members if len(adj[n]) <= 1]
        order = [min(deg1) if deg1 else min(members)]
        seen = set(order)
        while True:
            step = [m for m in adj[order[-1]] if m not in seen]
            if not step:
                break
            order.append(step[0])
            seen.add(step[0])
        if len(order) != len(members):
            raise ValueError(f"fragment {fragment_id} is not a simple path")
        return order

    def endpoints_of(self, fragment_id):
        order = self.fragment_nodes(fragment_id)
        return order[0], order[-1]

    def node_um(self, n):
        return np.asarray(self.nodes[n].position, dtype=float) * self.pitch

    def positions_um(self, ids=None):
        ids = sorted(self.nodes) if ids is None else list(ids)
        if not ids:
            return ids, np.zeros((0, 3))
        pos = np.array([self.nodes[n].position for n in ids], dtype=float)
        return ids, pos * self.pitch

    def components(self):
        seen = set()
        out = []
        for start in sorted(self.nodes):
            if start in seen:
                continue
            comp = {start}
            frontier = [start]
            while frontier:
                n = frontier.pop()
                for m in self._adj[n]:
                    if m not in comp:
                        comp.add(m)
                        frontier.append(m)
            seen |= comp
            out.append(comp)
        return out

    def n_components(self):
        return len(self.components())

    def copy(self):
        g = SegmentGraph(pitch=self.pitch, volume_hash=self.volume_hash)
        g.nodes = dict(self.nodes)
        g.edges = dict(self.edges)
        g._adj = {n: set(s) for n, s in self._adj.items()}
        g._next_node = self._next_node
        g._next_fragment = self._next_fragment
        return g

    def to_json_dict(self):
        return {
            "pitch": self.pitch,
            "fragments": self.fragment_ids,
            "nodes": [{"node_id": n, "position": list(nd.position),
                       "fragment_id": nd.fragment_id,
                       "flags": sorted(nd.flags)}
                      for n, nd in sorted(self.nodes.items())],
            "edges": [{"node_a": a, "node_b": b, "provenance": p}
                      for (a, b), p in sorted(self.edges.items())],
        }

    # -- persistence ------------------------------------------------------

    def save(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "nodes.tsv"), "w") as f:
            f.write("node_id\tx\ty\tz\tfragment_id\tflags\n")
            for n in sorted(self.nodes):
                nd = self.nodes[n]
                x, y, z = (f"{c:.17g}" for c in nd.position)
                f.write(f"{n}\t{x}\t{y}\t{z}\t{nd.fragment_id}\t"
                        f"{','.join(sorted(nd.flags))}\n")
        with open(os.path.join(directory, "edges.tsv"), "w") as f:
            f.write("node_a\tnode_b\tprovenance\n")
            for (a, b) in sorted(self.edges):
                f.write(f"{a}\t{b}\t{self.edges[(a, b)]}\n")
        with open(os.path.join(directory, "meta.json"), "w") as f:
            json.dump({"pitch": self.pitch,
                       "volume_hash": self.volume_hash,
                       "next_node_id": self._next_node,
                       "next_fragment_id": self._next_fragment}, f, indent=1)

    @classmethod
    def load(cls, directory):
        with open(os.path.join(directory, "meta.json")) as f:
            meta = json.load(f)
        g = cls(pitch=meta["pitch"], volume_hash=meta.get("volume_hash"))
        with open(os.path.join(directory, "nodes.tsv")) as f:
            header = f.readline().rstrip("\n").split("\t")
            if header[:5] != ["node_id", "x", "y", "z", "fragment_id"]:
                raise ValueError("unrecognized nodes.tsv header")
            for line in f:
                cells = line.rstrip("\n").split("\t")
                nid, x, y, z, fid = cells[:5]
                flags = [s for s in cells[5].split(",") if s] \
                    if len(cells) > 5 else []
                g.add_node((float(x), float(y), float(z)), int(fid),
                           flags, node_id=int(nid))
        with open(os.path.join(directory, "edges.tsv")) as f:
            f.readline()
            for line in f:
                a, b, prov = line.rstrip("\n").split("\t")
                g.add_edge(int(a), int(b), prov)
        g._next_node = meta["next_node_id"]
        g._next_fragment = meta["next_fragment_id"]
        return g


def export_swc(graph, root):
    """Serialize the component containing `root` as SWC text.

    Breadth-first from the root, so parents always precede children.
    Positions are emitted in microns; radius is not tracked and defaults
    to 1.0. Cycles violate the format and raise, naming an edge on the
    cycle.
    """
    if root not in graph.nodes:
        raise KeyError(f"no such node {root}")
    swc_id = {root: 1}
    rows = []
    queue = [(root, -1)]
    while queue:
        n, parent = queue.pop(0)
        nd = graph.nodes[n]
        code = 1 if "soma" in nd.flags else 0
        x, y, z = (c * graph.pitch for c in nd.position)
        rows.append(f"{swc_id[n]} {code} {x:.17g} {y:.17g} {z:.17g} "
                    f"1.0 {parent}")
        for m in sorted(graph.neighbors(n)):
            if m in swc_id:
                if swc_id[m] != parent:
                    raise ValueError(f"component contains a cycle through "
                                     f"edge ({n}, {m})")
                continue
            swc_id[m] = len(swc_id) + 1
            queue.append((m, swc_id[n]))
    return "\n".join(rows) + "\n"


def append_audit(path, entry):
    """Append one mutation record to the JSONL audit log."""
    stamped = {"ts": datetime.now(timezone.utc).isoformat(), **entry}
    with open(path, "a") as f:
        f.write(json.dumps(stamped) + "\n")
    return stamped


def replay_audit(graph, path):
    """Re-apply every graph mutation in the log to `graph`, in order.

    Entries that do not touch the graph (proposal status changes) are
    skipped; accepted proposals appear as their constituent add_node /
    add_edge records.
    """
    if not os.path.exists(path):
        return graph
    with open(path) as f:
        for line in f:
            entry = json.loads(line)
            op = entry.get("op")
            if op == "add_node":
                graph.add_node(entry["position"], entry["fragment_id"],
                               entry.get("flags", ()),
                               node_id=entry["node_id"])
            elif op == "add_edge":
                graph.add_edge(entry["a"], entry["b"],
                               entry.get("provenance", "Manual"))
            elif op == "remove_edge":
                graph.remove_edge(entry["a"], entry["b"])
    return graph
