"""Skeleton-level recall/precision/F1 against a reference graph.

Both graphs are resampled to unit-spacing point chains so scores do not
depend on how sparsely either skeleton happened to be sampled. Matching is
point-to-nearest-point with no one-to-one constraint, which keeps the
scores monotone under adding points.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class PRF:
    recall: float
    precision: float

    @property
    def f1(self):
        s = self.precision + self.recall
        return 2.0 * self.precision * self.recall / s if s > 0 else 0.0


def resample_points(graph, spacing=1.0):
    """All fragments of a graph as one point cloud at fixed arc spacing.

    Each fragment polyline keeps its endpoints; single-node fragments
    contribute their one point. Positions come out in microns.
    """
    chunks = []
    for fid in graph.fragment_ids:
        order = graph.fragment_nodes(fid)
        pts = np.array([graph.node_um(n) for n in order], dtype=float)
        if len(pts) == 1:
            chunks.append(pts)
            continue
        seg_len = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        arc = np.concatenate([[0.0], np.cumsum(seg_len)])
        total = arc[-1]
        targets = np.arange(0.0, total, spacing)
        if total > 0 and (len(targets) == 0 or targets[-1] != total):
            targets = np.append(targets, total)
        chunks.append(np.column_stack(
            [np.interp(targets, arc, pts[:, k]) for k in range(3)]))
    if not chunks:
        return np.zeros((0, 3))
    return np.vstack(chunks)


def skeleton_prf(pred, truth, tol=2.0):
    """Fraction of truth covered by pred (recall) and of pred supported
    by truth (precision), at a point-matching tolerance in microns."""
    if pred.pitch != truth.pitch:
        raise ValueError(
            f"mixed pitches: pred {pred.pitch} vs truth {truth.pitch}")
    p = resample_points(pred)
    t = resample_points(truth)
    if len(t) == 0:
        recall = 1.0
    elif len(p) == 0:
        recall = 0.0
    else:
        d, _ = cKDTree(p).query(t)
        recall = float(np.mean(d <= tol))
    if len(p) == 0:
        precision = 1.0
    elif len(t) == 0:
        precision = 0.0
    else:
        d, _ = cKDTree(t).query(p)
        precision = float(np.mean(d <= tol))
    return PRF(recall=recall, precision=precision)


def weighted_f1(scores):
    """Length-weighted aggregate F1 over (PRF, length um) pairs."""
    if not scores:
        raise ValueError("no scores to aggregate")
    lengths = np.array([L for _, L in scores], dtype=float)
    if (lengths <= 0).any():
        raise ValueError("lengths must be positive")
    f1s = np.array([prf.f1 for prf, _ in scores], dtype=float)
    return float((f1s * lengths).sum() / lengths.sum())


def truth_graph(gt, spacing=1.0, pitch=1.0):
    """A SegmentGraph sampled from ground-truth curves, for scoring.

    Node positions are converted from microns to voxel coordinates at
    the given pitch so the result is comparable with pipeline output.
    """
    from .graph import SegmentGraph

    g = SegmentGraph(pitch=pitch)
    for curve in gt.curves:
        ts, pts = curve.dense_samples(4096)
        arc = np.concatenate(
            [[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        total = arc[-1]
        targets = np.arange(0.0, total, spacing)
        if len(targets) == 0 or targets[-1] != total:
            targets = np.append(targets, total)
        samples = np.column_stack(
            [np.interp(targets, arc, pts[:, k]) for k in range(3)])
        fid = g.new_fragment()
        ids = [g.add_node(tuple(p / pitch), fid) for p in samples]
        for a, b in zip(ids, ids[1:]):
            g.add_edge(a, b)
    return g


def prf_table(entries):
    """TSV table of per-scenario scores plus the length-weighted total.

    entries: (label, PRF, length um) triples.
    """
    lines = ["scenario\tlength_um\trec\tprec\tF1"]
    for label, prf, length in entries:
        lines.append(f"{label}\t{length:.1f}\t{prf.recall:.3f}\t"
                     f"{prf.precision:.3f}\t{prf.f1:.3f}")
    total = sum(length for _, _, length in entries)
    w = weighted_f1([(prf, length) for _, prf, length in entries])
    lines.append(f"weighted\t{total:.1f}\t\t\t{w:.3f}")
    return "\n".join(lines) + "\n"
