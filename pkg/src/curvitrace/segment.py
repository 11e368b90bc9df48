"""Segmentation stage: foreground scoring, thinning, graph extraction.

Scoring is split into a local raw pass and a global finalize pass. The
raw pass touches only a bounded neighborhood per voxel, so blockwise
execution with borders at least that wide reproduces monolithic output
bit for bit; the finalize pass (min-max normalization) is a single
global affine map applied after the blocks are assembled.
"""

import subprocess
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.morphology import skeletonize as _thin

from .graph import SegmentGraph
from .volume import NORMALIZED, Volume

_NEIGHBOR_OFFSETS = [(a, b, c)
                     for a in (-1, 0, 1) for b in (-1, 0, 1)
                     for c in (-1, 0, 1) if (a, b, c) != (0, 0, 0)]


@dataclass(frozen=True)
class ChunkLayout:
    block: tuple = (100, 100, 100)
    border: int = 14
    skel_block: int = 300

    def __post_init__(self):
        if self.border < 0:
            raise ValueError("border must be non-negative")
        if min(self.block) < 1 or self.skel_block < 1:
            raise ValueError("block sizes must be positive")


@dataclass(frozen=True)
class SegmenterSpec:
    """Which foreground scorer to run.

    method is one of "threshold" (identity passthrough), "hessian"
    (line-likeness from the eigenvalues of the Gaussian-scale Hessian),
    or "external" (subprocess protocol; stands in for a trained model).
    """

    method: str = "threshold"
    sigma: float = 2.0
    command: tuple = ()

    def __post_init__(self):
        if self.method not in ("threshold", "hessian", "external"):
            raise ValueError(f"unsupported method {self.method!r}")
        if self.method == "hessian" and self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.method == "external" and not self.command:
            raise ValueError("external method needs a command")


def _symmetric_eigvals3(hxx, hxy, hxz, hyy, hyz, hzz):
    """Eigenvalues of symmetric 3x3 matrices, elementwise over arrays.

    Trigonometric closed form; returns (l1, l2, l3) sorted ascending.
    Vectorized so blockwise and monolithic runs share one code path.
    """
    q = (hxx + hyy + hzz) / 3.0
    axx, ayy, azz = hxx - q, hyy - q, hzz - q
    p2 = (axx ** 2 + ayy ** 2 + azz ** 2
          + 2.0 * (hxy ** 2 + hxz ** 2 + hyz ** 2))
    p = np.sqrt(p2 / 6.0)
    safe = np.where(p > 0, p, 1.0)
    bxx, byy, bzz = axx / safe, ayy / safe, azz / safe
    bxy, bxz, byz = hxy / safe, hxz / safe, hyz / safe
    half_det = 0.5 * (bxx * (byy * bzz - byz ** 2)
                      - bxy * (bxy * bzz - byz * bxz)
                      + bxz * (bxy * byz - byy * bxz))
    phi = np.arccos(np.clip(half_det, -1.0, 1.0)) / 3.0
    big = q + 2.0 * p * np.cos(phi)
    small = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    mid = 3.0 * q - big - small
    flat = p == 0
    if flat.any():
        big = np.where(flat, q, big)
        mid = np.where(flat, q, mid)
        small = np.where(flat, q, small)
    return small, mid, big


def _hessian_raw(data, sigma):
    # truncate=3.0 keeps the filter support within a 14-voxel border
    # for sigma <= 4
    d = np.ascontiguousarray(data, dtype=np.float32)
    comp = {}
    for a, b in ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)):
        order = [0, 0, 0]
        order[a] += 1
        order[b] += 1
        comp[(a, b)] = ndimage.gaussian_filter(d, sigma, order=order,
                                               mode="reflect", truncate=3.0)
    l1, l2, _ = _symmetric_eigvals3(comp[(0, 0)], comp[(0, 1)], comp[(0, 2)],
                                    comp[(1, 1)], comp[(1, 2)], comp[(2, 2)])
    return np.sqrt(np.maximum(-l1, 0.0) * np.maximum(-l2, 0.0))


def _min_max_finalize(raw):
    mn, mx = raw.min(), raw.max()
    if mx == mn:
        return np.zeros_like(raw, dtype=np.float32)
    return ((raw - mn) / (mx - mn)).astype(np.float32)


class _ThresholdScorer:
    support = 0

    def raw(self, data):
        return np.asarray(data, dtype=np.float32)

    def finalize(self, raw):
        return raw


class _HessianScorer:
    def __init__(self, sigma):
        self.sigma = float(sigma)
        self.support = int(3.0 * self.sigma + 0.5)

    def raw(self, data):
        return _hessian_raw(data, self.sigma)

    def finalize(self, raw):
        return _min_max_finalize(raw)


class _ExternalScorer:
    """Scores come from a subprocess: dims as three little-endian uint32,
    then float32 voxels x-fastest on stdin; float32 scores back on stdout.
    """

    def __init__(self, command, support=14):
        self.command = list(command)
        self.support = support

    def raw(self, data):
        d = np.ascontiguousarray(data, dtype=np.float32)
        header = np.asarray(d.shape, dtype="<u4").tobytes()
        payload = d.ravel(order="F").astype("<f4").tobytes()
        proc = subprocess.run(self.command, input=header + payload,
                              stdout=subprocess.PIPE, check=True)
        out = np.frombuffer(proc.stdout, dtype="<f4")
        if out.size != d.size:
            raise ValueError(
                f"external scorer returned {out.size} values for "
                f"{d.size} voxels")
        return out.reshape(d.shape, order="F").astype(np.float32)

    def finalize(self, raw):
        return _min_max_finalize(raw)


def _make_scorer(spec):
    if spec.method == "threshold":
        return _ThresholdScorer()
    if spec.method == "hessian":
        return _HessianScorer(spec.sigma)
    return _ExternalScorer(spec.command)


def score_foreground(v, spec):
    """Per-voxel foreground score in [0, 1] for a normalized volume."""
    if v.kind != NORMALIZED:
        raise ValueError("score_foreground expects a normalized volume")
    scorer = _make_scorer(spec)
    score = scorer.finalize(scorer.raw(v.data))
    return Volume(score, origin=v.origin, pitch=v.pitch)


def binarize(score, threshold=0.5):
    data = score.data if isinstance(score, Volume) else np.asarray(score)
    return data >= threshold


def run_blockwise(v, spec, layout=None, threshold=0.5):
    """Score per block with borders, assemble, then binarize globally.

    Identical to the monolithic path whenever the scorer's support
    radius fits inside the border, because raw scores are purely local
    and the normalization pass runs on the assembled array.
    """
    if v.kind != NORMALIZED:
        raise ValueError("run_blockwise expects a normalized volume")
    layout = layout or ChunkLayout()
    scorer = _make_scorer(spec)
    if scorer.support > layout.border:
        raise ValueError(
            f"scorer support {scorer.support} exceeds border "
            f"{layout.border}; increase the border or lower sigma")
    raw = np.empty(v.dims, dtype=np.float32)
    nx, ny, nz = v.dims
    bx, by, bz = layout.block
    pad = layout.border
    for x0 in range(0, nx, bx):
        for y0 in range(0, ny, by):
            for z0 in range(0, nz, bz):
                x1, y1, z1 = (min(x0 + bx, nx), min(y0 + by, ny),
                              min(z0 + bz, nz))
                sx, sy, sz = (max(x0 - pad, 0), max(y0 - pad, 0),
                              max(z0 - pad, 0))
                slab = v.data[sx:min(x1 + pad, nx),
                              sy:min(y1 + pad, ny),
                              sz:min(z1 + pad, nz)]
                block_raw = scorer.raw(slab)
                raw[x0:x1, y0:y1, z0:z1] = block_raw[
                    x0 - sx:x1 - sx, y0 - sy:y1 - sy, z0 - sz:z1 - sz]
    return binarize(scorer.finalize(raw), threshold)


def skeletonize(mask):
    """Thin a binary mask to a one-voxel-wide, topology-preserving core."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return np.zeros_like(mask)
    return _thin(mask).astype(bool)


def skeletonize_blockwise(mask, layout=None):
    """Thin in skel_block-sized pieces with a 20-voxel overlap.

    A volume that fits in one block is thinned exactly; larger volumes
    are processed per block and the interiors unioned, which can leave
    seam artifacts on block faces (thinning is a global operation).
    """
    layout = layout or ChunkLayout()
    mask = np.asarray(mask, dtype=bool)
    n = layout.skel_block
    if all(s <= n for s in mask.shape):
        return skeletonize(mask)
    out = np.zeros_like(mask)
    pad = 20
    nx, ny, nz = mask.shape
    for x0 in range(0, nx, n):
        for y0 in range(0, ny, n):
            for z0 in range(0, nz, n):
                x1, y1, z1 = min(x0 + n, nx), min(y0 + n, ny), min(z0 + n, nz)
                sx, sy, sz = max(x0 - pad, 0), max(y0 - pad, 0), max(z0 - pad, 0)
                slab = mask[sx:min(x1 + pad, nx),
                            sy:min(y1 + pad, ny),
                            sz:min(z1 + pad, nz)]
                thin = skeletonize(slab)
                out[x0:x1, y0:y1, z0:z1] = thin[
                    x0 - sx:x1 - sx, y0 - sy:y1 - sy, z0 - sz:z1 - sz]
    return out


def extract_graph(skel, interval=3, origin=(0, 0, 0), pitch=1.0):
    """Turn a thinned mask into non-branching fragments.

    Voxels with more than two 26-neighbors are junctions and are dropped;
    what remains are simple chains (closed chains are opened by leaving
    out the wrap-around edge). Each chain keeps every interval-th voxel
    plus both endpoints; chains shorter than two kept nodes are noise
    and discarded.
    """
    skel = np.asarray(skel, dtype=bool)
    if interval < 1:
        raise ValueError("interval must be at least 1")
    g = SegmentGraph(pitch=pitch)
    if not skel.any():
        return g
    kernel = np.ones((3, 3, 3), dtype=np.uint8)
    kernel[1, 1, 1] = 0
    ncount = ndimage.convolve(skel.astype(np.uint8), kernel,
                              mode="constant", cval=0)
    keep = skel & (ncount <= 2)
    labels, nlab = ndimage.label(keep, structure=np.ones((3, 3, 3)))
    origin = np.asarray(origin, dtype=float)
    for lab, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        base = np.array([s.start for s in sl])
        vox = np.argwhere(labels[sl] == lab) + base
        chain = _order_chain(vox)
        idx = list(range(0, len(chain), interval))
        if idx[-1] != len(chain) - 1:
            idx.append(len(chain) - 1)
        if len(idx) < 2:
            continue
        fid = g.new_fragment()
        ids = []
        for j, ci in enumerate(idx):
            flags = ["endpoint"] if j in (0, len(idx) - 1) else []
            ids.append(g.add_node(origin + chain[ci], fid, flags))
        for a, b in zip(ids, ids[1:]):
            g.add_edge(a, b, "Skeleton")
    return g


def _order_chain(vox):
    """Order the voxels of a degree-<=2 component into a path."""
    vset = {tuple(v) for v in map(tuple, vox)}
    def near(v):
        return [u for o in _NEIGHBOR_OFFSETS
                if (u := (v[0] + o[0], v[1] + o[1], v[2] + o[2])) in vset]
    ends = sorted(v for v in vset if len(near(v)) <= 1)
    cur = ends[0] if ends else min(vset)
    order = [cur]
    seen = {cur}
    while True:
        step = [u for u in near(cur) if u not in seen]
        if not step:
            break
        cur = min(step)
        order.append(cur)
        seen.add(cur)
    if len(order) != len(vset):
        raise ValueError("component is not a simple chain")
    return np.array(order, dtype=float)


def segment_volume(v, spec, layout=None, threshold=0.5, interval=3):
    """Full stage: blockwise mask, thinning, fragment graph."""
    layout = layout or ChunkLayout()
    mask = run_blockwise(v, spec, layout, threshold)
    skel = skeletonize_blockwise(mask, layout)
    return extract_graph(skel, interval, origin=v.origin, pitch=v.pitch)
