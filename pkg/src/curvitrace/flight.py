"""Connection-stage agent: launch, steer, integrate, terminate.

An agent is an orthonormal frame that advances by a second-order Taylor
step of the arc-length parameterized path: the steering signal is a
curvature vector (k1, k2) in the frame's normal plane, the position
advances by ds*t + (ds^2/2)*K, and the tangent bends by ds*K. The frame
normal is carried across each step by the same double-reflection update
used for curve frames, so no torsion is introduced by the transport.
"""

import subprocess
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from .volume import crop_aligned


@dataclass(frozen=True)
class FlightParams:
    f: float = 1.0
    d: float = 2.0
    p: float = 16.0
    s_min: float = 2.0
    crop_size: int = 32
    crop_pitch: float = 1.0
    max_steps: int = 500
    bg_threshold: float = 0.2
    merge_radius: float = 3.0
    self_exclusion: float = None
    curvature_clamp: float = 2.0

    def __post_init__(self):
        if min(self.f, self.d, self.p, self.s_min, self.merge_radius) <= 0:
            raise ValueError("f, d, p, s_min, merge_radius must be positive")
        if self.crop_size < 8:
            raise ValueError("crop_size must be at least 8")
        if self.self_exclusion is None:
            object.__setattr__(self, "self_exclusion", 2.0 * self.p)


@dataclass(frozen=True)
class SteeringCommand:
    k1: float
    k2: float
    low_confidence: bool = False

    @property
    def magnitude(self):
        return float(np.hypot(self.k1, self.k2))


@dataclass(frozen=True)
class TerminationStatus:
    kind: str
    fragment_id: int = None
    node_id: int = None

    @property
    def is_continue(self):
        return self.kind == "Continue"


CONTINUE = TerminationStatus("Continue")
LOST_BACKGROUND = TerminationStatus("LostBackground")
MAX_STEPS = TerminationStatus("MaxSteps")
OUT_OF_BOUNDS = TerminationStatus("OutOfBounds")


def merged(fragment_id, node_id):
    return TerminationStatus("Merged", fragment_id, node_id)


@dataclass(frozen=True)
class AgentState:
    frame: geo.Frame
    arc_traveled: float = 0.0
    steps: int = 0
    trajectory: tuple = ()
    source: tuple = (None, None)

    @property
    def position(self):
        return self.frame.position


def init_agent(graph, fragment_id, end):
    """Stand an agent on one end of a fragment, facing outward."""
    if end not in (0, 1):
        raise ValueError("end must be 0 or 1")
    order = graph.fragment_nodes(fragment_id)
    if len(order) < 2:
        raise ValueError(f"fragment {fragment_id} has a single node")
    pts = np.array([graph.nodes[n].position for n in order], dtype=float)
    pts *= graph.pitch
    curve = geo.fit_bspline(pts)
    frames = geo.rmf(curve, max(16, 4 * len(order)))
    f = frames[-1] if end == 1 else frames[0]
    if end == 0:
        # outward means against the spline direction; flip tangent while
        # keeping the triad right-handed
        f = geo.Frame(position=f.position, t=-f.t, n1=f.n1, n2=-f.n2)
    return AgentState(frame=f, trajectory=(tuple(f.position),),
                      source=(fragment_id, end))


def adaptive_step(kappa, params):
    """Step length shrinks with curvature but never below s_min."""
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    return max(params.f * params.d / (1.0 + (params.p / 2.0) * kappa),
               params.s_min)


def step(state, command, ds, params):
    """Advance one Taylor step and transport the frame."""
    if ds <= 0:
        raise ValueError("step size must be positive")
    f = state.frame
    kvec = command.k1 * f.n1 + command.k2 * f.n2
    new_pos = f.position + ds * f.t + 0.5 * ds * ds * kvec
    raw_t = f.t + ds * kvec
    norm = np.linalg.norm(raw_t)
    if norm < 1e-9:
        raise ValueError("step produced a degenerate tangent")
    new_t = raw_t / norm
    new_n1 = geo.transport_normal(f.position, f.t, f.n1, new_pos, new_t)
    new_frame = geo.Frame(position=new_pos, t=new_t, n1=new_n1,
                          n2=np.cross(new_t, new_n1))
    return replace(state,
                   frame=new_frame,
                   arc_traveled=state.arc_traveled + ds,
                   steps=state.steps + 1,
                   trajectory=state.trajectory + (tuple(new_pos),))


def steer_oracle(state, truth, params):
    """Ground-truth steering: head back onto the nearest true centerline."""
    if not truth.curves:
        raise ValueError("ground truth has no curves")
    f = state.frame
    best = None
    for curve in truth.curves:
        t, point, dist = geo.nearest_on_curve(curve, f.position)
        if best is None or dist < best[2]:
            best = (curve, t, dist)
    curve, _, dist = best
    if dist > params.p:
        raise ValueError(
            f"agent is {dist:.2f} um from every centerline; oracle is "
            f"meaningful only within p = {params.p}")
    cv, _ = geo.corrective_curvature(f.position, f.t, f.n1, f.n2, curve,
                                     lookahead=params.p / 2.0)
    clamp = params.curvature_clamp
    return SteeringCommand(float(np.clip(cv.k1, -clamp, clamp)),
                           float(np.clip(cv.k2, -clamp, clamp)))


def steer_centroid(state, volume, params):
    """Image-based steering: chase the intensity centroid of a forward slab.

    The slab sits at depth offsets [p/4, p/2] ahead along the tangent in a
    frame-aligned crop; voxels below bg_threshold carry no weight. With
    nearly no mass in the slab the command is (0, 0), flagged low
    confidence.
    """
    crop = crop_aligned(volume, state.frame, params.crop_size,
                        params.crop_pitch)
    size = params.crop_size
    c = (size - 1) / 2.0
    depth = (np.arange(size) - c) * params.crop_pitch
    sel = (depth >= params.p / 4.0) & (depth <= params.p / 2.0)
    slab = np.asarray(crop.data[:, :, sel], dtype=float)
    w = np.where(slab >= params.bg_threshold, slab, 0.0)
    mass = w.sum()
    floor = 0.01 * slab.size * params.bg_threshold
    if mass < floor:
        return SteeringCommand(0.0, 0.0, low_confidence=True)
    offs = (np.arange(size) - c) * params.crop_pitch
    c1 = (w * offs[:, None, None]).sum() / mass
    c2 = (w * offs[None, :, None]).sum() / mass
    s_hat = depth[sel].mean()
    clamp = params.curvature_clamp
    return SteeringCommand(
        float(np.clip(2.0 * c1 / s_hat ** 2, -clamp, clamp)),
        float(np.clip(2.0 * c2 / s_hat ** 2, -clamp, clamp)))


def check_termination(state, volume, graph, params):
    """Classify the agent's situation; first match wins.

    Order: OutOfBounds, then Merged, then LostBackground, then MaxSteps.
    Own-fragment nodes within self_exclusion arc length of the launch
    point never count as merge targets, so agents can leave home.
    """
    pos = np.asarray(state.position, dtype=float)
    if not volume.contains_um(pos):
        return OUT_OF_BOUNDS

    hit = _nearest_merge_target(state, graph, params)
    if hit is not None:
        return merged(*hit)

    tail = state.trajectory[-3:]
    if len(tail) == 3:
        vals = volume.sample_um(np.asarray(tail, dtype=float))
        if (vals < params.bg_threshold).all():
            return LOST_BACKGROUND

    if state.steps >= params.max_steps:
        return MAX_STEPS
    return CONTINUE


def _nearest_merge_target(state, graph, params):
    if not graph.nodes:
        return None
    src_fragment, src_end = state.source
    excluded = set()
    if src_fragment is not None:
        order = graph.fragment_nodes(src_fragment)
        if src_end == 1:
            order = order[::-1]
        pts = np.array([graph.nodes[n].position for n in order]) * graph.pitch
        arc = np.concatenate(
            [[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
        excluded = {n for n, a in zip(order, arc)
                    if a <= params.self_exclusion}
    ids, pos = graph.positions_um()
    pos_map = dict(zip(ids, pos))
    best = None
    for n in ids:
        if n in excluded:
            continue
        dist = float(np.linalg.norm(pos_map[n] - state.position))
        if dist <= params.merge_radius and (best is None or dist < best[0]):
            best = (dist, n)
    if best is None:
        return None
    node = best[1]
    return graph.nodes[node].fragment_id, node


def fly(state, steering, volume, graph, params):
    """Run one agent to termination; returns (trajectory, status).

    steering is any callable state -> SteeringCommand, so oracle,
    centroid, and external predictors share this loop. Deterministic:
    no randomness anywhere in the loop.
    """
    while True:
        status = check_termination(state, volume, graph, params)
        if not status.is_continue:
            return np.asarray(state.trajectory, dtype=float), status
        command = steering(state)
        ds = adaptive_step(command.magnitude, params)
        state = step(state, command, ds, params)


def oracle_steering(truth, params):
    def steer(state):
        return steer_oracle(state, truth, params)
    steer.confidence_label = "OracleMerged"
    return steer


def centroid_steering(volume, params):
    def steer(state):
        return steer_centroid(state, volume, params)
    steer.confidence_label = "CentroidMerged"
    return steer


def external_steering(command, volume, params):
    """Adapter for an externally trained predictor.

    Protocol per call: the frame-aligned crop as little-endian float32,
    x-fastest, crop_size^3 values on stdin; two little-endian float32
    values (k1, k2) on stdout.
    """
    argv = list(command)

    def steer(state):
        crop = crop_aligned(volume, state.frame, params.crop_size,
                            params.crop_pitch)
        payload = np.asarray(crop.data, dtype=np.float32).ravel(
            order="F").astype("<f4").tobytes()
        proc = subprocess.run(argv, input=payload,
                              stdout=subprocess.PIPE, check=True)
        out = np.frombuffer(proc.stdout, dtype="<f4")
        if out.size != 2:
            raise ValueError(
                f"external predictor returned {out.size} floats, expected 2")
        clamp = params.curvature_clamp
        return SteeringCommand(float(np.clip(out[0], -clamp, clamp)),
                               float(np.clip(out[1], -clamp, clamp)))

    return steer


def curvature_mse(pred, truth):
    """Half the squared distance between two steering commands."""
    return 0.5 * ((pred.k1 - truth.k1) ** 2 + (pred.k2 - truth.k2) ** 2)
