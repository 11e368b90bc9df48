"""Differential geometry of centerline fragments.

Curves are clamped interpolating B-splines (degree 4 when enough points are
available) over chord-length parameters in [0, 1].  Moving frames along a
curve are rotation-minimizing, propagated by the double-reflection scheme,
so they stay well defined on straight stretches where the Serret-Frenet
frame degenerates.
"""

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline, make_interp_spline
from scipy.optimize import minimize_scalar

# curvature magnitudes below this are treated as exactly straight
STRAIGHT_EPS = 1e-12

_Z_AXIS = np.array([0.0, 0.0, 1.0])
_X_AXIS = np.array([1.0, 0.0, 0.0])


def _unit(v):
    n = np.linalg.norm(v)
    if n < 1e-15:
        raise ValueError("cannot normalize a near-zero vector")
    return v / n


@dataclass(frozen=True)
class CurvatureVector:
    """Curvature decomposed in a frame's normal plane, units 1/µm."""

    k1: float
    k2: float

    @property
    def magnitude(self):
        return float(np.hypot(self.k1, self.k2))

    def as_array(self):
        return np.array([self.k1, self.k2])


@dataclass(frozen=True)
class Frame:
    """Right-handed orthonormal frame (t, n1, n2) at a position in µm."""

    position: np.ndarray
    t: np.ndarray
    n1: np.ndarray
    n2: np.ndarray

    def validate(self, tol=1e-9):
        """Raise if the frame is not orthonormal and right-handed within tol."""
        for name, v in (("t", self.t), ("n1", self.n1), ("n2", self.n2)):
            if abs(np.linalg.norm(v) - 1.0) > tol:
                raise ValueError(f"frame axis {name} is not unit length")
        if abs(self.t @ self.n1) > tol or abs(self.t @ self.n2) > tol \
                or abs(self.n1 @ self.n2) > tol:
            raise ValueError("frame axes are not orthogonal")
        if np.linalg.norm(np.cross(self.n1, self.n2) - self.t) > tol:
            raise ValueError("frame is not right-handed (n1 x n2 != t)")
        return self

    def orthonormality_error(self):
        m = np.vstack([self.t, self.n1, self.n2])
        return float(np.abs(m @ m.T - np.eye(3)).max())


class ParamCurve:
    """Vector-valued B-spline with derivatives up to third order.

    Parameters live in [0, 1]; positions are in µm.  Instances are immutable
    after construction and safe to share across threads.
    """

    def __init__(self, spline: BSpline):
        self._s = spline
        self._d1 = spline.derivative(1)
        self._d2 = spline.derivative(2) if spline.k >= 2 else None
        self._d3 = spline.derivative(3) if spline.k >= 3 else None
        self._dense = None  # lazy (params, points) table for nearest queries

    @property
    def degree(self):
        return self._s.k

    @property
    def knots(self):
        return self._s.t

    @property
    def control_points(self):
        return self._s.c

    def point(self, t):
        return self._s(t)

    def d1(self, t):
        return self._d1(t)

    def d2(self, t):
        if self._d2 is None:
            return np.zeros(np.shape(self._s(t)))
        return self._d2(t)

    def d3(self, t):
        if self._d3 is None:
            return np.zeros(np.shape(self._s(t)))
        return self._d3(t)

    def curvature(self, t):
        """kappa = |gamma' x gamma''| / |gamma'|^3 at parameter t."""
        g1 = np.atleast_2d(self.d1(t))
        g2 = np.atleast_2d(self.d2(t))
        speed = np.linalg.norm(g1, axis=-1)
        if np.any(speed < 1e-15):
            raise ValueError("vanishing first derivative")
        k = np.linalg.norm(np.cross(g1, g2), axis=-1) / speed**3
        return float(k[0]) if np.isscalar(t) else k

    def curvature_vector(self, t):
        """The 3D curvature vector K = kappa*N = (g' x g'') x g' / |g'|^4."""
        g1 = self.d1(t)
        g2 = self.d2(t)
        sp2 = g1 @ g1
        if sp2 < 1e-30:
            raise ValueError("vanishing first derivative")
        return np.cross(np.cross(g1, g2), g1) / sp2**2

    def with_control_points(self, c):
        """New curve sharing this knot vector and degree."""
        return ParamCurve(BSpline(self._s.t.copy(), np.asarray(c, float), self._s.k))

    # -- serialization (debugging aid) --------------------------------------

    def to_json_dict(self):
        return {
            "degree": int(self._s.k),
            "knots": self._s.t.tolist(),
            "control_points": np.asarray(self._s.c, float).tolist(),
        }

    @classmethod
    def from_json_dict(cls, d):
        return cls(BSpline(np.asarray(d["knots"], float),
                           np.asarray(d["control_points"], float),
                           int(d["degree"])))

    def dense_samples(self, n=512):
        if self._dense is None or len(self._dense[0]) < n:
            ts = np.linspace(0.0, 1.0, n)
            self._dense = (ts, np.asarray(self.point(ts)))
        return self._dense


def fit_bspline(points) -> ParamCurve:
    """Interpolating clamped B-spline through the given 3D points.

    Chord-length parameterization; degree 4, lowered to n-1 when fewer than
    5 distinct points are supplied.  Exactly coincident consecutive points
    are collapsed first.

    Raises
    ------
    ValueError
        If fewer than 2 distinct points remain.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError("expected an (n, 3) array of points")
    keep = [0]
    for i in range(1, len(pts)):
        if not np.array_equal(pts[i], pts[keep[-1]]):
            keep.append(i)
    pts = pts[keep]
    if len(pts) < 2:
        raise ValueError("all points coincident; cannot fit a curve")

    chords = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    u = np.concatenate([[0.0], np.cumsum(chords)])
    u /= u[-1]
    k = min(4, len(pts) - 1)
    return ParamCurve(make_interp_spline(u, pts, k=k))


def frenet(curve: ParamCurve, t):
    """Unit tangent, unit normal, and curvature at parameter t.

    The normal is None where curvature < STRAIGHT_EPS (straight stretches
    have no Serret-Frenet normal; that is exactly why frames along a curve
    use `rmf` instead).
    """
    g1 = curve.d1(t)
    speed = np.linalg.norm(g1)
    if speed < 1e-15:
        raise ValueError("vanishing first derivative at t=%r" % (t,))
    tangent = g1 / speed
    kappa = curve.curvature(t)
    if kappa < STRAIGHT_EPS:
        return tangent, None, kappa
    normal = _unit(curve.curvature_vector(t))
    return tangent, normal, kappa


def transport_normal(x0, t0, n0, x1, t1):
    """Carry the normal n0 of frame (t0 at x0) to the frame with tangent t1
    at x1 using one double-reflection update.

    First reflection is in the bisecting plane of x0 -> x1; the second maps
    the reflected tangent onto t1.  Inputs t0, t1 must be unit vectors.
    """
    v1 = x1 - x0
    c1 = v1 @ v1
    if c1 < 1e-30:
        raise ValueError("coincident consecutive samples")
    nL = n0 - (2.0 * (v1 @ n0) / c1) * v1
    tL = t0 - (2.0 * (v1 @ t0) / c1) * v1
    v2 = t1 - tL
    c2 = v2 @ v2
    if c2 < 1e-30:
        return nL
    return nL - (2.0 * (v2 @ nL) / c2) * v2


def _seed_normal(t0):
    ref = _X_AXIS if abs(t0 @ _Z_AXIS) > 0.999 else _Z_AXIS
    return _unit(ref - (ref @ t0) * t0)


def rmf(curve: ParamCurve, n_samples: int):
    """Rotation-minimizing frames at uniform parameter samples.

    The first frame's n1 is the global z-axis projected orthogonal to the
    tangent (x-axis fallback when the tangent is near z); successive frames
    follow by double reflection.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    ts = np.linspace(0.0, 1.0, n_samples)
    pos = np.asarray(curve.point(ts))
    der = np.asarray(curve.d1(ts))
    speeds = np.linalg.norm(der, axis=1)
    if np.any(speeds < 1e-15):
        raise ValueError("vanishing tangent at an rmf sample")
    tans = der / speeds[:, None]

    n1 = _seed_normal(tans[0])
    frames = [Frame(pos[0], tans[0], n1, np.cross(tans[0], n1))]
    for i in range(1, n_samples):
        n1 = transport_normal(pos[i - 1], tans[i - 1], n1, pos[i], tans[i])
        frames.append(Frame(pos[i], tans[i], n1, np.cross(tans[i], n1)))
    return frames


def decompose_curvature(curve: ParamCurve, t, frame: Frame,
                        tol=1e-6) -> CurvatureVector:
    """Components of K = kappa*N along the frame's n1 and n2.

    Raises
    ------
    ValueError
        If the frame does not sit on the curve at t (position mismatch
        beyond tol) or the residual of K along the frame tangent exceeds
        1e-9 (frame/parameter mismatch).
    """
    p = curve.point(t)
    if np.linalg.norm(p - frame.position) > tol:
        raise ValueError("frame position does not match curve(t)")
    kappa = curve.curvature(t)
    if kappa < STRAIGHT_EPS:
        return CurvatureVector(0.0, 0.0)
    K = curve.curvature_vector(t)
    if abs(K @ frame.t) > 1e-9 * max(1.0, np.linalg.norm(K)):
        raise ValueError("curvature vector has a tangential residual; "
                         "frame does not match the curve at this parameter")
    return CurvatureVector(float(K @ frame.n1), float(K @ frame.n2))


def arc_length(curve: ParamCurve, t0=0.0, t1=1.0, nodes=16):
    """Arc length by Gauss-Legendre quadrature per knot span."""
    x, w = leggauss(nodes)
    breaks = np.unique(np.clip(curve.knots, t0, t1))
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        ts = 0.5 * (b - a) * x + 0.5 * (a + b)
        speeds = np.linalg.norm(np.atleast_2d(curve.d1(ts)), axis=1)
        total += 0.5 * (b - a) * float(w @ speeds)
    return total


def nearest_on_curve(curve: ParamCurve, x, coarse=512):
    """Parameter, point, and distance of the curve point nearest to x.

    Coarse pass over dense samples, then bounded 1D refinement; accurate to
    ~1e-10 in parameter for smooth curves.
    """
    x = np.asarray(x, float)
    ts, pts = curve.dense_samples(coarse)
    i = int(np.argmin(np.einsum("ij,ij->i", pts - x, pts - x)))
    lo = ts[max(0, i - 1)]
    hi = ts[min(len(ts) - 1, i + 1)]

    def sqdist(t):
        d = curve.point(t) - x
        return d @ d

    if hi > lo:
        res = minimize_scalar(sqdist, bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        t_best = float(res.x)
        if sqdist(t_best) > sqdist(ts[i]):
            t_best = float(ts[i])
    else:
        t_best = float(ts[i])
    p = curve.point(t_best)
    return t_best, p, float(np.linalg.norm(p - x))


def corrective_curvature(position, frame_t, n1, n2, target: ParamCurve,
                         lookahead=8.0) -> CurvatureVector:
    """Steering that rejoins `target` from a nearby pose.

    The command is the target curve's own curvature at the nearest point
    plus the lateral term that cancels the displacement over the lookahead
    arc: inverting the second-order motion model, a lateral offset delta
    closes under k = 2*delta/lookahead^2.  On the centerline with an
    aligned tangent this reduces exactly to the curve's own curvature
    vector.

    Returns the components in the (n1, n2) plane; also returns the nearest
    distance so callers can police how far the pose has drifted.
    """
    t_near, p_near, dist = nearest_on_curve(target, position)
    K = target.curvature_vector(t_near)
    d = p_near - np.asarray(position, float)
    d_perp = d - (d @ frame_t) * frame_t
    K_total = K + (2.0 / lookahead**2) * d_perp
    return CurvatureVector(float(K_total @ n1), float(K_total @ n2)), dist


def perturb_for_oracle(curve: ParamCurve, fraction=0.2, magnitude=1.0,
                       seed=0, n_samples=100, lookahead=8.0):
    """Off-centerline oracle construction.

    A random ceil(fraction*n) subset of control points is displaced by
    `magnitude` in a random direction orthogonal to the local tangent
    (tangent taken at each control point's Greville abscissa), giving a
    displaced curve.  For each of n_samples uniform samples of that curve
    the corrective curvature steering back toward the original centerline
    is computed in the displaced curve's own RMF basis.

    Returns (displaced_curve, [CurvatureVector, ...]); sample i's basis is
    rmf(displaced_curve, n_samples)[i].
    """
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    c = np.array(curve.control_points, dtype=float)
    n_cp = len(c)
    n_move = int(np.ceil(fraction * n_cp))
    rng = np.random.default_rng(seed)

    if n_move > 0 and magnitude > 0:
        idx = rng.choice(n_cp, size=min(n_move, n_cp), replace=False)
        k = curve.degree
        knots = curve.knots
        for j in idx:
            greville = knots[j + 1:j + k + 1].mean()
            tangent = _unit(curve.d1(greville))
            raw = rng.normal(size=3)
            raw -= (raw @ tangent) * tangent
            if np.linalg.norm(raw) < 1e-12:
                raw = _seed_normal(tangent)
            c[j] = c[j] + magnitude * _unit(raw)

    displaced = curve.with_control_points(c)
    correctives = []
    for fr in rmf(displaced, n_samples):
        cmd, _ = corrective_curvature(fr.position, fr.t, fr.n1, fr.n2,
                                      curve, lookahead)
        correctives.append(cmd)
    return displaced, correctives
