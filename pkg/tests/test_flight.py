import struct
import sys

import numpy as np
import pytest

from curvitrace import flight as fl
from curvitrace import geometry as geo
from curvitrace import segment as seg
from curvitrace import volume as vol
from curvitrace.graph import SegmentGraph


def frame_at(pos, t=(1.0, 0, 0), n1=(0, 0, 1.0)):
    t = np.asarray(t, dtype=float)
    n1 = np.asarray(n1, dtype=float)
    return geo.Frame(position=np.asarray(pos, dtype=float), t=t, n1=n1,
                     n2=np.cross(t, n1))


def agent_at(pos, t=(1.0, 0, 0), n1=(0, 0, 1.0), **kw):
    f = frame_at(pos, t, n1)
    return fl.AgentState(frame=f, trajectory=(tuple(f.position),), **kw)


def straight_truth():
    line = np.c_[np.linspace(5, 95, 9), np.full(9, 20.0), np.full(9, 20.0)]
    spec = vol.PhantomSpec(curves=[line], dims=(100, 40, 40), tube_radius=2.0)
    ph, gt = vol.generate_phantom(spec)
    return vol.min_max_normalize(ph), gt


def two_node_graph(a=(10, 10, 10), b=(20, 10, 10)):
    g = SegmentGraph()
    fid = g.new_fragment()
    na = g.add_node(a, fid, ["endpoint"])
    nb = g.add_node(b, fid, ["endpoint"])
    g.add_edge(na, nb)
    return g, fid


class TestParams:
    def test_self_exclusion_default(self):
        assert fl.FlightParams().self_exclusion == 32.0
        assert fl.FlightParams(p=10.0).self_exclusion == 20.0

    def test_validation(self):
        with pytest.raises(ValueError):
            fl.FlightParams(d=0)
        with pytest.raises(ValueError):
            fl.FlightParams(crop_size=4)


class TestAdaptiveStep:
    def test_floor_active_at_default_params(self):
        p = fl.FlightParams()
        for kappa in (0.0, 0.1, 1.0):
            assert fl.adaptive_step(kappa, p) == 2.0

    def test_fast_agent_slows_on_curvature(self):
        p = fl.FlightParams(f=4.0)
        assert fl.adaptive_step(0.25, p) == 8.0 / 3.0

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            fl.adaptive_step(-0.1, fl.FlightParams())


class TestCurvatureMse:
    def test_identical_zero(self):
        c = fl.SteeringCommand(0.3, -0.2)
        assert fl.curvature_mse(c, c) == 0.0

    def test_unit_case(self):
        assert fl.curvature_mse(fl.SteeringCommand(0, 0),
                                fl.SteeringCommand(1, 1)) == 1.0

    def test_eq5_arithmetic(self):
        m = fl.curvature_mse(fl.SteeringCommand(0.1, 0.0),
                             fl.SteeringCommand(0.0, 0.0))
        assert m == 0.5 * 0.1 ** 2
        assert abs(m - 0.005) <= np.finfo(float).eps * 0.005


class TestInitAgent:
    def test_two_node_end1(self):
        g, fid = two_node_graph()
        a = fl.init_agent(g, fid, 1)
        np.testing.assert_allclose(a.position, [20, 10, 10], atol=1e-9)
        np.testing.assert_allclose(a.frame.t, [1, 0, 0], atol=1e-9)
        a.frame.validate(1e-9)

    def test_two_node_end0_negated(self):
        g, fid = two_node_graph()
        a = fl.init_agent(g, fid, 0)
        np.testing.assert_allclose(a.position, [10, 10, 10], atol=1e-9)
        np.testing.assert_allclose(a.frame.t, [-1, 0, 0], atol=1e-9)
        a.frame.validate(1e-9)

    def test_arc_fragment_tangent_matches_spline(self):
        g = SegmentGraph()
        fid = g.new_fragment()
        th = np.linspace(0, np.pi / 2, 8)
        pts = np.c_[10 * np.cos(th), 10 * np.sin(th), np.zeros(8)] + 15
        ids = [g.add_node(p, fid) for p in pts]
        for x, y in zip(ids, ids[1:]):
            g.add_edge(x, y)
        a = fl.init_agent(g, fid, 1)
        curve = geo.fit_bspline(pts)
        h = 1e-6
        fd = (np.asarray(curve.point(1.0)) - np.asarray(curve.point(1 - h))) / h
        fd /= np.linalg.norm(fd)
        assert np.linalg.norm(a.frame.t - fd) < 1e-5
        a.frame.validate(1e-9)

    def test_single_node_fragment_rejected(self):
        g = SegmentGraph()
        fid = g.new_fragment()
        g.add_node((0, 0, 0), fid)
        with pytest.raises(ValueError):
            fl.init_agent(g, fid, 0)

    def test_bad_end(self):
        g, fid = two_node_graph()
        with pytest.raises(ValueError):
            fl.init_agent(g, fid, 2)


class TestStep:
    def test_zero_curvature_translates(self):
        p = fl.FlightParams()
        a = agent_at([0, 0, 0])
        b = fl.step(a, fl.SteeringCommand(0, 0), 2.0, p)
        np.testing.assert_allclose(b.position, [2, 0, 0], atol=1e-12)
        np.testing.assert_array_equal(b.frame.t, a.frame.t)
        np.testing.assert_array_equal(b.frame.n1, a.frame.n1)
        assert b.arc_traveled == 2.0 and b.steps == 1
        assert len(b.trajectory) == 2

    def test_tangent_stays_unit(self):
        p = fl.FlightParams()
        a = agent_at([0, 0, 0])
        for _ in range(50):
            a = fl.step(a, fl.SteeringCommand(0.3, -0.1), 2.0, p)
            assert abs(np.linalg.norm(a.frame.t) - 1.0) < 1e-12
            a.frame.validate(1e-9)

    def test_circle_following_returns_to_start(self):
        p = fl.FlightParams()
        R = 50.0
        a = agent_at([R, 0, 0], t=(0, 1, 0), n1=(-1, 0, 0))
        ds = 0.01 * R
        for _ in range(int(round(2 * np.pi * R / ds))):
            a = fl.step(a, fl.SteeringCommand(1.0 / R, 0.0), ds, p)
        assert np.linalg.norm(a.position - [R, 0, 0]) < 0.005 * R

    def test_integrator_is_second_order(self):
        # error against the analytic circle at equal arc length shrinks
        # ~4x per halving of the step
        p = fl.FlightParams()
        R = 50.0
        errs = []
        for ds in (0.04 * R, 0.02 * R, 0.01 * R):
            a = agent_at([R, 0, 0], t=(0, 1, 0), n1=(-1, 0, 0))
            n = int(round(2 * np.pi * R / ds))
            for _ in range(n):
                a = fl.step(a, fl.SteeringCommand(1.0 / R, 0.0), ds, p)
            phi = n * ds / R
            errs.append(np.linalg.norm(
                a.position - [R * np.cos(phi), R * np.sin(phi), 0.0]))
        assert 3.5 <= errs[0] / errs[1] <= 4.5
        assert 3.5 <= errs[1] / errs[2] <= 4.5

    def test_straight_flight_collinear(self):
        p = fl.FlightParams()
        a = agent_at([1, 2, 3], t=(0.6, 0.8, 0))
        for _ in range(20):
            a = fl.step(a, fl.SteeringCommand(0, 0), 2.0, p)
        traj = np.asarray(a.trajectory)
        d = traj[-1] - traj[0]
        d /= np.linalg.norm(d)
        off = traj - traj[0]
        perp = off - np.outer(off @ d, d)
        assert np.abs(perp).max() < 1e-9


class TestSteerOracle:
    def test_on_centerline_zero(self):
        nv, gt = straight_truth()
        st = agent_at([50, 20, 20])
        cmd = fl.steer_oracle(st, gt, fl.FlightParams())
        assert abs(cmd.k1) < 1e-9 and abs(cmd.k2) < 1e-9

    def test_lateral_offset_pullback(self):
        nv, gt = straight_truth()
        st = agent_at([50, 20, 21])  # +1 um along n1
        cmd = fl.steer_oracle(st, gt, fl.FlightParams())
        assert abs(cmd.k1 - (-1.0 / 32.0)) < 1e-9
        assert abs(cmd.k2) < 1e-9

    def test_circle_curvature_recovered(self):
        th = np.linspace(0, np.pi, 20)
        ring = np.c_[30 + 10 * np.cos(th), 30 + 10 * np.sin(th),
                     np.full(20, 30.0)]
        spec = vol.PhantomSpec(curves=[ring], dims=(60, 60, 60),
                               tube_radius=2.0)
        _, gt = vol.generate_phantom(spec)
        pos = np.array([30.0, 40.0, 30.0])  # top of the arc
        st = agent_at(pos, t=(-1, 0, 0), n1=(0, -1, 0))
        cmd = fl.steer_oracle(st, gt, fl.FlightParams())
        assert abs(cmd.k1 - 0.1) < 2e-3
        assert abs(cmd.k2) < 1e-6

    def test_too_far_raises(self):
        nv, gt = straight_truth()
        st = agent_at([50, 20, 39])
        with pytest.raises(ValueError, match="oracle"):
            fl.steer_oracle(st, gt, fl.FlightParams())

    def test_empty_truth_raises(self):
        st = agent_at([0, 0, 0])
        with pytest.raises(ValueError):
            fl.steer_oracle(st, vol.GroundTruth([]), fl.FlightParams())

    def test_matches_own_curvature_on_curve(self):
        # consistency with decompose_curvature, within 1e-6
        th = np.linspace(0, np.pi, 24)
        ring = np.c_[30 + 10 * np.cos(th), 30 + 10 * np.sin(th),
                     np.full(24, 30.0)]
        curve = geo.fit_bspline(ring)
        gt = vol.GroundTruth([curve])
        frames = geo.rmf(curve, 100)
        ts = np.linspace(0, 1, 100)
        for i in (25, 50, 75):
            st = fl.AgentState(frame=frames[i],
                               trajectory=(tuple(frames[i].position),))
            cmd = fl.steer_oracle(st, gt, fl.FlightParams())
            own = geo.decompose_curvature(curve, float(ts[i]), frames[i])
            assert abs(cmd.k1 - own.k1) < 1e-6
            assert abs(cmd.k2 - own.k2) < 1e-6


class TestSteerCentroid:
    def test_centered_in_tube(self):
        nv, _ = straight_truth()
        st = agent_at([50, 20, 20])
        cmd = fl.steer_centroid(st, nv, fl.FlightParams())
        assert cmd.magnitude < 0.01
        assert not cmd.low_confidence

    def test_offset_steers_back(self):
        nv, _ = straight_truth()
        st = agent_at([50, 20, 22])  # +2 um along n1
        cmd = fl.steer_centroid(st, nv, fl.FlightParams())
        target = -2.0 * 2.0 / 6.0 ** 2
        assert cmd.k1 < 0
        assert abs(cmd.k1 - target) <= 0.3 * abs(target)

    def test_empty_crop_low_confidence(self):
        v = vol.Volume(np.zeros((64, 64, 64), dtype=np.float32))
        st = agent_at([32, 32, 32])
        cmd = fl.steer_centroid(st, v, fl.FlightParams())
        assert (cmd.k1, cmd.k2) == (0.0, 0.0)
        assert cmd.low_confidence


class TestCheckTermination:
    def setup_method(self):
        self.v = vol.Volume(np.full((40, 40, 40), 0.5, dtype=np.float32))
        self.params = fl.FlightParams()

    def test_out_of_bounds_wins(self):
        g, fid = two_node_graph(a=(-2, 10, 10), b=(-2, 12, 10))
        st = agent_at([-1.0, 10, 10])
        status = fl.check_termination(st, self.v, g, self.params)
        assert status.kind == "OutOfBounds"

    def test_merge_with_foreign_node(self):
        g, fid = two_node_graph()
        f2 = g.new_fragment()
        g.add_node((30.0, 10, 10), f2, ["endpoint"])
        g.add_node((31.0, 10, 10), f2, ["endpoint"])
        st = agent_at([29.0, 10, 10], source=(fid, 1))
        status = fl.check_termination(st, self.v, g, self.params)
        assert status.kind == "Merged"
        assert status.fragment_id == f2

    def test_self_exclusion_near_start(self):
        g, fid = two_node_graph()
        st = agent_at([21.0, 10, 10], source=(fid, 1))
        status = fl.check_termination(st, self.v, g, self.params)
        assert status.kind == "Continue"

    def test_self_merge_beyond_exclusion(self):
        g = SegmentGraph()
        fid = g.new_fragment()
        ids = [g.add_node((10.0 + 4 * i, 10, 10), fid) for i in range(12)]
        for a, b in zip(ids, ids[1:]):
            g.add_edge(a, b)
        # 44 um from the end-0 launch point, past the 32 um window
        v = vol.Volume(np.full((70, 30, 30), 0.5, dtype=np.float32))
        st = agent_at([10.0 + 44.0, 10.5, 10], source=(fid, 0))
        status = fl.check_termination(st, v, g, self.params)
        assert status.kind == "Merged"
        assert status.fragment_id == fid

    def test_lost_background(self):
        dark = vol.Volume(np.zeros((40, 40, 40), dtype=np.float32))
        g, fid = two_node_graph()
        st = fl.AgentState(frame=frame_at([30, 30, 30]),
                           trajectory=((28, 30, 30), (29, 30, 30),
                                       (30, 30, 30)))
        status = fl.check_termination(st, dark, g, self.params)
        assert status.kind == "LostBackground"

    def test_max_steps(self):
        g, fid = two_node_graph()
        st = agent_at([30, 30, 30], steps=500)
        status = fl.check_termination(st, self.v, g, self.params)
        assert status.kind == "MaxSteps"


class TestFly:
    def test_bridges_straight_gap(self):
        line = np.c_[np.linspace(5, 95, 9), np.full(9, 20.0),
                     np.full(9, 20.0)]
        spec = vol.PhantomSpec(curves=[line], dims=(100, 40, 40),
                               tube_radius=2.0, gaps=[(0, 0.4, 0.6, 0.0)])
        ph, gt = vol.generate_phantom(spec)
        nv = vol.min_max_normalize(ph)
        graph = seg.segment_volume(nv, seg.SegmenterSpec("threshold"))
        assert len(graph.fragment_ids) == 2
        launches = [(fid, end) for fid in graph.fragment_ids
                    for end in (0, 1)]
        launches.sort(key=lambda fe: abs(
            graph.node_um(graph.endpoints_of(fe[0])[fe[1]])[0] - 50.0))
        fid, end = launches[0]
        agent = fl.init_agent(graph, fid, end)
        params = fl.FlightParams(bg_threshold=0.0, max_steps=60)
        traj, status = fl.fly(agent, fl.oracle_steering(gt, params), nv,
                              graph, params)
        assert status.kind == "Merged"
        assert status.fragment_id != fid
        # the gap is ~20 um and steps are 2 um
        assert len(traj) - 1 <= 12 + 2

    def test_empty_volume_loses_background(self):
        dark = vol.Volume(np.zeros((40, 40, 40), dtype=np.float32))
        g, fid = two_node_graph()
        agent = fl.init_agent(g, fid, 1)
        traj, status = fl.fly(agent, lambda s: fl.SteeringCommand(0, 0),
                              dark, g, fl.FlightParams())
        assert status.kind == "LostBackground"
        assert len(traj) <= 6

    def test_max_steps_one(self):
        v = vol.Volume(np.full((40, 40, 40), 0.9, dtype=np.float32))
        g, fid = two_node_graph()
        agent = fl.init_agent(g, fid, 1)
        params = fl.FlightParams(max_steps=1)
        traj, status = fl.fly(agent, lambda s: fl.SteeringCommand(0, 0),
                              v, g, params)
        assert status.kind == "MaxSteps"
        assert len(traj) == 2

    def test_immediate_merge_of_adjacent_endpoints(self):
        g, fid = two_node_graph()
        f2 = g.new_fragment()
        a = g.add_node((22.0, 10, 10), f2, ["endpoint"])
        b = g.add_node((30.0, 10, 10), f2, ["endpoint"])
        g.add_edge(a, b)
        v = vol.Volume(np.full((40, 40, 40), 0.9, dtype=np.float32))
        agent = fl.init_agent(g, fid, 1)
        traj, status = fl.fly(agent, lambda s: fl.SteeringCommand(0, 0),
                              v, g, fl.FlightParams())
        assert status.kind == "Merged"
        assert status.fragment_id == f2
        assert len(traj) - 1 <= 2

    def test_deterministic(self):
        nv, gt = straight_truth()
        graph = seg.segment_volume(nv, seg.SegmenterSpec("threshold"))
        fid = graph.fragment_ids[0]
        params = fl.FlightParams(bg_threshold=0.0, max_steps=40)
        runs = []
        for _ in range(2):
            agent = fl.init_agent(graph, fid, 1)
            traj, status = fl.fly(agent, fl.oracle_steering(gt, params),
                                  nv, graph, params)
            runs.append((traj, status))
        np.testing.assert_array_equal(runs[0][0], runs[1][0])
        assert runs[0][1] == runs[1][1]


class TestExternalSteering:
    def test_subprocess_round_trip(self):
        nv, _ = straight_truth()
        params = fl.FlightParams()
        n = params.crop_size ** 3 * 4
        script = (f"import sys,struct; d=sys.stdin.buffer.read(); "
                  f"assert len(d)=={n}, len(d); "
                  f"sys.stdout.buffer.write(struct.pack('<2f', 0.25, -0.5))")
        steer = fl.external_steering((sys.executable, "-c", script), nv,
                                     params)
        st = agent_at([50, 20, 20])
        cmd = steer(st)
        assert (cmd.k1, cmd.k2) == (0.25, -0.5)

    def test_wrong_payload_rejected(self):
        nv, _ = straight_truth()
        params = fl.FlightParams()
        steer = fl.external_steering(
            (sys.executable, "-c",
             "import sys; sys.stdin.buffer.read(); "
             "sys.stdout.buffer.write(b'\\x00'*12)"), nv, params)
        st = agent_at([50, 20, 20])
        with pytest.raises(ValueError):
            steer(st)
