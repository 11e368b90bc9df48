"""HTTP service backing the proofreading workflow.

Reads are lock-free against the in-memory graph; every mutation runs
under a single lock, appends replayable entries to the audit log, and
rewrites the graph directory and proposals table before returning, so
the on-disk state is never ahead of or behind an acknowledged response.
"""

import base64
import io
import os
import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from .connect import CONFIDENCES, apply_merge, load_proposals, save_proposals
from .graph import SegmentGraph, append_audit
from .volume import read_nfvol


class EdgeBody(BaseModel):
    a: int
    b: int
    provenance: str = "Manual"


class NodeBody(BaseModel):
    position: list
    fragment_id: int = None
    flags: list = []


class ProofreadService:
    """Owns the graph, proposal queue, volume, and their on-disk forms."""

    def __init__(self, graph_dir, volume_path, proposals_path=None,
                 interval=3):
        self.graph_dir = graph_dir
        self.graph = SegmentGraph.load(graph_dir)
        self.volume = read_nfvol(volume_path)
        self.proposals_path = proposals_path or os.path.join(
            graph_dir, "proposals.tsv")
        self.proposals = (load_proposals(self.proposals_path)
                          if os.path.exists(self.proposals_path) else [])
        self.audit_path = os.path.join(graph_dir, "audit.jsonl")
        self.interval = interval
        self.lock = threading.Lock()

    def persist(self):
        self.graph.save(self.graph_dir)
        save_proposals(self.proposals, self.proposals_path)

    def proposal_by_id(self, pid):
        for p in self.proposals:
            if p.id == pid:
                return p
        raise HTTPException(404, f"no proposal {pid}")

    def pending(self):
        rank = {c: i for i, c in enumerate(CONFIDENCES)}
        return sorted((p for p in self.proposals if p.status == "Proposed"),
                      key=lambda p: (rank[p.confidence], p.id))


def render_slab(volume, cx, cy, cz, size, axis):
    """Maximum-intensity projection of a size^3 cube, as an 8-bit image.

    The window is clipped to the volume and zero-padded back to size^2.
    Returns (image array, per-axis window origins); rows of the image
    follow the first remaining axis, columns the second.
    """
    center = (cx, cy, cz)
    starts = [int(round(center[k])) - size // 2 for k in range(3)]
    cube = np.zeros((size, size, size), dtype=float)
    lo = [max(0, s) for s in starts]
    hi = [min(volume.dims[k], starts[k] + size) for k in range(3)]
    if all(l < h for l, h in zip(lo, hi)):
        block = np.asarray(
            volume.data[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]], dtype=float)
        ins = [l - s for l, s in zip(lo, starts)]
        cube[ins[0]:ins[0] + block.shape[0],
             ins[1]:ins[1] + block.shape[1],
             ins[2]:ins[2] + block.shape[2]] = block
    mip = cube.max(axis=axis)
    span = mip.max() - mip.min()
    if span > 0:
        img = np.rint((mip - mip.min()) / span * 255).astype(np.uint8)
    else:
        img = np.zeros_like(mip, dtype=np.uint8)
    return img, starts


def build_app(service):
    app = FastAPI(title="curvitrace proofreading")

    @app.get("/graph")
    def get_graph():
        return service.graph.to_json_dict()

    @app.get("/proposals")
    def get_proposals():
        return [p.to_json_dict() for p in service.pending()]

    @app.get("/slab")
    def get_slab(cx: float = Query(...), cy: float = Query(...),
                 cz: float = Query(...), size: int = Query(64, ge=8, le=256),
                 axis: int = Query(2)):
        if axis not in (0, 1, 2):
            raise HTTPException(400, "axis must be 0, 1, or 2")
        img, starts = render_slab(service.volume, cx, cy, cz, size, axis)
        buf = io.BytesIO()
        Image.fromarray(img, mode="L").save(buf, format="PNG")
        plane = [k for k in range(3) if k != axis]
        return {
            "png": base64.b64encode(buf.getvalue()).decode("ascii"),
            "axis": axis,
            "axes": plane,
            "origin": [starts[plane[0]], starts[plane[1]]],
            "depth_origin": starts[axis],
            "size": size,
        }

    @app.post("/proposal/{pid}/accept")
    def accept_proposal(pid: int):
        with service.lock:
            prop = service.proposal_by_id(pid)
            if prop.status != "Proposed":
                raise HTTPException(409, f"proposal {pid} already "
                                         f"{prop.status.lower()}")
            try:
                added = apply_merge(service.graph, prop, service.interval)
            except (KeyError, ValueError) as e:
                raise HTTPException(409, f"cannot apply proposal {pid}: {e}")
            prop.status = "Accepted"
            for nid, pos, fid in added["nodes"]:
                append_audit(service.audit_path,
                             {"op": "add_node", "node_id": nid,
                              "position": list(pos), "fragment_id": fid})
            for a, b in added["edges"]:
                append_audit(service.audit_path,
                             {"op": "add_edge", "a": a, "b": b,
                              "provenance": "Trajectory"})
            append_audit(service.audit_path,
                         {"op": "proposal", "id": pid, "status": "Accepted"})
            service.persist()
            return prop.to_json_dict()

    @app.post("/proposal/{pid}/reject")
    def reject_proposal(pid: int):
        with service.lock:
            prop = service.proposal_by_id(pid)
            if prop.status != "Proposed":
                raise HTTPException(409, f"proposal {pid} already "
                                         f"{prop.status.lower()}")
            prop.status = "Rejected"
            append_audit(service.audit_path,
                         {"op": "proposal", "id": pid, "status": "Rejected"})
            service.persist()
            return prop.to_json_dict()

    @app.post("/edge")
    def add_edge(body: EdgeBody):
        with service.lock:
            g = service.graph
            if body.a not in g.nodes or body.b not in g.nodes:
                raise HTTPException(404, "edge references a missing node")
            try:
                key = g.add_edge(body.a, body.b, body.provenance)
            except ValueError as e:
                raise HTTPException(409, str(e))
            append_audit(service.audit_path,
                         {"op": "add_edge", "a": key[0], "b": key[1],
                          "provenance": body.provenance})
            service.persist()
            return {"node_a": key[0], "node_b": key[1],
                    "provenance": body.provenance}

    @app.delete("/edge")
    def delete_edge(a: int = Query(...), b: int = Query(...)):
        with service.lock:
            try:
                service.graph.remove_edge(a, b)
            except KeyError:
                raise HTTPException(404, f"no edge ({a}, {b})")
            key = (a, b) if a < b else (b, a)
            append_audit(service.audit_path,
                         {"op": "remove_edge", "a": key[0], "b": key[1]})
            service.persist()
            return {"removed": [key[0], key[1]]}

    @app.post("/node")
    def add_node(body: NodeBody):
        if len(body.position) != 3:
            raise HTTPException(400, "position must have three components")
        with service.lock:
            g = service.graph
            fid = body.fragment_id
            if fid is None:
                fid = g.new_fragment()
            nid = g.add_node(tuple(body.position), fid, body.flags)
            append_audit(service.audit_path,
                         {"op": "add_node", "node_id": nid,
                          "position": [float(c) for c in body.position],
                          "fragment_id": fid, "flags": list(body.flags)})
            service.persist()
            return {"node_id": nid, "fragment_id": fid}

    return app


def serve(graph_dir, volume_path, host="127.0.0.1", port=8000,
          proposals_path=None, ui_dir=None):
    """Run the proofreading service until interrupted."""
    import uvicorn

    service = ProofreadService(graph_dir, volume_path, proposals_path)
    app = build_app(service)
    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)
