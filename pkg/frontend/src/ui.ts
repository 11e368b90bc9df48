/** DOM shell around a ReviewSession: queue list, three orthogonal slab
 * panels with overlays, and keyboard-first review controls.
 *
 * Handlers delegate to the session one-to-one; this file only renders.
 */

import type { Api, GraphDto, SlabDto, Vec3 } from "./api.js";
import {
  Axis,
  PixelPoint,
  SlabView,
  inWindow,
  slabView,
  umToVoxel,
  voxelToPixel,
} from "./overlay.js";
import { ReviewItem, ReviewSession } from "./state.js";

export const SLAB_SIZE = 64;

export const COLORS = {
  source: "#4fc3f7",
  target: "#ffb74d",
  trajectory: "#ef5350",
  nodes: "#90a4ae",
  picked: "#ffee58",
};

const AXIS_LABELS = ["x (rows y, cols z)", "y (rows x, cols z)", "z (rows x, cols y)"];

interface Panel {
  axis: Axis;
  canvas: HTMLCanvasElement;
  ctx: CanvasRenderingContext2D;
  view: SlabView | null;
}

interface DragState {
  panel: Panel;
  startX: number;
  startY: number;
  lastX: number;
  lastY: number;
  moved: boolean;
}

function must<T extends HTMLElement>(doc: Document, id: string): T {
  const el = doc.getElementById(id);
  if (el === null) throw new Error(`missing element #${id}`);
  return el as T;
}

export class ProofreadApp {
  readonly session: ReviewSession;
  private readonly doc: Document;
  private panels: Panel[] = [];
  private center: Vec3 | null = null;
  private shownId: number | null = null;
  private edgeMode = false;
  private picked: number | null = null;
  private drag: DragState | null = null;
  private renderToken = 0;

  private banner!: HTMLElement;
  private bannerText!: HTMLElement;
  private queueList!: HTMLElement;
  private emptyState!: HTMLElement;
  private statusLine!: HTMLElement;
  private edgeButton!: HTMLButtonElement;

  constructor(doc: Document, api: Api) {
    this.doc = doc;
    this.session = new ReviewSession(api);
  }

  async start(): Promise<void> {
    this.grabElements();
    this.bindControls();
    await this.session.refresh();
    this.syncCenter();
    await this.render();
  }

  private grabElements(): void {
    const doc = this.doc;
    this.banner = must(doc, "banner");
    this.bannerText = must(doc, "banner-text");
    this.queueList = must(doc, "queue-list");
    this.emptyState = must(doc, "empty-state");
    this.statusLine = must(doc, "status-line");
    this.edgeButton = must<HTMLButtonElement>(doc, "btn-edge");
    this.panels = ([0, 1, 2] as Axis[]).map((axis) => {
      const canvas = must<HTMLCanvasElement>(doc, `slab-${axis}`);
      const ctx = canvas.getContext("2d");
      if (ctx === null) throw new Error("canvas 2d context unavailable");
      return { axis, canvas, ctx, view: null };
    });
  }

  private bindControls(): void {
    this.doc.addEventListener("keydown", (e) => {
      void this.onKey(e);
    });
    const click = (id: string, fn: () => void) => {
      must(this.doc, id).addEventListener("click", fn);
    };
    click("btn-next", () => void this.act(() => this.session.next()));
    click("btn-prev", () => void this.act(() => this.session.prev()));
    click("btn-accept", () => void this.act(() => this.session.accept()));
    click("btn-reject", () => void this.act(() => this.session.reject()));
    click("btn-refresh", () => void this.refreshAll());
    click("btn-retry", () => void this.refreshAll());
    click("btn-edge", () => this.toggleEdgeMode());
    for (const panel of this.panels) {
      const c = panel.canvas;
      c.addEventListener("pointerdown", (e) => this.onPointerDown(panel, e));
      c.addEventListener("pointermove", (e) => this.onPointerMove(panel, e));
      c.addEventListener("pointerup", (e) => void this.onPointerUp(panel, e));
      c.addEventListener("wheel", (e) => void this.onWheel(panel, e), {
        passive: false,
      });
    }
  }

  private async onKey(e: KeyboardEvent): Promise<void> {
    const target = e.target as HTMLElement | null;
    if (target !== null && ["INPUT", "TEXTAREA"].includes(target.tagName)) {
      return;
    }
    switch (e.key) {
      case "n":
        await this.act(() => this.session.next());
        break;
      case "p":
        await this.act(() => this.session.prev());
        break;
      case "a":
        await this.act(() => this.session.accept());
        break;
      case "r":
        await this.act(() => this.session.reject());
        break;
      case "e":
        this.toggleEdgeMode();
        break;
      case "g":
        await this.refreshAll();
        break;
      default:
        return;
    }
  }

  private async act(fn: () => void | Promise<unknown>): Promise<void> {
    await fn();
    this.syncCenter();
    await this.render();
  }

  private async refreshAll(): Promise<void> {
    await this.session.refresh();
    this.shownId = null;
    this.syncCenter();
    await this.render();
  }

  private toggleEdgeMode(): void {
    this.edgeMode = !this.edgeMode;
    this.picked = null;
    this.edgeButton.classList.toggle("active", this.edgeMode);
    this.renderStatus();
  }

  /** Re-center the slab windows when the current item changes; panning
   * state survives while the same item stays selected. */
  private syncCenter(): void {
    const cur = this.session.current;
    if (cur === null) {
      this.center = null;
      this.shownId = null;
      return;
    }
    if (this.shownId !== cur.proposal.id) {
      this.shownId = cur.proposal.id;
      this.center = [cur.site[0], cur.site[1], cur.site[2]];
      this.picked = null;
    }
  }

  async render(): Promise<void> {
    this.renderBanner();
    this.renderQueue();
    this.renderStatus();
    const cur = this.session.current;
    this.emptyState.style.display = cur === null ? "block" : "none";
    if (cur !== null && this.center !== null) {
      await this.renderSite(cur);
    } else {
      for (const panel of this.panels) {
        panel.view = null;
        panel.ctx.clearRect(0, 0, panel.canvas.width, panel.canvas.height);
      }
    }
  }

  private renderBanner(): void {
    const s = this.session;
    if (s.offline) {
      this.bannerText.textContent =
        "service unreachable; showing the last loaded state";
      this.banner.style.display = "flex";
    } else if (s.lastError !== null) {
      this.bannerText.textContent = s.lastError;
      this.banner.style.display = "flex";
    } else {
      this.banner.style.display = "none";
    }
  }

  private renderQueue(): void {
    const q = this.session.queue;
    this.queueList.textContent = "";
    q.items.forEach((item, i) => {
      const li = this.doc.createElement("li");
      const site = item.site.map((c) => c.toFixed(0)).join(", ");
      li.textContent =
        `#${item.proposal.id} ${item.proposal.confidence} @ (${site})`;
      if (i === q.cursor) li.classList.add("active");
      li.addEventListener("click", () => {
        q.cursor = i;
        this.syncCenter();
        void this.render();
      });
      this.queueList.appendChild(li);
    });
  }

  private renderStatus(): void {
    const q = this.session.queue;
    const cur = this.session.current;
    if (cur === null) {
      this.statusLine.textContent = "all proposals resolved";
      return;
    }
    const mode = this.edgeMode
      ? this.picked === null
        ? " | edge mode: pick first node"
        : ` | edge mode: node ${this.picked} picked, pick second`
      : "";
    this.statusLine.textContent =
      `proposal #${cur.proposal.id} (${cur.proposal.confidence}), ` +
      `${q.cursor + 1} of ${q.length}${mode}`;
  }

  private async renderSite(item: ReviewItem): Promise<void> {
    const token = ++this.renderToken;
    const center = this.center;
    if (center === null) return;
    for (const panel of this.panels) {
      let slab: SlabDto;
      try {
        slab = await this.session.api.fetchSlab({
          cx: center[0],
          cy: center[1],
          cz: center[2],
          size: SLAB_SIZE,
          axis: panel.axis,
        });
      } catch {
        continue;
      }
      if (token !== this.renderToken) return;
      panel.view = slabView(slab);
      await this.drawSlab(panel, slab);
      if (token !== this.renderToken) return;
      this.drawOverlays(panel, item);
    }
  }

  private drawSlab(panel: Panel, slab: SlabDto): Promise<void> {
    return new Promise((resolve) => {
      const img = new Image();
      img.onload = () => {
        panel.canvas.width = slab.size;
        panel.canvas.height = slab.size;
        panel.ctx.drawImage(img, 0, 0);
        resolve();
      };
      img.onerror = () => {
        panel.canvas.width = slab.size;
        panel.canvas.height = slab.size;
        panel.ctx.fillStyle = "#000";
        panel.ctx.fillRect(0, 0, slab.size, slab.size);
        resolve();
      };
      img.src = `data:image/png;base64,${slab.png}`;
    });
  }

  private drawOverlays(panel: Panel, item: ReviewItem): void {
    const g = this.session.graph;
    const view = panel.view;
    if (g === null || view === null) return;
    const ctx = panel.ctx;

    this.strokePolyline(
      ctx,
      this.fragmentPixels(g, view, item.proposal.source.fragment),
      COLORS.source,
      [],
    );
    const targetFragment = item.proposal.target.fragment;
    if (targetFragment !== null) {
      this.strokePolyline(
        ctx,
        this.fragmentPixels(g, view, targetFragment),
        COLORS.target,
        [],
      );
    }
    const traj = item.proposal.trajectory.map((p) =>
      voxelToPixel(view, umToVoxel(p, g.pitch)),
    );
    this.strokePolyline(ctx, traj, COLORS.trajectory, [3, 2]);

    ctx.fillStyle = COLORS.nodes;
    let drawn = 0;
    for (const n of g.nodes) {
      const p = voxelToPixel(view, n.position);
      if (!inWindow(view, p)) continue;
      if (n.node_id === this.picked) {
        ctx.strokeStyle = COLORS.picked;
        ctx.lineWidth = 1;
        ctx.beginPath();
        ctx.arc(p.col, p.row, 3, 0, 2 * Math.PI);
        ctx.stroke();
      }
      ctx.fillRect(p.col - 0.5, p.row - 0.5, 1, 1);
      if (++drawn >= 2000) break;
    }
  }

  private fragmentPixels(
    g: GraphDto,
    view: SlabView,
    fragmentId: number,
  ): PixelPoint[] {
    // nodes are serialized in path order within a fragment
    return g.nodes
      .filter((n) => n.fragment_id === fragmentId)
      .map((n) => voxelToPixel(view, n.position));
  }

  private strokePolyline(
    ctx: CanvasRenderingContext2D,
    points: PixelPoint[],
    color: string,
    dash: number[],
  ): void {
    if (points.length < 2) return;
    ctx.strokeStyle = color;
    ctx.lineWidth = 1;
    ctx.setLineDash(dash);
    ctx.beginPath();
    ctx.moveTo(points[0].col, points[0].row);
    for (let i = 1; i < points.length; i++) {
      ctx.lineTo(points[i].col, points[i].row);
    }
    ctx.stroke();
    ctx.setLineDash([]);
  }

  private cssScale(panel: Panel): number {
    const rect = panel.canvas.getBoundingClientRect();
    return rect.width > 0 ? rect.width / panel.canvas.width : 1;
  }

  private onPointerDown(panel: Panel, e: PointerEvent): void {
    panel.canvas.setPointerCapture(e.pointerId);
    this.drag = {
      panel,
      startX: e.clientX,
      startY: e.clientY,
      lastX: e.clientX,
      lastY: e.clientY,
      moved: false,
    };
  }

  private onPointerMove(panel: Panel, e: PointerEvent): void {
    const d = this.drag;
    if (d === null || d.panel !== panel) return;
    d.lastX = e.clientX;
    d.lastY = e.clientY;
    if (
      Math.abs(d.lastX - d.startX) > 3 ||
      Math.abs(d.lastY - d.startY) > 3
    ) {
      d.moved = true;
    }
  }

  private async onPointerUp(panel: Panel, e: PointerEvent): Promise<void> {
    const d = this.drag;
    this.drag = null;
    if (d === null || d.panel !== panel) return;
    if (d.moved && this.center !== null && panel.view !== null) {
      const scale = this.cssScale(panel);
      const dCol = (e.clientX - d.startX) / scale;
      const dRow = (e.clientY - d.startY) / scale;
      // dragging the image right moves the window left
      this.center[panel.view.axes[0]] -= dRow;
      this.center[panel.view.axes[1]] -= dCol;
      const cur = this.session.current;
      if (cur !== null) await this.renderSite(cur);
      return;
    }
    if (this.edgeMode) {
      await this.pickNode(panel, e);
    }
  }

  private async onWheel(panel: Panel, e: WheelEvent): Promise<void> {
    e.preventDefault();
    if (this.center === null) return;
    this.center[panel.axis] += Math.sign(e.deltaY);
    const cur = this.session.current;
    if (cur !== null) await this.renderSite(cur);
  }

  private async pickNode(panel: Panel, e: PointerEvent): Promise<void> {
    const g = this.session.graph;
    const view = panel.view;
    if (g === null || view === null) return;
    const rect = panel.canvas.getBoundingClientRect();
    const scale = this.cssScale(panel);
    const col = (e.clientX - rect.left) / scale;
    const row = (e.clientY - rect.top) / scale;
    let best: number | null = null;
    let bestDist = 6;
    for (const n of g.nodes) {
      const p = voxelToPixel(view, n.position);
      if (!inWindow(view, p)) continue;
      const dist = Math.hypot(p.col - col, p.row - row);
      if (dist < bestDist) {
        best = n.node_id;
        bestDist = dist;
      }
    }
    if (best === null) return;
    if (this.picked === null) {
      this.picked = best;
    } else if (this.picked !== best) {
      await this.session.connectNodes(this.picked, best);
      this.picked = null;
    }
    await this.render();
  }
}

export function axisLabel(axis: Axis): string {
  return AXIS_LABELS[axis];
}
