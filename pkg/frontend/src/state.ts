/** Review queue and session logic, independent of any DOM.
 *
 * The keyboard and button handlers in the UI delegate one-to-one to the
 * methods here, so driving a ReviewSession is equivalent to driving the
 * rendered interface.
 */

import type { Api, GraphDto, ProposalDto, Vec3 } from "./api.js";
import { ApiError } from "./api.js";
import { umToVoxel } from "./overlay.js";

export const CONFIDENCE_ORDER = [
  "OracleMerged",
  "CentroidMerged",
  "LowConfidence",
];

export function confidenceRank(confidence: string): number {
  const i = CONFIDENCE_ORDER.indexOf(confidence);
  return i < 0 ? CONFIDENCE_ORDER.length : i;
}

export interface ReviewItem {
  proposal: ProposalDto;
  /** Voxel coordinates of the inspection window center. */
  site: Vec3;
}

/** Window center for a proposal: the trajectory midpoint, or the source
 * fragment's free end when there is no trajectory to show. */
export function siteOf(proposal: ProposalDto, graph: GraphDto): Vec3 {
  if (proposal.trajectory.length > 0) {
    const mid = proposal.trajectory[Math.floor(proposal.trajectory.length / 2)];
    return umToVoxel(mid, graph.pitch);
  }
  const members = graph.nodes.filter(
    (n) => n.fragment_id === proposal.source.fragment,
  );
  if (members.length > 0) {
    const node =
      proposal.source.end === 0 ? members[0] : members[members.length - 1];
    return [node.position[0], node.position[1], node.position[2]];
  }
  return [0, 0, 0];
}

export function orderItems(items: ReviewItem[]): ReviewItem[] {
  return [...items].sort(
    (a, b) =>
      confidenceRank(a.proposal.confidence) -
        confidenceRank(b.proposal.confidence) ||
      a.site[0] - b.site[0] ||
      a.site[1] - b.site[1] ||
      a.site[2] - b.site[2] ||
      a.proposal.id - b.proposal.id,
  );
}

export class ReviewQueue {
  items: ReviewItem[];
  cursor = 0;

  constructor(items: ReviewItem[] = []) {
    this.items = orderItems(items);
  }

  get length(): number {
    return this.items.length;
  }

  get drained(): boolean {
    return this.items.length === 0;
  }

  get current(): ReviewItem | null {
    return this.items[this.cursor] ?? null;
  }

  next(): void {
    if (this.items.length > 0) {
      this.cursor = (this.cursor + 1) % this.items.length;
    }
  }

  prev(): void {
    if (this.items.length > 0) {
      this.cursor = (this.cursor - 1 + this.items.length) % this.items.length;
    }
  }

  removeCurrent(): { item: ReviewItem; index: number } | null {
    if (this.items.length === 0) return null;
    const index = this.cursor;
    const [item] = this.items.splice(index, 1);
    if (this.cursor >= this.items.length) {
      this.cursor = Math.max(0, this.items.length - 1);
    }
    return { item, index };
  }

  restore(item: ReviewItem, index: number): void {
    this.items.splice(index, 0, item);
    this.cursor = index;
  }
}

export class ReviewSession {
  readonly api: Api;
  queue = new ReviewQueue();
  graph: GraphDto | null = null;
  offline = false;
  lastError: string | null = null;

  constructor(api: Api) {
    this.api = api;
  }

  get current(): ReviewItem | null {
    return this.queue.current;
  }

  get drained(): boolean {
    return this.queue.drained;
  }

  /** Rebuild the whole client state from the service. The queue holds no
   * local knowledge that a reload would lose. */
  async refresh(): Promise<boolean> {
    try {
      const [graph, proposals] = await Promise.all([
        this.api.fetchGraph(),
        this.api.fetchProposals(),
      ]);
      this.graph = graph;
      this.queue = new ReviewQueue(
        proposals.map((p) => ({ proposal: p, site: siteOf(p, graph) })),
      );
      this.offline = false;
      this.lastError = null;
      return true;
    } catch (err) {
      this.noteFailure(err);
      this.offline = true;
      return false;
    }
  }

  async refreshGraph(): Promise<void> {
    try {
      this.graph = await this.api.fetchGraph();
    } catch {
      // keep the stale copy; the next full refresh will recover
    }
  }

  next(): void {
    this.queue.next();
  }

  prev(): void {
    this.queue.prev();
  }

  accept(): Promise<boolean> {
    return this.resolve("accept");
  }

  reject(): Promise<boolean> {
    return this.resolve("reject");
  }

  /** Remove the current item optimistically, then confirm with the
   * service; a failure puts the item back where it was. */
  private async resolve(action: "accept" | "reject"): Promise<boolean> {
    const removed = this.queue.removeCurrent();
    if (removed === null) return false;
    const id = removed.item.proposal.id;
    try {
      const done =
        action === "accept"
          ? await this.api.acceptProposal(id)
          : await this.api.rejectProposal(id);
      removed.item.proposal.status = done.status;
      this.lastError = null;
      if (action === "accept") {
        await this.refreshGraph();
      }
      return true;
    } catch (err) {
      this.queue.restore(removed.item, removed.index);
      this.noteFailure(err);
      return false;
    }
  }

  async connectNodes(a: number, b: number): Promise<boolean> {
    try {
      await this.api.addEdge(a, b, "Manual");
      this.lastError = null;
      await this.refreshGraph();
      return true;
    } catch (err) {
      this.noteFailure(err);
      return false;
    }
  }

  private noteFailure(err: unknown): void {
    if (err instanceof ApiError && err.status === 0) {
      this.offline = true;
    }
    this.lastError = err instanceof Error ? err.message : String(err);
  }
}
