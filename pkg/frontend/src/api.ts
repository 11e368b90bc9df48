/** Typed client for the reconstruction service HTTP API.
 *
 * Every mutating user action in the UI maps to exactly one call here;
 * reads (graph, proposals, slabs) are unrestricted.
 */

export type Vec3 = [number, number, number];

export interface GraphNode {
  node_id: number;
  position: Vec3;
  fragment_id: number;
  flags: string[];
}

export interface GraphEdge {
  node_a: number;
  node_b: number;
  provenance: string;
}

export interface GraphDto {
  pitch: number;
  fragments: number[];
  nodes: GraphNode[];
  edges: GraphEdge[];
}

export interface ProposalSource {
  fragment: number;
  end: number;
}

export interface ProposalTarget {
  fragment: number | null;
  node: number | null;
}

export interface ProposalDto {
  id: number;
  source: ProposalSource;
  target: ProposalTarget;
  trajectory: number[][];
  confidence: string;
  status: string;
}

export interface SlabRequest {
  cx: number;
  cy: number;
  cz: number;
  size: number;
  axis: number;
}

export interface SlabDto {
  png: string;
  axis: number;
  axes: [number, number];
  origin: [number, number];
  depth_origin: number;
  size: number;
}

export interface NodeCreated {
  node_id: number;
  fragment_id: number;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export interface Api {
  fetchGraph(): Promise<GraphDto>;
  fetchProposals(): Promise<ProposalDto[]>;
  fetchSlab(req: SlabRequest): Promise<SlabDto>;
  acceptProposal(id: number): Promise<ProposalDto>;
  rejectProposal(id: number): Promise<ProposalDto>;
  addEdge(a: number, b: number, provenance?: string): Promise<GraphEdge>;
  removeEdge(a: number, b: number): Promise<{ removed: [number, number] }>;
  addNode(position: Vec3, fragmentId?: number): Promise<NodeCreated>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class HttpApi implements Api {
  constructor(
    private readonly base: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let resp: Response;
    try {
      resp = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, `network failure: ${String(err)}`);
    }
    const text = await resp.text();
    let body: unknown = null;
    if (text) {
      try {
        body = JSON.parse(text);
      } catch {
        body = text;
      }
    }
    if (!resp.ok) {
      let detail = resp.statusText || `HTTP ${resp.status}`;
      if (body !== null && typeof body === "object" && "detail" in body) {
        detail = String((body as { detail: unknown }).detail);
      } else if (typeof body === "string" && body) {
        detail = body;
      }
      throw new ApiError(resp.status, detail);
    }
    return body as T;
  }

  private post<T>(path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method: "POST" };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    return this.request<T>(path, init);
  }

  fetchGraph(): Promise<GraphDto> {
    return this.request<GraphDto>("/graph");
  }

  fetchProposals(): Promise<ProposalDto[]> {
    return this.request<ProposalDto[]>("/proposals");
  }

  fetchSlab(req: SlabRequest): Promise<SlabDto> {
    const q = new URLSearchParams({
      cx: String(req.cx),
      cy: String(req.cy),
      cz: String(req.cz),
      size: String(req.size),
      axis: String(req.axis),
    });
    return this.request<SlabDto>(`/slab?${q.toString()}`);
  }

  acceptProposal(id: number): Promise<ProposalDto> {
    return this.post<ProposalDto>(`/proposal/${id}/accept`);
  }

  rejectProposal(id: number): Promise<ProposalDto> {
    return this.post<ProposalDto>(`/proposal/${id}/reject`);
  }

  addEdge(a: number, b: number, provenance = "Manual"): Promise<GraphEdge> {
    return this.post<GraphEdge>("/edge", { a, b, provenance });
  }

  removeEdge(a: number, b: number): Promise<{ removed: [number, number] }> {
    return this.request(`/edge?a=${a}&b=${b}`, { method: "DELETE" });
  }

  addNode(position: Vec3, fragmentId?: number): Promise<NodeCreated> {
    const body: Record<string, unknown> = { position };
    if (fragmentId !== undefined) {
      body.fragment_id = fragmentId;
    }
    return this.post<NodeCreated>("/node", body);
  }
}
