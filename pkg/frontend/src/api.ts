// Typed client for the review service. Claim races and resubmissions are
// expected outcomes, so they come back as values, never as thrown errors:
// a 409 must never cost the annotator their local edits.

import type { LoopStatus, ResolutionInstance, ReviewTask, TasksPage } from "./types.js";

export interface TaskFilter {
  state?: string;
  reason?: string;
  iteration?: number;
  page?: number;
  pageSize?: number;
}

export type ClaimResult =
  | { ok: true; task: ReviewTask }
  | { ok: false; conflict: true; error: string }
  | { ok: false; conflict: false; error: string };

export type SubmitResult =
  | { ok: true; status: "resolved" | "already_resolved" }
  | { ok: false; conflict: boolean; invalidBoxes: number[]; error: string };

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private url(path: string): string {
    return `${this.baseUrl}/api/v1${path}`;
  }

  async listTasks(filter: TaskFilter = {}): Promise<TasksPage> {
    const params = new URLSearchParams();
    if (filter.state) params.set("state", filter.state);
    if (filter.reason) params.set("reason", filter.reason);
    if (filter.iteration !== undefined) params.set("iteration", String(filter.iteration));
    params.set("page", String(filter.page ?? 1));
    params.set("page_size", String(filter.pageSize ?? 20));
    const response = await this.fetchImpl(this.url(`/tasks?${params}`));
    if (!response.ok) throw new Error(`task listing failed: ${response.status}`);
    return (await response.json()) as TasksPage;
  }

  async getTask(taskId: string): Promise<ReviewTask> {
    const response = await this.fetchImpl(this.url(`/tasks/${taskId}`));
    if (!response.ok) throw new Error(`task ${taskId} fetch failed: ${response.status}`);
    return (await response.json()) as ReviewTask;
  }

  async claimTask(taskId: string): Promise<ClaimResult> {
    const response = await this.fetchImpl(this.url(`/tasks/${taskId}/claim`), {
      method: "POST",
    });
    if (response.ok) return { ok: true, task: (await response.json()) as ReviewTask };
    const body = await response.json().catch(() => ({ error: `HTTP ${response.status}` }));
    return {
      ok: false,
      conflict: response.status === 409,
      error: String(body.error ?? body.detail ?? response.status),
    };
  }

  async submitResolution(
    taskId: string,
    instances: ResolutionInstance[],
  ): Promise<SubmitResult> {
    const response = await this.fetchImpl(this.url(`/tasks/${taskId}/resolution`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ instances }),
    });
    if (response.ok) {
      const body = (await response.json()) as { status: "resolved" | "already_resolved" };
      return { ok: true, status: body.status };
    }
    const body = await response.json().catch(() => ({}));
    return {
      ok: false,
      conflict: response.status === 409,
      invalidBoxes: (body.invalid_boxes ?? []) as number[],
      error: String(body.error ?? body.detail ?? response.status),
    };
  }

  async loopStatus(): Promise<LoopStatus> {
    const response = await this.fetchImpl(this.url("/loop/status"));
    if (!response.ok) throw new Error(`loop status failed: ${response.status}`);
    return (await response.json()) as LoopStatus;
  }

  imageUrl(imageId: string): string {
    return this.url(`/images/${imageId}`);
  }
}
