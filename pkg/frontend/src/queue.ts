// Queue view model: filtered, uncertainty-ordered pages straight from the
// API, plus the "work the queue" advance policy used by the submit flow.

import type { ApiClient, TaskFilter } from "./api.js";
import type { ReviewTask, TasksPage } from "./types.js";

export const REASON_BADGES: Record<string, string> = {
  low_confidence: "low confidence",
  count_outlier: "count outlier",
  committee_disagreement: "committee disagreement",
};

export interface QueueCard {
  taskId: string;
  imageId: string;
  badge: string;
  score: number;
  iteration: number;
  state: string;
}

export function toCards(page: TasksPage): QueueCard[] {
  return page.tasks.map((t) => ({
    taskId: t.task_id,
    imageId: t.image_id,
    badge: REASON_BADGES[t.reason] ?? t.reason,
    score: t.score,
    iteration: t.iteration,
    state: t.state,
  }));
}

export class QueueController {
  constructor(private readonly api: ApiClient) {}

  async fetchPage(filter: TaskFilter): Promise<TasksPage> {
    return this.api.listTasks(filter);
  }

  /**
   * Claim the next pending task, skipping over tasks lost to claim races.
   * Conflicts are normal when several annotators work the same queue.
   */
  async claimNextPending(filter: Omit<TaskFilter, "state"> = {}): Promise<ReviewTask | null> {
    let page = 1;
    for (;;) {
      const listing = await this.api.listTasks({ ...filter, state: "pending", page });
      if (listing.tasks.length === 0) return null;
      for (const candidate of listing.tasks) {
        const claim = await this.api.claimTask(candidate.task_id);
        if (claim.ok) return claim.task;
        if (!claim.conflict) throw new Error(claim.error);
      }
      if (page >= listing.total_pages) return null;
      page += 1;
    }
  }
}
