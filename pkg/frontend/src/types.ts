// Wire types mirroring the service's /api/v1 JSON (see docs/api.md).

export type BoxTuple = [number, number, number, number]; // x_min, y_min, x_max, y_max

export interface Prediction {
  box: BoxTuple;
  class_id: number;
  confidence: number;
}

export type TaskReason = "low_confidence" | "count_outlier" | "committee_disagreement";
export type TaskState = "pending" | "in_review" | "resolved";

export interface ReviewTask {
  task_id: string;
  image_id: string;
  image_url: string;
  reason: TaskReason;
  state: TaskState;
  score: number;
  iteration: number;
  predictions: Prediction[];
  resolution: { box: BoxTuple; class_id: number }[] | null;
}

export interface TasksPage {
  tasks: ReviewTask[];
  page: number;
  page_size: number;
  total: number;
  total_pages: number;
}

export interface ResolutionInstance {
  box: BoxTuple;
  class_id: number;
}

export interface LoopStatus {
  state: "idle" | "running" | "done" | "failed";
  iteration: number;
  iterations_completed?: number;
  error?: string;
}
