// Runs only against a live service (AUTOLABEL_SERVICE_URL), e.g.
//   autolabel serve -c config.yaml --dataset pooled.jsonl --port 8745
// seeded with at least one pending task carrying predictions.

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { AnnotationSession } from "../src/annotate.js";
import { QueueController } from "../src/queue.js";

const SERVICE = process.env.AUTOLABEL_SERVICE_URL;

describe.skipIf(!SERVICE)("live service round trip", () => {
  const api = new ApiClient(SERVICE ?? "");

  it("claims, edits by a known delta, submits, and conflicts on re-claim", async () => {
    const controller = new QueueController(api);
    const task = await controller.claimNextPending();
    expect(task).not.toBeNull();
    expect(task!.predictions.length).toBeGreaterThan(0);

    const session = new AnnotationSession(task!, { width: 1000, height: 800 });
    const before = [...session.boxes[0]!.box];
    session.boxes[0]!.moveBy(7, -3, session.bounds);
    const payload = session.toResolution();
    expect(payload[0]!.box[0]).toBe(before[0]! + 7);
    expect(payload[0]!.box[1]).toBe(before[1]! - 3);

    const result = await api.submitResolution(task!.task_id, payload);
    expect(result).toMatchObject({ ok: true, status: "resolved" });

    const reclaim = await api.claimTask(task!.task_id);
    expect(reclaim).toMatchObject({ ok: false, conflict: true });

    const retry = await api.submitResolution(task!.task_id, payload);
    expect(retry).toMatchObject({ ok: true, status: "already_resolved" });

    const refreshed = await api.getTask(task!.task_id);
    expect(refreshed.state).toBe("resolved");
    expect(refreshed.resolution).toEqual(payload);
  });
});
