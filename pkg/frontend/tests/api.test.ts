import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { QueueController } from "../src/queue.js";
import { MockServer } from "./mock_server.js";

function seeded(n: number): { server: MockServer; api: ApiClient } {
  const server = new MockServer();
  for (let k = 0; k < n; k += 1) {
    server.addTask({ imageId: `pool-${k}`, score: n - k });
  }
  return { server, api: new ApiClient("", server.fetch) };
}

describe("task listing", () => {
  it("pages a 100-task queue exhaustively without duplicates", async () => {
    const { api } = seeded(100);
    const seen: string[] = [];
    for (let page = 1; page <= 5; page += 1) {
      const listing = await api.listTasks({ page, pageSize: 20 });
      expect(listing.total).toBe(100);
      expect(listing.total_pages).toBe(5);
      expect(listing.tasks).toHaveLength(20);
      seen.push(...listing.tasks.map((t) => t.task_id));
    }
    expect(new Set(seen).size).toBe(100);
  });

  it("orders by descending uncertainty score", async () => {
    const { api } = seeded(50);
    const listing = await api.listTasks({ pageSize: 50 });
    const scores = listing.tasks.map((t) => t.score);
    expect(scores).toEqual([...scores].sort((a, b) => b - a));
  });
});

describe("claim and resolve", () => {
  it("claims a pending task and conflicts on the second claim", async () => {
    const { server, api } = seeded(1);
    const taskId = [...(await api.listTasks()).tasks][0]!.task_id;
    const first = await api.claimTask(taskId);
    expect(first.ok).toBe(true);
    const second = await api.claimTask(taskId);
    expect(second).toMatchObject({ ok: false, conflict: true });
    expect(server.get(taskId)!.state).toBe("in_review");
  });

  it("rejects out-of-bounds boxes with their indices and keeps the task open", async () => {
    const { server, api } = seeded(1);
    const taskId = (await api.listTasks()).tasks[0]!.task_id;
    await api.claimTask(taskId);
    const result = await api.submitResolution(taskId, [
      { box: [10, 10, 50, 50], class_id: 0 },
      { box: [-1, 10, 50, 50], class_id: 0 },
    ]);
    expect(result).toMatchObject({ ok: false, conflict: false, invalidBoxes: [1] });
    expect(server.get(taskId)!.state).toBe("in_review");
  });

  it("resubmission after success reports already_resolved", async () => {
    const { api } = seeded(1);
    const taskId = (await api.listTasks()).tasks[0]!.task_id;
    await api.claimTask(taskId);
    const payload = [{ box: [10, 10, 50, 50] as [number, number, number, number], class_id: 0 }];
    const first = await api.submitResolution(taskId, payload);
    expect(first).toMatchObject({ ok: true, status: "resolved" });
    const retry = await api.submitResolution(taskId, payload);
    expect(retry).toMatchObject({ ok: true, status: "already_resolved" });
  });
});

describe("queue controller", () => {
  it("claims the next pending task, skipping ones lost to races", async () => {
    const { server, api } = seeded(3);
    const controller = new QueueController(api);
    // another annotator grabs the top task between listing and claiming
    const ids = (await api.listTasks()).tasks.map((t) => t.task_id);
    server.get(ids[0]!)!.state = "in_review";
    const claimed = await controller.claimNextPending();
    expect(claimed).not.toBeNull();
    expect(claimed!.task_id).toBe(ids[1]);
  });

  it("returns null on an exhausted queue", async () => {
    const { api } = seeded(0);
    const controller = new QueueController(api);
    expect(await controller.claimNextPending()).toBeNull();
  });
});
