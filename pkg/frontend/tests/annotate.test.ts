import { describe, expect, it } from "vitest";

import { AnnotationSession } from "../src/annotate.js";
import type { ReviewTask } from "../src/types.js";

function task(): ReviewTask {
  return {
    task_id: "task-000001",
    image_id: "pool-1",
    image_url: "/api/v1/images/pool-1",
    reason: "low_confidence",
    state: "in_review",
    score: 0.9,
    iteration: 1,
    predictions: [
      { box: [100, 200, 300, 400], class_id: 0, confidence: 0.45 },
      { box: [500, 100, 700, 250], class_id: 1, confidence: 0.4 },
    ],
    resolution: null,
  };
}

const BOUNDS = { width: 1000, height: 800 };

describe("annotation session", () => {
  it("accept-all submits the predictions unchanged", () => {
    const session = new AnnotationSession(task(), BOUNDS);
    expect(session.acceptAll()).toEqual([
      { box: [100, 200, 300, 400], class_id: 0 },
      { box: [500, 100, 700, 250], class_id: 1 },
    ]);
    expect(session.hasEdits).toBe(false);
  });

  it("delete-all submits an empty resolution", () => {
    const session = new AnnotationSession(task(), BOUNDS);
    session.deleteAll();
    expect(session.toResolution()).toEqual([]);
    expect(session.hasEdits).toBe(true);
  });

  it("a moved box carries its exact pixel delta into the payload", () => {
    const session = new AnnotationSession(task(), BOUNDS);
    session.boxes[0]!.moveBy(7, -3, session.bounds);
    const payload = session.toResolution();
    expect(payload[0]!.box).toEqual([107, 197, 307, 397]);
    expect(payload[1]!.box).toEqual([500, 100, 700, 250]);
  });

  it("added boxes are clamped into the image and join the payload", () => {
    const session = new AnnotationSession(task(), BOUNDS);
    session.addBox([-50, 700, 120, 900], 1);
    const payload = session.toResolution();
    expect(payload).toHaveLength(3);
    expect(payload[2]).toEqual({ box: [0, 700, 120, 800], class_id: 1 });
  });

  it("deleted boxes leave the payload but the rest survive", () => {
    const session = new AnnotationSession(task(), BOUNDS);
    session.boxes[0]!.markDeleted();
    expect(session.toResolution()).toEqual([{ box: [500, 100, 700, 250], class_id: 1 }]);
  });
});
