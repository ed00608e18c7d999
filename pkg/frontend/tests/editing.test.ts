import { describe, expect, it } from "vitest";

import { EditableBox } from "../src/editing.js";

const BOUNDS = { width: 1000, height: 800 };

function fresh(): EditableBox {
  return EditableBox.fromPrediction({ box: [100, 200, 300, 400], class_id: 0, confidence: 0.45 });
}

describe("editable box state machine", () => {
  it("starts untouched with the prediction's geometry and confidence", () => {
    const box = fresh();
    expect(box.state).toBe("untouched");
    expect(box.box).toEqual([100, 200, 300, 400]);
    expect(box.confidence).toBe(0.45);
  });

  it("moving marks moved; relabeling marks relabeled; deleting is terminal", () => {
    const box = fresh();
    box.moveBy(10, -5, BOUNDS);
    expect(box.state).toBe("moved");
    box.relabel(1);
    expect(box.state).toBe("relabeled");
    box.markDeleted();
    expect(box.state).toBe("deleted");
    expect(() => box.moveBy(1, 1, BOUNDS)).toThrow(/deleted/);
    expect(() => box.relabel(0)).toThrow(/deleted/);
  });

  it("added boxes stay added through edits", () => {
    const box = EditableBox.added([10, 10, 50, 50], 1);
    box.moveBy(5, 5, BOUNDS);
    box.relabel(0);
    expect(box.state).toBe("added");
    box.markDeleted();
    expect(box.state).toBe("deleted");
  });

  it("relabeling to the same class is not an edit", () => {
    const box = fresh();
    box.relabel(0);
    expect(box.state).toBe("untouched");
  });

  it("moves are clamped so the box keeps its size inside the image", () => {
    const box = fresh();
    box.moveBy(-10_000, -10_000, BOUNDS);
    expect(box.box).toEqual([0, 0, 200, 200]);
    box.moveBy(10_000, 10_000, BOUNDS);
    expect(box.box).toEqual([800, 600, 1000, 800]);
  });

  it("a fully clamped-out move is a no-op, not a state change", () => {
    const box = EditableBox.fromPrediction({ box: [0, 0, 1000, 800], class_id: 0, confidence: 1 });
    box.moveBy(50, 50, BOUNDS);
    expect(box.state).toBe("untouched");
  });

  it("resizing respects image bounds and the minimum size", () => {
    const box = fresh();
    box.resizeCorner("se", 10_000, 10_000, BOUNDS);
    expect(box.box).toEqual([100, 200, 1000, 800]);
    box.resizeCorner("nw", 10_000, 10_000, BOUNDS);
    expect(box.xMin).toBe(box.xMax - 1);
    expect(box.yMin).toBe(box.yMax - 1);
    expect(box.state).toBe("moved");
  });

  it("exact pixel deltas survive a move", () => {
    const box = fresh();
    box.moveBy(7, -3, BOUNDS);
    expect(box.box).toEqual([107, 197, 307, 397]);
  });
});
