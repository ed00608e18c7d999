// Client-side box editing: one EditableBox per predicted instance plus any
// the annotator adds. Geometry always stays inside the image bounds; every
// coordinate is in original image pixel space.

import type { BoxTuple, Prediction } from "./types.js";

export type EditState = "untouched" | "moved" | "relabeled" | "added" | "deleted";

const MIN_SIZE = 1;

export interface ImageBounds {
  width: number;
  height: number;
}

export class EditableBox {
  constructor(
    public xMin: number,
    public yMin: number,
    public xMax: number,
    public yMax: number,
    public classId: number,
    public confidence: number | null,
    public state: EditState = "untouched",
  ) {}

  static fromPrediction(p: Prediction): EditableBox {
    return new EditableBox(p.box[0], p.box[1], p.box[2], p.box[3], p.class_id, p.confidence);
  }

  static added(box: BoxTuple, classId: number): EditableBox {
    return new EditableBox(box[0], box[1], box[2], box[3], classId, null, "added");
  }

  get box(): BoxTuple {
    return [this.xMin, this.yMin, this.xMax, this.yMax];
  }

  private transition(next: Exclude<EditState, "untouched" | "added">): void {
    if (this.state === "deleted") throw new Error("deleted boxes cannot be edited");
    if (this.state === "added" && next !== "deleted") return; // added boxes stay added
    this.state = next;
  }

  /** Translate, clamped so the box keeps its size inside the image. */
  moveBy(dx: number, dy: number, bounds: ImageBounds): void {
    const width = this.xMax - this.xMin;
    const height = this.yMax - this.yMin;
    let x = this.xMin + dx;
    let y = this.yMin + dy;
    x = Math.min(Math.max(x, 0), bounds.width - width);
    y = Math.min(Math.max(y, 0), bounds.height - height);
    if (x !== this.xMin || y !== this.yMin) {
      this.xMin = x;
      this.yMin = y;
      this.xMax = x + width;
      this.yMax = y + height;
      this.transition("moved");
    }
  }

  /** Drag one corner; the box never leaves the image or drops below 1 px. */
  resizeCorner(corner: "nw" | "ne" | "sw" | "se", dx: number, dy: number, bounds: ImageBounds): void {
    let { xMin, yMin, xMax, yMax } = this;
    if (corner === "nw" || corner === "sw") {
      xMin = Math.min(Math.max(xMin + dx, 0), xMax - MIN_SIZE);
    } else {
      xMax = Math.max(Math.min(xMax + dx, bounds.width), xMin + MIN_SIZE);
    }
    if (corner === "nw" || corner === "ne") {
      yMin = Math.min(Math.max(yMin + dy, 0), yMax - MIN_SIZE);
    } else {
      yMax = Math.max(Math.min(yMax + dy, bounds.height), yMin + MIN_SIZE);
    }
    if (xMin !== this.xMin || yMin !== this.yMin || xMax !== this.xMax || yMax !== this.yMax) {
      this.xMin = xMin;
      this.yMin = yMin;
      this.xMax = xMax;
      this.yMax = yMax;
      this.transition("moved");
    }
  }

  relabel(classId: number): void {
    if (classId !== this.classId) {
      this.classId = classId;
      this.transition("relabeled");
    }
  }

  markDeleted(): void {
    this.state = "deleted";
  }
}
