// One annotation session per claimed task: the working copy of its boxes
// and the resolution payload derived from them. All truth lives on the
// server; this is the only client-side state.

import { EditableBox, type ImageBounds } from "./editing.js";
import type { BoxTuple, ResolutionInstance, ReviewTask } from "./types.js";

export class AnnotationSession {
  readonly boxes: EditableBox[];

  constructor(
    public readonly task: ReviewTask,
    public readonly bounds: ImageBounds,
  ) {
    this.boxes = task.predictions.map((p) => EditableBox.fromPrediction(p));
  }

  get surviving(): EditableBox[] {
    return this.boxes.filter((b) => b.state !== "deleted");
  }

  get hasEdits(): boolean {
    return this.boxes.some((b) => b.state !== "untouched");
  }

  addBox(box: BoxTuple, classId: number): EditableBox {
    const clamped: BoxTuple = [
      Math.max(0, Math.min(box[0], box[2])),
      Math.max(0, Math.min(box[1], box[3])),
      Math.min(this.bounds.width, Math.max(box[0], box[2])),
      Math.min(this.bounds.height, Math.max(box[1], box[3])),
    ];
    const created = EditableBox.added(clamped, classId);
    this.boxes.push(created);
    return created;
  }

  deleteAll(): void {
    for (const box of this.boxes) box.markDeleted();
  }

  /** Keyboard accept-all: the predictions go back exactly as they came. */
  acceptAll(): ResolutionInstance[] {
    return this.task.predictions.map((p) => ({ box: [...p.box] as BoxTuple, class_id: p.class_id }));
  }

  toResolution(): ResolutionInstance[] {
    return this.surviving.map((b) => ({ box: b.box, class_id: b.classId }));
  }
}
