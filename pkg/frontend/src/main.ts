// DOM wiring: queue list, canvas annotation view, polling, submit flow.
// Logic lives in the imported modules; this file only renders and routes
// events to them.

import { ApiClient } from "./api.js";
import { AnnotationSession } from "./annotate.js";
import type { EditableBox } from "./editing.js";
import { QueueController, toCards } from "./queue.js";
import type { ReviewTask } from "./types.js";
import { ViewTransform } from "./view.js";

const POLL_INTERVAL_MS = Number(
  new URLSearchParams(window.location.search).get("poll") ?? "5000",
);
const CLASS_NAMES = (
  new URLSearchParams(window.location.search).get("classes") ?? "broiler,hen"
).split(",");

const api = new ApiClient("");
const queue = new QueueController(api);

const queueRoot = document.getElementById("queue") as HTMLElement;
const annotateRoot = document.getElementById("annotate") as HTMLElement;
const canvas = document.getElementById("canvas") as HTMLCanvasElement;
const statusLine = document.getElementById("status") as HTMLElement;
const reasonFilter = document.getElementById("reason-filter") as HTMLSelectElement;
const iterationFilter = document.getElementById("iteration-filter") as HTMLInputElement;

let session: AnnotationSession | null = null;
let view = new ViewTransform();
let image: HTMLImageElement | null = null;
let selected: EditableBox | null = null;
let drag: { kind: "move" | "resize"; corner?: "nw" | "ne" | "sw" | "se"; lastX: number; lastY: number } | null = null;

function note(message: string): void {
  statusLine.textContent = message;
}

async function refreshQueue(): Promise<void> {
  const filter: Record<string, unknown> = {};
  if (reasonFilter.value) filter.reason = reasonFilter.value;
  if (iterationFilter.value) filter.iteration = Number(iterationFilter.value);
  const page = await queue.fetchPage({ ...filter, state: "pending" });
  queueRoot.innerHTML = "";
  if (page.tasks.length === 0) {
    queueRoot.innerHTML = '<p class="empty">Queue is empty — nothing awaits review.</p>';
    return;
  }
  for (const card of toCards(page)) {
    const el = document.createElement("div");
    el.className = "card";
    el.innerHTML =
      `<strong>${card.imageId}</strong>` +
      `<span class="badge badge-${card.state}">${card.badge}</span>` +
      `<span>score ${card.score.toFixed(3)} · iteration ${card.iteration}</span>`;
    el.addEventListener("click", () => void openTask(card.taskId));
    queueRoot.appendChild(el);
  }
}

async function openTask(taskId: string): Promise<void> {
  const claim = await api.claimTask(taskId);
  if (!claim.ok) {
    note(
      claim.conflict
        ? "Someone else claimed that task; pick another — nothing was lost."
        : `Claim failed: ${claim.error}`,
    );
    await refreshQueue();
    return;
  }
  startSession(claim.task);
}

function startSession(task: ReviewTask): void {
  image = new Image();
  image.onload = () => {
    session = new AnnotationSession(task, {
      width: image!.naturalWidth,
      height: image!.naturalHeight,
    });
    view = new ViewTransform();
    selected = null;
    annotateRoot.hidden = false;
    note(`Reviewing ${task.image_id} (${task.reason}); a = accept all, d = delete selected`);
    draw();
  };
  image.onerror = () => note(`Image for ${task.image_id} is unavailable`);
  image.src = api.imageUrl(task.image_id);
}

function draw(): void {
  const ctx = canvas.getContext("2d");
  if (!ctx || !session || !image) return;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  ctx.save();
  ctx.setTransform(view.scale, 0, 0, view.scale, view.offsetX, view.offsetY);
  ctx.drawImage(image, 0, 0);
  for (const box of session.surviving) {
    ctx.lineWidth = 2 / view.scale;
    ctx.strokeStyle = box === selected ? "#ff3366" : "#33cc66";
    ctx.strokeRect(box.xMin, box.yMin, box.xMax - box.xMin, box.yMax - box.yMin);
    ctx.font = `${12 / view.scale}px sans-serif`;
    ctx.fillStyle = ctx.strokeStyle;
    const label = `${CLASS_NAMES[box.classId] ?? box.classId}` +
      (box.confidence === null ? "" : ` ${(box.confidence * 100).toFixed(0)}%`);
    ctx.fillText(label, box.xMin, Math.max(box.yMin - 4 / view.scale, 10 / view.scale));
  }
  ctx.restore();
}

function boxAt(canvasX: number, canvasY: number): EditableBox | null {
  if (!session) return null;
  const p = view.toImage({ x: canvasX, y: canvasY });
  const hits = session.surviving.filter(
    (b) => p.x >= b.xMin && p.x <= b.xMax && p.y >= b.yMin && p.y <= b.yMax,
  );
  return hits.length ? hits[hits.length - 1]! : null;
}

canvas.addEventListener("mousedown", (event) => {
  if (!session) return;
  const rect = canvas.getBoundingClientRect();
  const x = event.clientX - rect.left;
  const y = event.clientY - rect.top;
  selected = boxAt(x, y);
  if (selected) {
    const corner = nearestCorner(selected, x, y);
    drag = corner
      ? { kind: "resize", corner, lastX: x, lastY: y }
      : { kind: "move", lastX: x, lastY: y };
  }
  draw();
});

function nearestCorner(box: EditableBox, canvasX: number, canvasY: number) {
  const grip = 8;
  const corners = {
    nw: view.toCanvas({ x: box.xMin, y: box.yMin }),
    ne: view.toCanvas({ x: box.xMax, y: box.yMin }),
    sw: view.toCanvas({ x: box.xMin, y: box.yMax }),
    se: view.toCanvas({ x: box.xMax, y: box.yMax }),
  } as const;
  for (const [name, p] of Object.entries(corners)) {
    if (Math.abs(p.x - canvasX) <= grip && Math.abs(p.y - canvasY) <= grip) {
      return name as keyof typeof corners;
    }
  }
  return null;
}

canvas.addEventListener("mousemove", (event) => {
  if (!session || !drag || !selected) return;
  const rect = canvas.getBoundingClientRect();
  const x = event.clientX - rect.left;
  const y = event.clientY - rect.top;
  const delta = view.deltaToImage(x - drag.lastX, y - drag.lastY);
  if (drag.kind === "move") {
    selected.moveBy(delta.x, delta.y, session.bounds);
  } else if (drag.corner) {
    selected.resizeCorner(drag.corner, delta.x, delta.y, session.bounds);
  }
  drag.lastX = x;
  drag.lastY = y;
  draw();
});

canvas.addEventListener("mouseup", () => {
  drag = null;
});

canvas.addEventListener("wheel", (event) => {
  event.preventDefault();
  const rect = canvas.getBoundingClientRect();
  view.zoomAt(
    { x: event.clientX - rect.left, y: event.clientY - rect.top },
    event.deltaY < 0 ? 1.2 : 1 / 1.2,
  );
  draw();
});

canvas.addEventListener("dblclick", (event) => {
  if (!session) return;
  const rect = canvas.getBoundingClientRect();
  const p = view.toImage({ x: event.clientX - rect.left, y: event.clientY - rect.top });
  const size = 40;
  selected = session.addBox([p.x - size, p.y - size, p.x + size, p.y + size], 0);
  draw();
});

document.addEventListener("keydown", (event) => {
  if (!session) return;
  if (event.key === "a") {
    void submit(session.acceptAll());
  } else if (event.key === "d" && selected) {
    selected.markDeleted();
    selected = null;
    draw();
  } else if (/^[0-9]$/.test(event.key) && selected) {
    const classId = Number(event.key);
    if (classId < CLASS_NAMES.length) {
      selected.relabel(classId);
      draw();
    }
  }
});

(document.getElementById("submit") as HTMLButtonElement).addEventListener("click", () => {
  if (session) void submit(session.toResolution());
});
(document.getElementById("delete-all") as HTMLButtonElement).addEventListener("click", () => {
  if (session) {
    session.deleteAll();
    selected = null;
    draw();
  }
});

async function submit(instances: ReturnType<AnnotationSession["toResolution"]>): Promise<void> {
  if (!session) return;
  const result = await api.submitResolution(session.task.task_id, instances);
  if (!result.ok) {
    if (result.invalidBoxes.length) {
      note(`Rejected: boxes ${result.invalidBoxes.join(", ")} are out of bounds; fix and resubmit.`);
      return; // edits stay on screen
    }
    note(`Submission conflict: ${result.error}; your edits are still here.`);
    return;
  }
  note(result.status === "resolved" ? "Saved. Moving on." : "Already saved earlier. Moving on.");
  session = null;
  annotateRoot.hidden = true;
  await refreshQueue();
  const next = await queue.claimNextPending();
  if (next) startSession(next);
}

void refreshQueue();
setInterval(() => {
  if (!session) void refreshQueue();
}, POLL_INTERVAL_MS);
