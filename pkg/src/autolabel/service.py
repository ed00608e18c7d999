"""HTTP boundary for the review queue, loop control, and reports.

Single-node service over the file-backed store and queue. JSON field names
below are frozen by the contract tests; the review UI consumes exactly
these endpoints.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException, Query, Request, Response
from fastapi.responses import FileResponse, JSONResponse, PlainTextResponse

from autolabel.dataset import DatasetStore, Instance
from autolabel.errors import ValidationError
from autolabel.geometry import BoundingBox, Detection
from autolabel.review import AlreadyResolvedError, ConflictError, ReviewQueue, ReviewTask
from autolabel.selfloop import AuditTrail, IterationRecord, LoopConfig, run_loop

API_PREFIX = "/api/v1"


@dataclass
class ServiceContext:
    store: DatasetStore
    queue: ReviewQueue
    workdir: Path
    loop_config: LoopConfig | None = None
    loop_state: dict = field(default_factory=lambda: {"state": "idle", "iteration": 0})
    lock: threading.Lock = field(default_factory=threading.Lock)
    loop_thread: threading.Thread | None = None
    run_loop_async: bool = True

    @property
    def trail(self) -> AuditTrail:
        return AuditTrail(Path(self.workdir) / "iterations.jsonl")


def task_to_json(task: ReviewTask) -> dict:
    return {
        "task_id": task.task_id,
        "image_id": task.image_id,
        "image_url": f"{API_PREFIX}/images/{task.image_id}",
        "reason": task.reason,
        "state": task.state,
        "score": task.score,
        "iteration": task.iteration,
        "predictions": [
            {
                "box": list(det.box.as_tuple()),
                "class_id": det.class_id,
                "confidence": det.confidence,
            }
            for det in task.predictions
        ],
        "resolution": None
        if task.resolution is None
        else [
            {"box": list(inst.box.as_tuple()), "class_id": inst.class_id}
            for inst in task.resolution
        ],
    }


def _parse_resolution(
    payload: dict, record, iteration: int, n_classes: int
) -> tuple[list[Instance], list[int]]:
    """Build corrected instances; returns (instances, offending box indices)."""
    body = payload.get("instances")
    if body is None or not isinstance(body, list):
        raise ValidationError('body must be {"instances": [...]}')
    instances: list[Instance] = []
    offending: list[int] = []
    for index, item in enumerate(body):
        box = item.get("box")
        class_id = item.get("class_id")
        if (
            not isinstance(box, list)
            or len(box) != 4
            or not isinstance(class_id, int)
        ):
            raise ValidationError(f"instance {index} must carry box [x0,y0,x1,y1] and class_id")
        try:
            bounding = BoundingBox(*[float(v) for v in box])
        except ValidationError:
            offending.append(index)
            continue
        if (
            bounding.x_min < 0
            or bounding.y_min < 0
            or bounding.x_max > record.width
            or bounding.y_max > record.height
        ):
            offending.append(index)
            continue
        if not 0 <= class_id < n_classes:
            raise ValidationError(f"instance {index} has unknown class_id {class_id}")
        instances.append(
            Instance(bounding, class_id, provenance="corrected", source_iteration=iteration)
        )
    return instances, offending


def create_app(ctx: ServiceContext) -> FastAPI:
    app = FastAPI(title="autolabel service")

    @app.exception_handler(ValidationError)
    async def validation_handler(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get(API_PREFIX + "/tasks")
    def list_tasks(
        state: str | None = None,
        reason: str | None = None,
        iteration: int | None = None,
        page: int = Query(default=1, ge=1),
        page_size: int = Query(default=20, ge=1, le=500),
    ):
        tasks, total = ctx.queue.list_tasks(
            state=state, reason=reason, iteration=iteration, page=page, page_size=page_size
        )
        return {
            "tasks": [task_to_json(t) for t in tasks],
            "page": page,
            "page_size": page_size,
            "total": total,
            "total_pages": (total + page_size - 1) // page_size,
        }

    @app.get(API_PREFIX + "/tasks/{task_id}")
    def get_task(task_id: str):
        try:
            return task_to_json(ctx.queue.get(task_id))
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post(API_PREFIX + "/tasks/{task_id}/claim")
    def claim_task(task_id: str):
        try:
            ctx.queue.get(task_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        try:
            return task_to_json(ctx.queue.claim(task_id))
        except ConflictError as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})

    @app.post(API_PREFIX + "/tasks/{task_id}/resolution")
    async def submit_resolution(task_id: str, request: Request):
        payload = await request.json()
        try:
            task = ctx.queue.get(task_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if task.state == "resolved":
            return {"status": "already_resolved", "task_id": task_id}
        record = ctx.store.get(task.image_id)
        instances, offending = _parse_resolution(
            payload, record, task.iteration, len(ctx.store.classes)
        )
        if offending:
            return JSONResponse(
                status_code=400,
                content={
                    "error": "boxes outside image bounds or degenerate",
                    "invalid_boxes": offending,
                },
            )
        try:
            with ctx.store.transaction():
                ctx.store.apply_correction(task.image_id, instances, task.iteration)
                ctx.queue.resolve(task_id, tuple(instances))
        except AlreadyResolvedError:
            return {"status": "already_resolved", "task_id": task_id}
        except ConflictError as exc:
            return JSONResponse(status_code=409, content={"error": str(exc)})
        return {
            "status": "resolved",
            "task_id": task_id,
            "image_id": task.image_id,
            "instances_recorded": len(instances),
        }

    @app.post(API_PREFIX + "/loop/start")
    def start_loop(payload: dict | None = None):
        if ctx.loop_config is None:
            raise HTTPException(status_code=400, detail="service started without a loop config")
        with ctx.lock:
            if ctx.loop_state["state"] == "running":
                return JSONResponse(
                    status_code=409, content={"error": "a loop is already running"}
                )
            config = ctx.loop_config
            for key in (
                "max_iterations",
                "pseudo_confidence_threshold",
                "min_new_pseudo_instances",
            ):
                if payload and key in payload:
                    config = replace(config, **{key: payload[key]})
            ctx.loop_state = {"state": "running", "iteration": 1, "iterations_completed": 0}

        def _on_iteration(record: IterationRecord):
            with ctx.lock:
                ctx.loop_state["iterations_completed"] = record.iteration
                ctx.loop_state["iteration"] = record.iteration + 1

        def _worker():
            try:
                run_loop(ctx.store, config, ctx.queue, ctx.workdir, on_iteration=_on_iteration)
                with ctx.lock:
                    done = ctx.loop_state.get("iterations_completed", 0)
                    ctx.loop_state = {
                        "state": "done",
                        "iteration": done,
                        "iterations_completed": done,
                    }
            except Exception as exc:  # surfaced via status, not lost in the thread
                with ctx.lock:
                    ctx.loop_state = {
                        "state": "failed",
                        "iteration": ctx.loop_state.get("iteration", 0),
                        "iterations_completed": ctx.loop_state.get("iterations_completed", 0),
                        "error": str(exc),
                    }

        if ctx.run_loop_async:
            ctx.loop_thread = threading.Thread(target=_worker, daemon=True)
            ctx.loop_thread.start()
        else:
            _worker()
        return JSONResponse(status_code=202, content={"status": "started"})

    @app.get(API_PREFIX + "/loop/status")
    def loop_status():
        with ctx.lock:
            return dict(ctx.loop_state)

    @app.get(API_PREFIX + "/reports/iterations/{iteration}")
    def iteration_report(iteration: int):
        line = ctx.trail.raw_line(iteration)
        if line is None:
            raise HTTPException(status_code=404, detail=f"no record for iteration {iteration}")
        return Response(content=line, media_type="application/json")

    @app.get(API_PREFIX + "/reports/metrics/{iteration}")
    def metrics_report(iteration: int):
        line = ctx.trail.raw_line(iteration)
        if line is None:
            raise HTTPException(status_code=404, detail=f"no record for iteration {iteration}")
        record = IterationRecord.from_json(line)
        if not record.metrics_kv:
            raise HTTPException(
                status_code=404, detail=f"iteration {iteration} recorded no metrics"
            )
        return PlainTextResponse(record.metrics_kv)

    @app.get(API_PREFIX + "/images/{image_id}")
    def image_bytes(image_id: str):
        try:
            record = ctx.store.get(image_id)
        except ValidationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if not record.path or not Path(record.path).exists():
            raise HTTPException(status_code=404, detail=f"no pixel file for {image_id}")
        return FileResponse(record.path)

    return app
