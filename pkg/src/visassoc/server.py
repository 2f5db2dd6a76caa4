"""HTTP surface of the annotation service.

JSON API under /api plus static hosting of the annotation UI bundle at /.
Task payloads on the wire never contain degree or caption-type labels;
submissions are validated and joined back to the hidden metadata
server-side.
"""

from pathlib import Path

from fastapi import FastAPI, HTTPException, Query
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .annotation import AnnotationError, TaskPool, UnknownTaskError


class Submission(BaseModel):
    annotator_id: str
    task_id: str
    rating: int | None = None
    ranking: list[int] | None = None


def create_app(pool: TaskPool, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="annotation service")

    @app.get("/api/session")
    def new_session() -> dict:
        return {"annotator_id": pool.new_annotator()}

    @app.get("/api/task")
    def next_task(
        type: str = Query(...), annotator_id: str = Query(...)
    ) -> dict:
        try:
            task = pool.next_task(annotator_id, type)
        except AnnotationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        if task is None:
            return {"done": True}
        return task.wire_payload()

    @app.post("/api/annotation")
    def submit(payload: Submission) -> dict:
        try:
            record = pool.submit(
                payload.annotator_id,
                payload.task_id,
                rating=payload.rating,
                ranking=payload.ranking,
            )
        except UnknownTaskError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except AnnotationError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return {"stored": True, "task_id": record.item_id}

    @app.get("/api/progress")
    def progress() -> dict:
        return pool.progress()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(
    pool: TaskPool,
    host: str = "127.0.0.1",
    port: int = 8000,
    static_dir: str | Path | None = None,
) -> None:
    import uvicorn

    uvicorn.run(create_app(pool, static_dir), host=host, port=port)
