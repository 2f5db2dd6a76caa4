"""Human-annotation task pools: sampling, assignment, validation, export.

Two task types mirror the human-evaluation protocol: grounding (rate one
caption 1..4 against its image) and ranking (order six captions, the
original plus one per degree, by increasing abstraction).  A fifth of each
pool is flagged for triple annotation so agreement can be computed.  Hidden
metadata (degree, true caption types) never leaves the server before
submission; it is joined back onto records server-side.
"""

import json
import math
import random
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .forge import CreativeCaption
from .ladder import DEGREES
from .metrics import GROUNDING_SCALE, RANKING_SLOTS, AnnotationRecord

OVERLAP_FRACTION = 0.2
GROUNDING_PER_DEGREE = 20
RANKING_POOL_SIZE = 100


class AnnotationError(Exception):
    """Invalid submission payload."""


class UnknownTaskError(AnnotationError):
    """Submission referenced a task id that does not exist."""


@dataclass(frozen=True)
class AnnotationTask:
    task_id: str
    type: str  # grounding | ranking
    image_uri: str
    caption: str | None = None  # grounding
    degree: int | None = None  # grounding, hidden
    captions: tuple[str, ...] | None = None  # ranking, presentation order
    true_types: tuple[str, ...] | None = None  # ranking, hidden
    required: int = 1

    def __post_init__(self):
        if self.type == "grounding":
            if not self.caption or self.degree is None:
                raise ValueError("grounding task needs a caption and degree")
        elif self.type == "ranking":
            if (
                self.captions is None
                or self.true_types is None
                or len(self.captions) != RANKING_SLOTS
                or len(self.true_types) != RANKING_SLOTS
            ):
                raise ValueError(
                    f"ranking task needs exactly {RANKING_SLOTS} captions and types"
                )
        else:
            raise ValueError(f"unknown task type {self.type!r}")

    def wire_payload(self) -> dict:
        """Client-facing payload; hidden metadata stays server-side."""
        payload: dict = {
            "task_id": self.task_id,
            "type": self.type,
            "image_uri": self.image_uri,
        }
        if self.type == "grounding":
            payload["caption"] = self.caption
        else:
            payload["captions"] = list(self.captions or ())
        return payload

    def to_json(self) -> dict:
        obj = {
            "task_id": self.task_id,
            "type": self.type,
            "image_uri": self.image_uri,
            "required": self.required,
        }
        if self.type == "grounding":
            obj["caption"] = self.caption
            obj["degree"] = self.degree
        else:
            obj["captions"] = list(self.captions or ())
            obj["true_types"] = list(self.true_types or ())
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "AnnotationTask":
        captions = obj.get("captions")
        true_types = obj.get("true_types")
        return cls(
            task_id=obj["task_id"],
            type=obj["type"],
            image_uri=obj["image_uri"],
            caption=obj.get("caption"),
            degree=obj.get("degree"),
            captions=tuple(captions) if captions is not None else None,
            true_types=tuple(true_types) if true_types is not None else None,
            required=obj.get("required", 1),
        )


def mark_overlap(
    tasks: Sequence[AnnotationTask], seed: int, fraction: float = OVERLAP_FRACTION
) -> list[AnnotationTask]:
    """Flag ceil(fraction * pool) tasks for triple annotation."""
    n_overlap = math.ceil(fraction * len(tasks))
    rng = random.Random(seed)
    chosen = set(rng.sample(range(len(tasks)), n_overlap))
    marked = []
    for i, task in enumerate(tasks):
        obj = task.to_json()
        obj["required"] = 3 if i in chosen else 1
        marked.append(AnnotationTask.from_json(obj))
    return marked


def build_grounding_pool(
    captions: Sequence[CreativeCaption],
    image_uris: Mapping[str, str],
    per_degree: int = GROUNDING_PER_DEGREE,
    seed: int = 0,
) -> list[AnnotationTask]:
    """Sample admitted captions balanced across the five degrees."""
    by_degree: dict[int, list[CreativeCaption]] = {int(d): [] for d in DEGREES}
    for caption in captions:
        if caption.admitted and int(caption.degree) in by_degree:
            by_degree[int(caption.degree)].append(caption)
    rng = random.Random(seed)
    tasks: list[AnnotationTask] = []
    for degree in sorted(by_degree):
        pool = by_degree[degree]
        if len(pool) < per_degree:
            raise AnnotationError(
                f"degree {degree} has only {len(pool)} admitted captions, "
                f"need {per_degree}"
            )
        for caption in rng.sample(pool, per_degree):
            tasks.append(
                AnnotationTask(
                    task_id=f"g{len(tasks):04d}",
                    type="grounding",
                    image_uri=image_uris.get(caption.image_id, caption.image_id),
                    caption=caption.text,
                    degree=degree,
                )
            )
    return mark_overlap(tasks, seed)


def build_ranking_pool(
    originals: Mapping[str, str],
    image_uris: Mapping[str, str],
    captions: Sequence[CreativeCaption],
    pool_size: int = RANKING_POOL_SIZE,
    seed: int = 0,
) -> list[AnnotationTask]:
    """One task per sampled image: its original caption plus one admitted
    creative caption per degree, presented in randomized order."""
    by_image: dict[str, dict[int, list[CreativeCaption]]] = {}
    for caption in captions:
        if caption.admitted:
            by_image.setdefault(caption.image_id, {}).setdefault(
                int(caption.degree), []
            ).append(caption)
    eligible = sorted(
        image_id
        for image_id, by_degree in by_image.items()
        if image_id in originals and all(int(d) in by_degree for d in DEGREES)
    )
    if len(eligible) < pool_size:
        raise AnnotationError(
            f"only {len(eligible)} images have captions at all degrees, "
            f"need {pool_size}"
        )
    rng = random.Random(seed)
    tasks: list[AnnotationTask] = []
    for image_id in rng.sample(eligible, pool_size):
        slots: list[tuple[str, str]] = [("original", originals[image_id])]
        for degree in DEGREES:
            choice = rng.choice(by_image[image_id][int(degree)])
            slots.append((f"d{int(degree)}", choice.text))
        rng.shuffle(slots)
        tasks.append(
            AnnotationTask(
                task_id=f"r{len(tasks):04d}",
                type="ranking",
                image_uri=image_uris.get(image_id, image_id),
                captions=tuple(text for _, text in slots),
                true_types=tuple(kind for kind, _ in slots),
            )
        )
    return mark_overlap(tasks, seed)


class TaskPool:
    """Thread-safe assignment and submission store.

    Assignment is atomic: a task's last open slot is granted to exactly one
    annotator, and the same annotator never receives the same task twice.  A
    re-request before submitting returns the same outstanding task.
    """

    def __init__(
        self,
        tasks: Iterable[AnnotationTask],
        annotations_path: str | Path | None = None,
    ):
        self._tasks: dict[str, AnnotationTask] = {}
        self._order: list[str] = []
        for task in tasks:
            if task.task_id in self._tasks:
                raise ValueError(f"duplicate task id {task.task_id!r}")
            self._tasks[task.task_id] = task
            self._order.append(task.task_id)
        self._done: dict[str, set[str]] = {tid: set() for tid in self._tasks}
        self._granted: dict[str, set[str]] = {tid: set() for tid in self._tasks}
        self._outstanding: dict[tuple[str, str], str] = {}
        self._records: list[AnnotationRecord] = []
        self._annotations_path = (
            Path(annotations_path) if annotations_path is not None else None
        )
        self._lock = threading.Lock()
        if self._annotations_path and self._annotations_path.exists():
            self._restore_submissions()

    def _restore_submissions(self) -> None:
        assert self._annotations_path is not None
        with open(self._annotations_path, "r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = AnnotationRecord.from_json(json.loads(line))
                self._records.append(record)
                if record.item_id in self._done:
                    self._done[record.item_id].add(record.annotator_id)

    @property
    def tasks(self) -> list[AnnotationTask]:
        return [self._tasks[tid] for tid in self._order]

    def new_annotator(self) -> str:
        return uuid.uuid4().hex

    def next_task(self, annotator_id: str, type: str) -> AnnotationTask | None:
        """An unassigned or under-annotated task of the given type, or None
        when the pool is exhausted for this annotator."""
        if type not in ("grounding", "ranking"):
            raise AnnotationError(f"unknown task type {type!r}")
        with self._lock:
            held = self._outstanding.get((annotator_id, type))
            if held is not None:
                return self._tasks[held]
            for task_id in self._order:
                task = self._tasks[task_id]
                if task.type != type:
                    continue
                if annotator_id in self._done[task_id]:
                    continue
                if annotator_id in self._granted[task_id]:
                    continue
                open_slots = task.required - len(self._done[task_id]) - len(
                    self._granted[task_id]
                )
                if open_slots <= 0:
                    continue
                self._granted[task_id].add(annotator_id)
                self._outstanding[(annotator_id, type)] = task_id
                return task
        return None

    def submit(
        self,
        annotator_id: str,
        task_id: str,
        rating: int | None = None,
        ranking: Sequence[int] | None = None,
    ) -> AnnotationRecord:
        with self._lock:
            task = self._tasks.get(task_id)
            if task is None:
                raise UnknownTaskError(f"unknown task {task_id!r}")
            if annotator_id in self._done[task_id]:
                raise AnnotationError(
                    f"annotator already submitted task {task_id!r}"
                )
            record = self._build_record(task, annotator_id, rating, ranking)
            self._done[task_id].add(annotator_id)
            self._granted[task_id].discard(annotator_id)
            if self._outstanding.get((annotator_id, task.type)) == task_id:
                del self._outstanding[(annotator_id, task.type)]
            self._records.append(record)
            if self._annotations_path is not None:
                stored = {**record.to_json(), "timestamp": time.time()}
                with open(self._annotations_path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(stored, ensure_ascii=False) + "\n")
            return record

    def _build_record(
        self,
        task: AnnotationTask,
        annotator_id: str,
        rating: int | None,
        ranking: Sequence[int] | None,
    ) -> AnnotationRecord:
        if task.type == "grounding":
            if ranking is not None or rating is None:
                raise AnnotationError("grounding tasks take exactly a rating")
            if not isinstance(rating, int) or rating not in GROUNDING_SCALE:
                raise AnnotationError(f"rating must be an integer in {GROUNDING_SCALE}")
            return AnnotationRecord(
                task="grounding",
                item_id=task.task_id,
                annotator_id=annotator_id,
                rating=rating,
                degree=task.degree,
            )
        if rating is not None or ranking is None:
            raise AnnotationError("ranking tasks take exactly a ranking")
        values = list(ranking)
        if sorted(values) != list(range(1, RANKING_SLOTS + 1)):
            raise AnnotationError(
                f"ranking must be a permutation of 1..{RANKING_SLOTS}"
            )
        return AnnotationRecord(
            task="ranking",
            item_id=task.task_id,
            annotator_id=annotator_id,
            ranking=tuple(values),
            caption_types=task.true_types,
        )

    def progress(self) -> dict:
        with self._lock:
            by_type: dict[str, dict[str, int]] = {}
            for task_id in self._order:
                task = self._tasks[task_id]
                entry = by_type.setdefault(
                    task.type, {"tasks": 0, "required_slots": 0, "completed_slots": 0}
                )
                entry["tasks"] += 1
                entry["required_slots"] += task.required
                entry["completed_slots"] += min(
                    len(self._done[task_id]), task.required
                )
            return by_type

    def records(self) -> list[AnnotationRecord]:
        with self._lock:
            return list(self._records)

    def export_annotations(self, path: str | Path) -> int:
        """Lossless JSONL export with hidden metadata resolved; the output is
        directly consumable by the metric aggregations."""
        records = self.records()
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")
        return len(records)

    def save_pool(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for task in self.tasks:
                fh.write(json.dumps(task.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load_pool(
        cls, path: str | Path, annotations_path: str | Path | None = None
    ) -> "TaskPool":
        tasks = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    tasks.append(AnnotationTask.from_json(json.loads(line)))
        return cls(tasks, annotations_path)
