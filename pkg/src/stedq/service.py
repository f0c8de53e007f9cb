"""Session-oriented judging service with an append-only journal.

Layout of a service data directory:

    datasets/<dataset_id>/items.csv     item_id,image_path,target,prediction
    datasets/<dataset_id>/images/*.pgm  referenced by items.csv
    journals/<session_id>.jsonl         one canonical JSON record per line

Every accepted mutation is appended and fsynced before it is acknowledged;
replaying a journal reconstructs the exact session state.  Results delegate
to the offline study mathematics, so the HTTP path and a direct computation
over the same journals agree bit for bit.
"""

import csv
import io
import json
import os
import uuid
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import study
from .data import format_score, read_pgm
from .errors import (BadChoiceError, DataError, DuplicateJudgmentError,
                     OutOfOrderError, SessionClosedError, StudyError,
                     UnknownDatasetError, UnknownItemError, UnknownSessionError)
from .study import Judgment, StudyItem, binned_report, resolve_choice

RAW_CHOICES = ("left", "right", "equivalent", "discard")


@dataclass
class DatasetItem:
    item_id: str
    image_path: Path
    target: float
    prediction: float


@dataclass
class Session:
    session_id: str
    tester_id: str
    dataset_id: str
    seed: int
    order: list[str]
    blind: dict[str, str]
    judgments: list[Judgment] = field(default_factory=list)

    @property
    def cursor(self) -> int:
        return len(self.judgments)

    @property
    def complete(self) -> bool:
        return self.cursor >= len(self.order)

    @property
    def status(self) -> str:
        return "complete" if self.complete else "open"

    def current_item_id(self) -> Optional[str]:
        return None if self.complete else self.order[self.cursor]


# ---------------------------------------------------------------------------
# study dataset files
# ---------------------------------------------------------------------------

def save_study_dataset(dataset_dir, items: list[DatasetItem]) -> None:
    dataset_dir = Path(dataset_dir)
    dataset_dir.mkdir(parents=True, exist_ok=True)
    with open(dataset_dir / "items.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("item_id,image_path,target,prediction\n")
        for it in items:
            rel = os.path.relpath(it.image_path, dataset_dir)
            fh.write(f"{it.item_id},{rel},{format_score(it.target)},"
                     f"{format_score(it.prediction)}\n")


def load_study_dataset(dataset_dir) -> list[DatasetItem]:
    dataset_dir = Path(dataset_dir)
    path = dataset_dir / "items.csv"
    if not path.exists():
        raise DataError(f"study dataset manifest not found: {path}")
    items = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["item_id", "image_path", "target", "prediction"]:
            raise DataError(f"{path}: bad header {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise DataError(f"{path}: row {lineno}: expected 4 fields")
            item_id, rel, target, prediction = row
            items.append(DatasetItem(item_id, dataset_dir / rel,
                                     float(target), float(prediction)))
    return items


# ---------------------------------------------------------------------------
# the store
# ---------------------------------------------------------------------------

class SessionStore:
    """All service state: datasets, sessions, and their journals."""

    def __init__(self, data_dir):
        self.data_dir = Path(data_dir)
        self.journal_dir = self.data_dir / "journals"
        self.journal_dir.mkdir(parents=True, exist_ok=True)
        self.datasets: dict[str, dict[str, DatasetItem]] = {}
        self.item_index: dict[str, DatasetItem] = {}
        self.sessions: dict[str, Session] = {}
        self._load_datasets()
        self._replay_journals()

    def _load_datasets(self) -> None:
        root = self.data_dir / "datasets"
        if not root.exists():
            return
        for entry in sorted(root.iterdir()):
            if not (entry / "items.csv").exists():
                continue
            items = load_study_dataset(entry)
            table = {}
            for it in items:
                if it.item_id in self.item_index:
                    raise DataError(f"item id {it.item_id!r} appears in more than one dataset")
                table[it.item_id] = it
                self.item_index[it.item_id] = it
            self.datasets[entry.name] = table

    def _journal_path(self, session_id: str) -> Path:
        return self.journal_dir / f"{session_id}.jsonl"

    def _append(self, session_id: str, record: dict) -> None:
        line = json.dumps(record, sort_keys=True, separators=(",", ":"))
        with open(self._journal_path(session_id), "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay_journals(self) -> None:
        for path in sorted(self.journal_dir.glob("*.jsonl")):
            session = None
            with open(path, "r", encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    record = json.loads(line)
                    if record["type"] == "session":
                        session = Session(
                            session_id=record["session_id"],
                            tester_id=record["tester_id"],
                            dataset_id=record["dataset_id"],
                            seed=record["seed"],
                            order=list(record["order"]),
                            blind=dict(record["blind"]),
                        )
                    elif record["type"] == "judgment" and session is not None:
                        session.judgments.append(Judgment(
                            record["item_id"], record["raw"], record["resolved"]))
            if session is not None:
                self.sessions[session.session_id] = session

    # -- protocol operations -------------------------------------------------

    def create_session(self, tester_id: str, dataset_id: str, seed: int) -> Session:
        if dataset_id not in self.datasets:
            raise UnknownDatasetError(f"unknown dataset {dataset_id!r}")
        rng = np.random.default_rng(seed)
        item_ids = list(self.datasets[dataset_id])
        order = [item_ids[i] for i in rng.permutation(len(item_ids))]
        blind = {item_id: ("left" if rng.integers(2) == 0 else "right")
                 for item_id in order}
        session = Session(
            session_id=uuid.uuid4().hex[:12],
            tester_id=tester_id,
            dataset_id=dataset_id,
            seed=int(seed),
            order=order,
            blind=blind,
        )
        self._append(session.session_id, {
            "type": "session",
            "session_id": session.session_id,
            "tester_id": tester_id,
            "dataset_id": dataset_id,
            "seed": int(seed),
            "order": order,
            "blind": blind,
        })
        self.sessions[session.session_id] = session
        return session

    def get_session(self, session_id: str) -> Session:
        if session_id not in self.sessions:
            raise UnknownSessionError(f"unknown session {session_id!r}")
        return self.sessions[session_id]

    def study_item(self, session: Session, item_id: str) -> StudyItem:
        entry = self.datasets[session.dataset_id][item_id]
        return StudyItem(item_id=item_id, image_ref=str(entry.image_path),
                         target=entry.target, prediction=entry.prediction,
                         blind_order=session.blind[item_id])

    def next_item(self, session_id: str) -> dict:
        """The current unjudged item (idempotent), or a done marker."""
        session = self.get_session(session_id)
        total = len(session.order)
        if session.complete:
            return {"done": True, "judged": total, "total": total}
        item = self.study_item(session, session.current_item_id())
        return {
            "done": False,
            "item_id": item.item_id,
            "image_url": f"/items/{item.item_id}/image",
            "left_score": item.left_score,
            "right_score": item.right_score,
            "judged": session.cursor,
            "total": total,
        }

    def submit_judgment(self, session_id: str, item_id: str, raw: str) -> dict:
        session = self.get_session(session_id)
        if raw not in RAW_CHOICES:
            raise BadChoiceError(f"choice must be one of {RAW_CHOICES}, got {raw!r}")
        if session.complete:
            raise SessionClosedError(f"session {session_id!r} is complete")
        if item_id not in session.blind:
            raise UnknownItemError(f"item {item_id!r} is not part of this session")
        judged_ids = {j.item_id for j in session.judgments}
        if item_id in judged_ids:
            raise DuplicateJudgmentError(f"item {item_id!r} was already judged")
        if item_id != session.current_item_id():
            raise OutOfOrderError(
                f"item {item_id!r} is not the session's current item "
                f"({session.current_item_id()!r})")
        judgment = Judgment(item_id, raw, resolve_choice(raw, session.blind[item_id]))
        self._append(session_id, {
            "type": "judgment",
            "seq": session.cursor,
            "item_id": item_id,
            "raw": judgment.raw,
            "resolved": judgment.resolved,
        })
        session.judgments.append(judgment)
        return {"accepted": True, "judged": session.cursor, "total": len(session.order)}

    def completed_sessions(self, dataset_id: str) -> list[Session]:
        return [s for s in self.sessions.values()
                if s.dataset_id == dataset_id and s.complete and s.order]

    def judgments_by_tester(self, dataset_id: str) -> dict[str, list[Judgment]]:
        grouped: dict[str, list[Judgment]] = {}
        for session in self.completed_sessions(dataset_id):
            grouped.setdefault(session.tester_id, []).extend(session.judgments)
        return grouped

    def results(self, dataset_id: str) -> study.BinnedReport:
        """Binned report over completed sessions; identical to the offline
        computation on the same journals."""
        if dataset_id not in self.datasets:
            raise UnknownDatasetError(f"unknown dataset {dataset_id!r}")
        grouped = self.judgments_by_tester(dataset_id)
        if not grouped:
            raise StudyError(f"no completed sessions for dataset {dataset_id!r}")
        targets = {item_id: entry.target
                   for item_id, entry in self.datasets[dataset_id].items()}
        return binned_report(grouped, targets)

    def item_image_png(self, item_id: str) -> bytes:
        if item_id not in self.item_index:
            raise UnknownItemError(f"unknown item {item_id!r}")
        from PIL import Image as PILImage
        intensities = read_pgm(self.item_index[item_id].image_path)
        as8 = np.round(intensities * 255).astype(np.uint8)
        img = PILImage.fromarray(as8, mode="L")
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        return buf.getvalue()


# ---------------------------------------------------------------------------
# HTTP layer
# ---------------------------------------------------------------------------

def report_to_json(report: study.BinnedReport) -> dict:
    bins = []
    for i in range(study.N_BINS):
        c, d = report.confusion[i], report.domination[i]
        bins.append({
            "bin": study.bin_label(i),
            "mean_confusion": c.mean,
            "std_confusion": c.std,
            "n_testers_confusion": c.n_testers,
            "mean_domination": d.mean,
            "std_domination": d.std,
            "n_testers_domination": d.n_testers,
        })
    return {"bins": bins}


from pydantic import BaseModel


class SessionRequest(BaseModel):
    tester_id: str
    dataset_id: str
    seed: int = 0


class JudgmentRequest(BaseModel):
    item_id: str
    choice: str


def create_app(store: SessionStore, ui_dir=None):
    from fastapi import FastAPI, Request, Response
    from fastapi.responses import JSONResponse

    app = FastAPI(title="stedq judging service")

    status_codes = {
        "unknown_dataset": 404,
        "unknown_session": 404,
        "unknown_item": 404,
        "session_closed": 409,
        "out_of_order": 409,
        "duplicate": 409,
        "bad_choice": 400,
    }

    @app.exception_handler(Exception)
    async def handle_errors(request: Request, exc: Exception):
        code = getattr(exc, "code", None)
        if code in status_codes:
            return JSONResponse(status_code=status_codes[code],
                                content={"error": {"code": code, "message": str(exc)}})
        if isinstance(exc, (StudyError, DataError)):
            return JSONResponse(status_code=409,
                                content={"error": {"code": "study_error", "message": str(exc)}})
        raise exc

    @app.post("/sessions")
    def create_session(body: SessionRequest):
        session = store.create_session(body.tester_id, body.dataset_id, body.seed)
        return {
            "session_id": session.session_id,
            "tester_id": session.tester_id,
            "dataset_id": session.dataset_id,
            "total": len(session.order),
            "status": session.status,
        }

    @app.get("/sessions/{session_id}/next")
    def next_item(session_id: str):
        return store.next_item(session_id)

    @app.post("/sessions/{session_id}/judgments")
    def submit_judgment(session_id: str, body: JudgmentRequest):
        return store.submit_judgment(session_id, body.item_id, body.choice)

    @app.get("/datasets/{dataset_id}/results")
    def results(dataset_id: str):
        return report_to_json(store.results(dataset_id))

    @app.get("/items/{item_id}/image")
    def item_image(item_id: str):
        return Response(content=store.item_image_png(item_id), media_type="image/png")

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
