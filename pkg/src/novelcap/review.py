"""HTTP service for human sign-off of synthetic pairs.

Serves the synthetic-pair manifest for review and records accept/reject
verdicts in an append-only JSONL log.  Effective status is replay of the log
with the latest entry winning; nothing is ever overwritten, so disputes can
be audited.  The training loop reads the log at round boundaries and drops
rejected records from the warm-up corpus.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal, Sequence

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import FileResponse, JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .synth import SyntheticPairRecord, Verdict, read_manifest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VerdictEntry:
    synth_id: str
    decision: Verdict
    reviewer: str
    timestamp: str

    def to_json(self) -> dict:
        return {
            "synth_id": self.synth_id,
            "decision": self.decision.value,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
        }


def load_verdict_log(path: str | Path) -> list[VerdictEntry]:
    entries: list[VerdictEntry] = []
    path = Path(path)
    if not path.exists():
        return entries
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            entries.append(VerdictEntry(
                synth_id=rec["synth_id"],
                decision=Verdict(rec["decision"]),
                reviewer=rec.get("reviewer", ""),
                timestamp=rec.get("timestamp", ""),
            ))
    return entries


def effective_statuses(entries: Sequence[VerdictEntry]) -> dict[str, Verdict]:
    """Replay the log; the latest verdict per synth_id wins."""
    statuses: dict[str, Verdict] = {}
    for entry in entries:
        statuses[entry.synth_id] = entry.decision
    return statuses


def apply_verdicts(records: Sequence[SyntheticPairRecord],
                   log_path: str | Path) -> list[SyntheticPairRecord]:
    """Return records with verdicts replayed from the log (pending if absent)."""
    statuses = effective_statuses(load_verdict_log(log_path))
    return [replace(r, verdict=statuses.get(r.synth_id, Verdict.PENDING))
            for r in records]


class ReviewStore:
    """Manifest plus verdict log with serialized appends."""

    def __init__(self, manifest_path: str | Path, verdict_log_path: str | Path):
        self.records = {r.synth_id: r for r in read_manifest(manifest_path)}
        self.order = sorted(self.records)
        self.verdict_log_path = Path(verdict_log_path)
        self._lock = threading.Lock()
        self._entries = load_verdict_log(self.verdict_log_path)

    def status_of(self, synth_id: str) -> Verdict:
        with self._lock:
            statuses = effective_statuses(self._entries)
        return statuses.get(synth_id, Verdict.PENDING)

    def snapshot(self) -> dict[str, Verdict]:
        with self._lock:
            statuses = effective_statuses(self._entries)
        return {sid: statuses.get(sid, Verdict.PENDING) for sid in self.order}

    def append(self, synth_id: str, decision: Verdict, reviewer: str) -> VerdictEntry:
        entry = VerdictEntry(
            synth_id=synth_id,
            decision=decision,
            reviewer=reviewer,
            timestamp=datetime.now(timezone.utc).isoformat(),
        )
        with self._lock:
            self._entries.append(entry)
            self.verdict_log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.verdict_log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
        return entry

    def page(self, status: str | None, limit: int,
             cursor: str | None) -> tuple[list[SyntheticPairRecord], str | None]:
        statuses = self.snapshot()
        ids = self.order
        if cursor is not None:
            ids = [sid for sid in ids if sid > cursor]
        if status is not None:
            ids = [sid for sid in ids if statuses[sid].value == status]
        page_ids = ids[:limit]
        next_cursor = page_ids[-1] if len(ids) > limit else None
        return ([replace(self.records[sid], verdict=statuses[sid]) for sid in page_ids],
                next_cursor)


class VerdictBody(BaseModel):
    # "pending" is an explicit reset entry: it undoes a prior verdict while
    # keeping the full history in the log.
    decision: Literal["accepted", "rejected", "pending"]
    reviewer: str = ""


def _record_payload(record: SyntheticPairRecord) -> dict:
    payload = record.to_json()
    payload["status"] = record.verdict.value
    payload["image_url"] = f"/api/images/{record.synth_id}"
    payload["target_image_url"] = f"/api/images/{record.synth_id}?variant=target"
    payload["source_image_urls"] = [
        f"/api/images/{record.synth_id}?variant=source&index={i}"
        for i in range(len(record.replacements))
    ]
    return payload


def create_app(manifest_path: str | Path, verdict_log_path: str | Path,
               frontend_dir: str | Path | None = None) -> FastAPI:
    store = ReviewStore(manifest_path, verdict_log_path)
    app = FastAPI(title="novelcap review")
    app.state.store = store

    @app.exception_handler(RequestValidationError)
    async def bad_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors())})

    @app.get("/api/pairs")
    def list_pairs(status: str | None = None, limit: int = 50,
                   cursor: str | None = None):
        if limit < 1 or limit > 500:
            return JSONResponse(status_code=400,
                                content={"error": "limit must be in [1, 500]"})
        if status is not None and status not in {v.value for v in Verdict}:
            return JSONResponse(status_code=400,
                                content={"error": f"unknown status {status!r}"})
        records, next_cursor = store.page(status, limit, cursor)
        statuses = store.snapshot()
        counts = {v.value: 0 for v in Verdict}
        for s in statuses.values():
            counts[s.value] += 1
        return {
            "records": [_record_payload(r) for r in records],
            "next_cursor": next_cursor,
            "counts": counts,
        }

    @app.post("/api/pairs/{synth_id}/verdict", status_code=204)
    def post_verdict(synth_id: str, body: VerdictBody):
        if synth_id not in store.records:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown synth_id {synth_id!r}"})
        store.append(synth_id, Verdict(body.decision), body.reviewer)
        return Response(status_code=204)

    @app.api_route("/api/images/{synth_id}", methods=["GET", "HEAD"])
    def get_image(synth_id: str, variant: str = "synthetic", index: int = 0):
        record = store.records.get(synth_id)
        if record is None:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown synth_id {synth_id!r}"})
        if variant == "synthetic":
            path = Path(record.image_path)
        elif variant == "target":
            path = Path(record.target_image_path)
        elif variant == "source":
            if index < 0 or index >= len(record.replacements):
                return JSONResponse(status_code=400,
                                    content={"error": "source index out of range"})
            path = Path(record.replacements[index]["novel_image_path"])
        else:
            return JSONResponse(status_code=400,
                                content={"error": f"unknown variant {variant!r}"})
        if not path.exists():
            return JSONResponse(status_code=404,
                                content={"error": f"image file missing: {path.name}"})
        media_type = "image/png" if path.suffix.lower() == ".png" else "image/jpeg"
        return FileResponse(
            path, media_type=media_type,
            headers={"Cache-Control": "public, max-age=31536000, immutable",
                     "ETag": f'"{synth_id}-{variant}-{index}"'})

    if frontend_dir is not None and Path(frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(frontend_dir), html=True),
                  name="frontend")
    return app
