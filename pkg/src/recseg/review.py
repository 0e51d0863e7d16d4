"""Review sessions: serving candidates, recording verdicts, replaying logs.

The decision log is the single source of truth. Every verdict is appended
(and flushed) to ``reviews/r{N}/decisions.log`` before it is acknowledged,
so a service restart mid-session loses nothing: session state is always the
session file plus a replay of the log. Decisions never carry mask edits;
masks on disk are immutable throughout a session.

One recursion has at most one open session at a time. Closing a session
writes a summary (accepted / rejected / undecided) that the recursion
controller consumes; undecided candidates simply stay pending and may be
re-proposed later.
"""

from __future__ import annotations

import json
import os
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .weaklabel import load_candidate_index

VERDICTS = ("accept", "reject")


class ReviewError(Exception):
    """Base class for review-session failures."""


class UnknownSessionError(ReviewError):
    pass


class SessionClosedError(ReviewError):
    pass


class ConcurrentSessionError(ReviewError):
    pass


class MissingCandidatesError(ReviewError):
    pass


class UnknownSampleError(ReviewError):
    pass


class DecisionConflictError(ReviewError):
    """Same sample decided twice with different verdicts."""


@dataclass(frozen=True)
class ReviewDecision:
    sample_id: str
    verdict: str
    reviewer: str
    timestamp: str = ""
    note: str | None = None

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {self.verdict!r}")
        if not self.timestamp:
            object.__setattr__(self, "timestamp", datetime.now(timezone.utc).isoformat())

    def to_json(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "verdict": self.verdict,
            "reviewer": self.reviewer,
            "timestamp": self.timestamp,
            "note": self.note,
        }


@dataclass
class ReviewSession:
    session_id: str
    recursion_index: int
    queue: list[str]
    status: str = "open"
    decided: dict[str, ReviewDecision] = field(default_factory=dict)


def replay_decisions(log_path) -> dict[str, ReviewDecision]:
    """Reconstruct the decided map for a recursion from its append-only log."""
    log_path = Path(log_path)
    decided: dict[str, ReviewDecision] = {}
    if not log_path.exists():
        return decided
    with open(log_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            decided[obj["sample_id"]] = ReviewDecision(
                sample_id=obj["sample_id"],
                verdict=obj["verdict"],
                reviewer=obj.get("reviewer", ""),
                timestamp=obj.get("timestamp", ""),
                note=obj.get("note"),
            )
    return decided


class ReviewStore:
    """Session lifecycle over one experiment directory."""

    def __init__(self, experiment_dir):
        self.experiment_dir = Path(experiment_dir)

    # -- paths ---------------------------------------------------------
    def review_dir(self, recursion_index: int) -> Path:
        return self.experiment_dir / "reviews" / f"r{recursion_index}"

    def candidates_dir(self, recursion_index: int) -> Path:
        return self.experiment_dir / f"r{recursion_index}" / "candidates"

    def log_path(self, recursion_index: int) -> Path:
        return self.review_dir(recursion_index) / "decisions.log"

    def session_path(self, recursion_index: int) -> Path:
        return self.review_dir(recursion_index) / "session.json"

    def summary_path(self, recursion_index: int) -> Path:
        return self.review_dir(recursion_index) / "summary.json"

    # -- session persistence --------------------------------------------
    def _write_session(self, session: ReviewSession) -> None:
        path = self.session_path(session.recursion_index)
        payload = {
            "session_id": session.session_id,
            "recursion_index": session.recursion_index,
            "queue": session.queue,
            "status": session.status,
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        os.replace(tmp, path)

    def get_session(self, session_id: str) -> ReviewSession:
        for session_file in sorted(self.experiment_dir.glob("reviews/r*/session.json")):
            obj = json.loads(session_file.read_text(encoding="utf-8"))
            if obj["session_id"] == session_id:
                session = ReviewSession(
                    session_id=obj["session_id"],
                    recursion_index=obj["recursion_index"],
                    queue=list(obj["queue"]),
                    status=obj["status"],
                )
                decided = replay_decisions(self.log_path(session.recursion_index))
                session.decided = {k: v for k, v in decided.items() if k in set(session.queue)}
                return session
        raise UnknownSessionError(f"no session {session_id!r} in {self.experiment_dir}")

    # -- operations ------------------------------------------------------
    def open_session(self, recursion_index: int) -> ReviewSession:
        """Open a session over all not-yet-decided candidates of a recursion."""
        cand_dir = self.candidates_dir(recursion_index)
        try:
            index = load_candidate_index(cand_dir)
        except FileNotFoundError as exc:
            raise MissingCandidatesError(str(exc)) from exc
        session_file = self.session_path(recursion_index)
        if session_file.exists():
            existing = json.loads(session_file.read_text(encoding="utf-8"))
            if existing.get("status") == "open":
                raise ConcurrentSessionError(
                    f"recursion {recursion_index} already has open session "
                    f"{existing['session_id']!r}"
                )
        decided = replay_decisions(self.log_path(recursion_index))
        queue = [entry["sample_id"] for entry in index if entry["sample_id"] not in decided]
        session = ReviewSession(
            session_id=uuid.uuid4().hex[:12],
            recursion_index=recursion_index,
            queue=queue,
        )
        self.review_dir(recursion_index).mkdir(parents=True, exist_ok=True)
        self._write_session(session)
        return session

    def fetch_next(self, session_id: str) -> tuple[dict | None, int, int]:
        """(candidate meta, position, total) or (None, total, total) when done.

        Repeated calls without an intervening decision return the same
        candidate.
        """
        session = self.get_session(session_id)
        if session.status != "open":
            raise SessionClosedError(f"session {session_id!r} is closed")
        index = {e["sample_id"]: e for e in load_candidate_index(
            self.candidates_dir(session.recursion_index)
        )}
        total = len(session.queue)
        for pos, sample_id in enumerate(session.queue):
            if sample_id not in session.decided:
                return index[sample_id], pos, total
        return None, total, total

    def submit_decision(self, session_id: str, decision: ReviewDecision) -> dict:
        """Persist one verdict; idempotent on exact duplicates."""
        session = self.get_session(session_id)
        if session.status != "open":
            raise SessionClosedError(f"session {session_id!r} is closed")
        if decision.sample_id not in set(session.queue):
            raise UnknownSampleError(
                f"sample {decision.sample_id!r} is not in the session queue"
            )
        existing = session.decided.get(decision.sample_id)
        if existing is not None:
            if existing.verdict == decision.verdict:
                return {"acknowledged": True, "duplicate": True}
            raise DecisionConflictError(
                f"sample {decision.sample_id!r} already decided "
                f"{existing.verdict!r}, got {decision.verdict!r}"
            )
        log = self.log_path(session.recursion_index)
        log.parent.mkdir(parents=True, exist_ok=True)
        record = dict(decision.to_json(), session_id=session_id)
        with open(log, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        return {"acknowledged": True, "duplicate": False}

    def close_session(self, session_id: str) -> dict:
        """Close and summarize; undecided ids stay pending for later rounds."""
        session = self.get_session(session_id)
        if session.status != "open":
            raise SessionClosedError(f"session {session_id!r} already closed")
        accepted = [s for s in session.queue if session.decided.get(s, None) is not None
                    and session.decided[s].verdict == "accept"]
        rejected = [s for s in session.queue if session.decided.get(s, None) is not None
                    and session.decided[s].verdict == "reject"]
        undecided = [s for s in session.queue if s not in session.decided]
        summary = {
            "session_id": session_id,
            "recursion_index": session.recursion_index,
            "accepted": accepted,
            "rejected": rejected,
            "undecided": undecided,
        }
        session.status = "closed"
        self._write_session(session)
        tmp = self.summary_path(session.recursion_index).with_suffix(".tmp")
        tmp.write_text(json.dumps(summary, indent=2), encoding="utf-8")
        os.replace(tmp, self.summary_path(session.recursion_index))
        return summary

    def summary(self, session_id: str) -> dict:
        """Current tallies for an open session, or the final summary."""
        session = self.get_session(session_id)
        decided = session.decided
        return {
            "session_id": session_id,
            "recursion_index": session.recursion_index,
            "status": session.status,
            "total": len(session.queue),
            "accepted": [s for s in session.queue if s in decided and decided[s].verdict == "accept"],
            "rejected": [s for s in session.queue if s in decided and decided[s].verdict == "reject"],
            "undecided": [s for s in session.queue if s not in decided],
        }
