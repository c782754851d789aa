"""Expert curation of coref/retain lists: a small store with optimistic
locking plus an HTTP facade for the browser UI.

Edits name a record, a path like ``corefs.train[3]``, and the revision they
were based on; a stale revision is rejected so concurrent experts cannot
silently overwrite each other. Every accepted edit is persisted atomically.
Records can only reach the approved state once validation is clean.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field, replace

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware

from .coref_gen import (
    CandidatePools,
    ChatClient,
    ChatMessage,
    GenerationSession,
    build_generation_prompt,
    refine,
    render_generation_response,
)
from .dataset import (
    ConceptEntry,
    ConceptRecord,
    CorefConceptDataset,
    UnknownCertaintyError,
    Violation,
    canonical_certainty,
    normalize_text,
    save_dataset,
    validate_record,
)

OPERATIONS = ("set_text", "set_certainty", "delete_entry", "add_entry", "approve_record")

REVISION_CONFLICT = "REVISION_CONFLICT"
INVALID_PATH = "INVALID_PATH"
INVALID_VALUE = "INVALID_VALUE"
NOT_FOUND = "NOT_FOUND"
APPROVAL_BLOCKED = "APPROVAL_BLOCKED"


class CurationError(Exception):
    def __init__(self, code: str, message: str, violations: list[Violation] | None = None):
        self.code = code
        self.violations = violations or []
        super().__init__(message)


@dataclass
class EditCommand:
    record_key: str
    operation: str
    base_revision: int
    path: str = ""
    value: object = None

    @classmethod
    def from_dict(cls, record_key: str, obj: dict) -> "EditCommand":
        if "operation" not in obj or "base_revision" not in obj:
            raise CurationError(
                INVALID_VALUE, "edit requires operation and base_revision"
            )
        return cls(
            record_key=record_key,
            operation=str(obj["operation"]),
            base_revision=int(obj["base_revision"]),
            path=str(obj.get("path", "")),
            value=obj.get("value"),
        )


@dataclass
class RecordSummary:
    key: str
    target: str
    category: str
    disambiguation: str | None
    state: str
    revision: int
    counts: dict[str, int]
    violation_count: int

    def to_dict(self) -> dict:
        return {
            "key": self.key,
            "target": self.target,
            "category": self.category,
            "disambiguation": self.disambiguation,
            "state": self.state,
            "revision": self.revision,
            "counts": self.counts,
            "violation_count": self.violation_count,
        }


@dataclass
class EntryDiff:
    side: str  # "corefs" | "retains"
    text: str
    certainty: str = ""
    old_certainty: str = ""

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "text": self.text,
            "certainty": self.certainty,
            "old_certainty": self.old_certainty,
        }


@dataclass
class ProposalDiff:
    round: int
    sense: str
    added: list[EntryDiff] = field(default_factory=list)
    removed: list[EntryDiff] = field(default_factory=list)
    changed: list[EntryDiff] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "round": self.round,
            "sense": self.sense,
            "added": [d.to_dict() for d in self.added],
            "removed": [d.to_dict() for d in self.removed],
            "changed": [d.to_dict() for d in self.changed],
        }


_PATH_RE = re.compile(r"^(corefs|retains)\.(train|test)(?:\[(\d+)\])?$")

_SIDE_ATTRS = {
    ("corefs", "train"): "coref_train",
    ("corefs", "test"): "coref_test",
    ("retains", "train"): "retain_train",
    ("retains", "test"): "retain_test",
}


def parse_entry_path(path: str, want_index: bool) -> tuple[str, int | None]:
    match = _PATH_RE.match(path or "")
    if not match:
        raise CurationError(INVALID_PATH, f"malformed entry path {path!r}")
    side, split, index = match.groups()
    if want_index and index is None:
        raise CurationError(INVALID_PATH, f"path {path!r} needs an entry index")
    if not want_index and index is not None:
        raise CurationError(INVALID_PATH, f"path {path!r} must not carry an index")
    return _SIDE_ATTRS[(side, split)], int(index) if index is not None else None


def record_violations(record: ConceptRecord) -> list[Violation]:
    """Validate against the approved shape so the UI sees what approval
    would require, even while the record is a draft."""
    probe = record if record.state == "approved" else replace(record, state="approved")
    return validate_record(probe)


class CurationStore:
    """Single-writer record store over one dataset file.

    Reads are lock-free copies; mutations serialize on one lock, re-validate
    the record, bump its revision, and persist before returning.
    """

    def __init__(self, dataset: CorefConceptDataset, persist_path: str | None = None):
        self.dataset = dataset
        self.persist_path = persist_path
        self._write_lock = threading.Lock()
        self._sessions: dict[str, GenerationSession] = {}

    # -- reads ---------------------------------------------------------------

    def _find(self, key: str) -> ConceptRecord:
        record = self.dataset.find(key)
        if record is None:
            raise CurationError(NOT_FOUND, f"no record with key {key!r}")
        return record

    def list_records(
        self, state: str | None = None, category: str | None = None
    ) -> list[RecordSummary]:
        out = []
        for record in self.dataset.concepts:
            if state is not None and record.state != state:
                continue
            if category is not None and record.category != category:
                continue
            out.append(
                RecordSummary(
                    key=record.key(),
                    target=record.target,
                    category=record.category,
                    disambiguation=record.disambiguation,
                    state=record.state,
                    revision=record.revision,
                    counts={
                        "coref_train": len(record.coref_train),
                        "coref_test": len(record.coref_test),
                        "retain_train": len(record.retain_train),
                        "retain_test": len(record.retain_test),
                    },
                    violation_count=sum(
                        1 for v in record_violations(record) if v.severity == "error"
                    ),
                )
            )
        return out

    def get_record(self, key: str) -> ConceptRecord:
        return self._find(key).copy()

    # -- mutations -------------------------------------------------------------

    def _persist(self) -> None:
        if self.persist_path:
            save_dataset(self.dataset, self.persist_path)

    def apply_edit(self, cmd: EditCommand) -> tuple[ConceptRecord, list[Violation]]:
        if cmd.operation not in OPERATIONS:
            raise CurationError(INVALID_VALUE, f"unknown operation {cmd.operation!r}")
        with self._write_lock:
            record = self._find(cmd.record_key)
            if cmd.base_revision != record.revision:
                raise CurationError(
                    REVISION_CONFLICT,
                    f"edit based on revision {cmd.base_revision}, record is at {record.revision}",
                )
            work = record.copy()
            self._apply_operation(work, cmd)
            work.revision += 1
            violations = record_violations(work)
            index = next(
                i for i, r in enumerate(self.dataset.concepts) if r is record
            )
            self.dataset.concepts[index] = work
            self._persist()
            return work.copy(), violations

    def _apply_operation(self, work: ConceptRecord, cmd: EditCommand) -> None:
        if cmd.operation == "approve_record":
            candidate = replace(work, state="approved")
            violations = [v for v in validate_record(candidate) if v.severity == "error"]
            if violations:
                raise CurationError(
                    APPROVAL_BLOCKED,
                    f"record fails validation with {len(violations)} violation(s)",
                    violations=violations,
                )
            work.state = "approved"
            return

        if cmd.operation == "add_entry":
            attr, _ = parse_entry_path(cmd.path, want_index=False)
            if not isinstance(cmd.value, dict) or "text" not in cmd.value:
                raise CurationError(INVALID_VALUE, "add_entry needs {text, certainty}")
            try:
                certainty = canonical_certainty(cmd.value.get("certainty", ""))
            except UnknownCertaintyError as exc:
                raise CurationError(INVALID_VALUE, str(exc)) from exc
            text = str(cmd.value["text"]).strip()
            if not text:
                raise CurationError(INVALID_VALUE, "entry text must be non-empty")
            getattr(work, attr).append(ConceptEntry(text=text, certainty=certainty))
            return

        attr, index = parse_entry_path(cmd.path, want_index=True)
        entries = getattr(work, attr)
        if not 0 <= index < len(entries):
            raise CurationError(
                INVALID_PATH, f"index {index} out of range for {cmd.path!r}"
            )
        if cmd.operation == "set_text":
            text = str(cmd.value or "").strip()
            if not text:
                raise CurationError(INVALID_VALUE, "entry text must be non-empty")
            entries[index].text = text
        elif cmd.operation == "set_certainty":
            try:
                entries[index].certainty = canonical_certainty(str(cmd.value))
            except UnknownCertaintyError as exc:
                raise CurationError(INVALID_VALUE, str(exc)) from exc
        elif cmd.operation == "delete_entry":
            entries.pop(index)

    # -- regeneration ---------------------------------------------------------

    def _session_for(self, record: ConceptRecord, client: ChatClient) -> GenerationSession:
        key = record.key()
        if key not in self._sessions:
            # Seed the transcript with the record's current pools so the
            # model refines what the expert is actually looking at.
            messages = build_generation_prompt(record.target, record.category)
            current = CandidatePools(
                sense=record.disambiguation or "",
                coref_pool=record.corefs(),
                retain_pool=record.retains(),
            )
            transcript = messages + [
                ChatMessage("assistant", render_generation_response([current]))
            ]
            self._sessions[key] = GenerationSession(
                target=record.target,
                category=record.category,
                transcript=transcript,
                proposals=[[current]],
                round=1,
            )
        return self._sessions[key]

    def request_regeneration(
        self, key: str, expert_feedback: str, client: ChatClient
    ) -> ProposalDiff:
        """Run one refinement round and return the diff between the record's
        current pools and the fresh proposal. Nothing is applied."""
        record = self._find(key)
        session = self._session_for(record, client)
        new_session = refine(session, expert_feedback, client)
        self._sessions[key] = new_session
        proposal = new_session.proposals[-1][0]
        return diff_pools(record, proposal, new_session.round)


def diff_pools(record: ConceptRecord, proposal: CandidatePools, round_no: int) -> ProposalDiff:
    diff = ProposalDiff(round=round_no, sense=proposal.sense)
    for side, current, proposed in (
        ("corefs", record.corefs(), proposal.coref_pool),
        ("retains", record.retains(), proposal.retain_pool),
    ):
        current_by_norm = {normalize_text(e.text): e for e in current}
        proposed_by_norm = {normalize_text(e.text): e for e in proposed}
        for norm, entry in proposed_by_norm.items():
            if norm not in current_by_norm:
                diff.added.append(EntryDiff(side, entry.text, entry.certainty))
            elif current_by_norm[norm].certainty != entry.certainty:
                diff.changed.append(
                    EntryDiff(
                        side,
                        entry.text,
                        entry.certainty,
                        old_certainty=current_by_norm[norm].certainty,
                    )
                )
        for norm, entry in current_by_norm.items():
            if norm not in proposed_by_norm:
                diff.removed.append(EntryDiff(side, entry.text, entry.certainty))
    return diff


def diff_to_edits(record: ConceptRecord, diff: ProposalDiff) -> list[EditCommand]:
    """Translate an accepted diff into sequential edit commands with chained
    base revisions (each applied edit bumps the revision by one)."""
    edits: list[EditCommand] = []
    revision = record.revision
    sides = {
        "corefs": [("corefs.train", record.coref_train), ("corefs.test", record.coref_test)],
        "retains": [("retains.train", record.retain_train), ("retains.test", record.retain_test)],
    }

    def locate(side: str, text: str) -> tuple[str, int] | None:
        for prefix, entries in sides[side]:
            for i, entry in enumerate(entries):
                if normalize_text(entry.text) == normalize_text(text):
                    return prefix, i
        return None

    for change in diff.changed:
        location = locate(change.side, change.text)
        if location is None:
            continue
        prefix, index = location
        edits.append(
            EditCommand(
                record_key=record.key(),
                operation="set_certainty",
                base_revision=revision,
                path=f"{prefix}[{index}]",
                value=change.certainty,
            )
        )
        revision += 1
    # Deletions are emitted highest index first so earlier commands do not
    # shift the later ones.
    removals = []
    for removal in diff.removed:
        location = locate(removal.side, removal.text)
        if location is not None:
            removals.append(location)
    for prefix, index in sorted(removals, key=lambda li: (li[0], -li[1])):
        edits.append(
            EditCommand(
                record_key=record.key(),
                operation="delete_entry",
                base_revision=revision,
                path=f"{prefix}[{index}]",
            )
        )
        revision += 1
    for addition in diff.added:
        prefix = "corefs.train" if addition.side == "corefs" else "retains.train"
        edits.append(
            EditCommand(
                record_key=record.key(),
                operation="add_entry",
                base_revision=revision,
                path=prefix,
                value={"text": addition.text, "certainty": addition.certainty},
            )
        )
        revision += 1
    return edits


# --- HTTP facade ----------------------------------------------------------------


def build_app(
    store: CurationStore,
    client: ChatClient | None = None,
    ui_origin: str = "http://localhost:5173",
    encoder=None,
):
    """FastAPI app over the store. CORS is restricted to the UI origin."""
    app = FastAPI(title="coref curation service")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=[ui_origin],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def record_payload(record: ConceptRecord) -> dict:
        return {
            "key": record.key(),
            "record": record.to_dict(),
            "violations": [
                {
                    "code": v.code,
                    "path": v.path,
                    "message": v.message,
                    "severity": v.severity,
                }
                for v in record_violations(record)
            ],
        }

    def http_error(exc: CurationError) -> HTTPException:
        status = {
            NOT_FOUND: 404,
            REVISION_CONFLICT: 409,
            APPROVAL_BLOCKED: 409,
            INVALID_PATH: 422,
            INVALID_VALUE: 422,
        }.get(exc.code, 400)
        return HTTPException(
            status_code=status,
            detail={
                "code": exc.code,
                "message": str(exc),
                "violations": [
                    {
                        "code": v.code,
                        "path": v.path,
                        "message": v.message,
                        "severity": v.severity,
                    }
                    for v in exc.violations
                ],
            },
        )

    @app.get("/records")
    def list_records(state: str | None = None, category: str | None = None):
        return {"records": [s.to_dict() for s in store.list_records(state, category)]}

    @app.get("/records/{key}")
    def get_record(key: str):
        try:
            return record_payload(store.get_record(key))
        except CurationError as exc:
            raise http_error(exc)

    @app.post("/records/{key}/edits")
    async def post_edit(key: str, request: Request):
        body = await request.json()
        try:
            cmd = EditCommand.from_dict(key, body)
            record, violations = store.apply_edit(cmd)
        except CurationError as exc:
            raise http_error(exc)
        payload = record_payload(record)
        payload["violations"] = [
            {"code": v.code, "path": v.path, "message": v.message, "severity": v.severity}
            for v in violations
        ]
        return payload

    @app.post("/records/{key}/approve")
    async def post_approve(key: str, request: Request):
        body = await request.json()
        try:
            cmd = EditCommand(
                record_key=key,
                operation="approve_record",
                base_revision=int(body.get("base_revision", -1)),
            )
            record, violations = store.apply_edit(cmd)
        except CurationError as exc:
            raise http_error(exc)
        return record_payload(record)

    @app.post("/records/{key}/regenerate")
    async def post_regenerate(key: str, request: Request):
        if client is None:
            raise HTTPException(status_code=503, detail={"message": "no LLM client configured"})
        body = await request.json()
        feedback = str(body.get("feedback", "")).strip()
        if not feedback:
            raise HTTPException(status_code=422, detail={"message": "feedback must be non-empty"})
        try:
            diff = store.request_regeneration(key, feedback, client)
        except CurationError as exc:
            raise http_error(exc)
        except Exception as exc:
            raise HTTPException(
                status_code=502,
                detail={"message": f"regeneration failed: {exc}", "retryable": True},
            )
        return {"diff": diff.to_dict()}

    @app.get("/records/{key}/distances")
    def get_distances(key: str):
        if encoder is None:
            raise HTTPException(status_code=404, detail={"message": "no encoder configured"})
        from .embedding import distance_report

        try:
            record = store.get_record(key)
        except CurationError as exc:
            raise http_error(exc)
        report = distance_report(record.target, record, encoder)
        return {
            "target": report.target,
            "encoder_id": report.encoder_id,
            "rows": [
                {
                    "group": r.group,
                    "text": r.text,
                    "certainty": r.certainty,
                    "cosine": r.cosine,
                    "euclidean": r.euclidean,
                    "identity_ok": r.identity_ok,
                }
                for r in report.rows
            ],
        }

    return app
