"""CorefConcept data model: records pairing an erasure target with coref and
retain prompt lists, their certainty labels, and JSON persistence.

A record is either a ``draft`` (candidate pools under curation, list lengths
unconstrained) or ``approved`` (exactly 10 train / 5 test entries per side).
Certainty is stored as one of five ordinal labels; the numeric weight used by
the training loss is derived at read time so the files stay human-editable.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
from dataclasses import dataclass, field, replace

__all__ = [
    "CERTAINTY_LABELS",
    "CERTAINTY_WEIGHTS",
    "CATEGORIES",
    "RECORD_STATES",
    "SCHEMA_VERSION",
    "UnknownCertaintyError",
    "DatasetParseError",
    "Violation",
    "ConceptEntry",
    "ConceptRecord",
    "CorefConceptDataset",
    "certainty_to_weight",
    "canonical_certainty",
    "normalize_text",
    "validate_record",
    "validate_dataset",
    "load_dataset",
    "save_dataset",
    "dataset_digest",
    "sample_dataset_path",
]

# Ordinal certainty labels, strongest first, and their loss weights.
CERTAINTY_LABELS = ("Very High", "High", "Normal", "Low", "Very Low")
CERTAINTY_WEIGHTS = {
    "Very High": 1.0,
    "High": 0.8,
    "Normal": 0.6,
    "Low": 0.4,
    "Very Low": 0.2,
}

CATEGORIES = ("object", "ip", "celebrity")
RECORD_STATES = ("draft", "approved")
SCHEMA_VERSION = "1.0"

TRAIN_SIZE = 10
TEST_SIZE = 5
POOL_SIZE = TRAIN_SIZE + TEST_SIZE

# Violation codes used across validation surfaces.
LIST_LENGTH = "LIST_LENGTH"
EMPTY_TEXT = "EMPTY_TEXT"
DUPLICATE_TEXT = "DUPLICATE_TEXT"
SET_OVERLAP = "SET_OVERLAP"
TARGET_IN_RETAIN = "TARGET_IN_RETAIN"
UNKNOWN_CERTAINTY = "UNKNOWN_CERTAINTY"
UNKNOWN_CATEGORY = "UNKNOWN_CATEGORY"
UNKNOWN_STATE = "UNKNOWN_STATE"
NON_MONOTONE = "NON_MONOTONE"
POOL_SIZE_VIOLATION = "POOL_SIZE"
DUPLICATE_TARGET = "DUPLICATE_TARGET"


class UnknownCertaintyError(ValueError):
    """Raised when a certainty label is outside the five-value enumeration."""

    def __init__(self, label: object):
        self.label = label
        super().__init__(
            f"unknown certainty label {label!r}; expected one of {', '.join(CERTAINTY_LABELS)}"
        )


class DatasetParseError(ValueError):
    """Raised when a dataset file does not match the expected schema."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{message} (at {path})" if path else message)


def canonical_certainty(label: str) -> str:
    """Map a certainty label to its canonical capitalization.

    Tolerant of case and surrounding whitespace on read; raises
    UnknownCertaintyError for anything outside the five labels.
    """
    if not isinstance(label, str):
        raise UnknownCertaintyError(label)
    key = " ".join(label.split()).lower()
    for canonical in CERTAINTY_LABELS:
        if canonical.lower() == key:
            return canonical
    raise UnknownCertaintyError(label)


def certainty_to_weight(label: str) -> float:
    """Return the loss weight for a certainty label (1.0 down to 0.2)."""
    return CERTAINTY_WEIGHTS[canonical_certainty(label)]


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_text(text: str) -> str:
    """Normalization used for prompt-string equality: lowercase, strip
    punctuation, collapse whitespace."""
    cleaned = _PUNCT_RE.sub(" ", text.lower())
    return " ".join(cleaned.split())


@dataclass(frozen=True)
class Violation:
    """One validation finding. Violations are data, not exceptions."""

    code: str
    path: str = ""
    message: str = ""
    severity: str = "error"  # "error" | "warning"


@dataclass
class ConceptEntry:
    """A single coref or retain prompt with its certainty label."""

    text: str
    certainty: str

    @property
    def weight(self) -> float:
        return certainty_to_weight(self.certainty)

    def to_dict(self) -> dict:
        return {"text": self.text, "certainty": self.certainty}


@dataclass
class ConceptRecord:
    """One erasure target with its coref/retain train and test lists."""

    target: str
    category: str
    disambiguation: str | None = None
    state: str = "draft"
    revision: int = 0
    coref_train: list[ConceptEntry] = field(default_factory=list)
    coref_test: list[ConceptEntry] = field(default_factory=list)
    retain_train: list[ConceptEntry] = field(default_factory=list)
    retain_test: list[ConceptEntry] = field(default_factory=list)

    def key(self) -> str:
        """Stable identifier within a dataset: target plus disambiguation."""
        base = normalize_text(self.target).replace(" ", "-")
        if self.disambiguation:
            base += "--" + normalize_text(self.disambiguation).replace(" ", "-")
        return base

    def corefs(self) -> list[ConceptEntry]:
        return list(self.coref_train) + list(self.coref_test)

    def retains(self) -> list[ConceptEntry]:
        return list(self.retain_train) + list(self.retain_test)

    def copy(self) -> "ConceptRecord":
        return replace(
            self,
            coref_train=[replace(e) for e in self.coref_train],
            coref_test=[replace(e) for e in self.coref_test],
            retain_train=[replace(e) for e in self.retain_train],
            retain_test=[replace(e) for e in self.retain_test],
        )

    def to_dict(self) -> dict:
        out = {
            "target": self.target,
            "category": self.category,
            "state": self.state,
            "revision": self.revision,
            "corefs": {
                "train": [e.to_dict() for e in self.coref_train],
                "test": [e.to_dict() for e in self.coref_test],
            },
            "retains": {
                "train": [e.to_dict() for e in self.retain_train],
                "test": [e.to_dict() for e in self.retain_test],
            },
        }
        if self.disambiguation is not None:
            out["disambiguation"] = self.disambiguation
        return out


@dataclass
class CorefConceptDataset:
    version: str = SCHEMA_VERSION
    concepts: list[ConceptRecord] = field(default_factory=list)

    def find(self, key_or_target: str) -> ConceptRecord | None:
        """Look up a record by key() or, uniquely, by bare target string."""
        for record in self.concepts:
            if record.key() == key_or_target:
                return record
        matches = [
            r
            for r in self.concepts
            if normalize_text(r.target) == normalize_text(key_or_target)
        ]
        return matches[0] if len(matches) == 1 else None

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "concepts": [r.to_dict() for r in self.concepts],
        }


def _entry_violations(entries: list[ConceptEntry], path: str) -> list[Violation]:
    out = []
    for i, entry in enumerate(entries):
        if not entry.text or not entry.text.strip():
            out.append(
                Violation(EMPTY_TEXT, f"{path}[{i}].text", "entry text is empty")
            )
        try:
            canonical_certainty(entry.certainty)
        except UnknownCertaintyError:
            out.append(
                Violation(
                    UNKNOWN_CERTAINTY,
                    f"{path}[{i}].certainty",
                    f"unknown certainty label {entry.certainty!r}",
                )
            )
    return out


def _duplicate_violations(
    entries: list[tuple[str, ConceptEntry]], label: str
) -> list[Violation]:
    seen: dict[str, str] = {}
    out = []
    for path, entry in entries:
        norm = normalize_text(entry.text)
        if not norm:
            continue
        if norm in seen:
            out.append(
                Violation(
                    DUPLICATE_TEXT,
                    path,
                    f"duplicate {label} text {entry.text!r} (also at {seen[norm]})",
                )
            )
        else:
            seen[norm] = path
    return out


def validate_record(record: ConceptRecord) -> list[Violation]:
    """Check all record invariants; empty result means the record is valid.

    Approved records must have exactly 10/5 train/test entries per side.
    Draft records may hold candidate pools of any size, so only content
    rules (duplicates, overlap, certainty labels) apply.
    """
    violations: list[Violation] = []

    if record.category not in CATEGORIES:
        violations.append(
            Violation(
                UNKNOWN_CATEGORY,
                "category",
                f"unknown category {record.category!r}",
            )
        )
    if record.state not in RECORD_STATES:
        violations.append(
            Violation(UNKNOWN_STATE, "state", f"unknown state {record.state!r}")
        )

    lists = {
        "coref_train": (record.coref_train, TRAIN_SIZE),
        "coref_test": (record.coref_test, TEST_SIZE),
        "retain_train": (record.retain_train, TRAIN_SIZE),
        "retain_test": (record.retain_test, TEST_SIZE),
    }
    if record.state == "approved":
        for path, (entries, expected) in lists.items():
            if len(entries) != expected:
                violations.append(
                    Violation(
                        LIST_LENGTH,
                        path,
                        f"expected {expected} entries, found {len(entries)}",
                    )
                )

    for path, (entries, _) in lists.items():
        violations.extend(_entry_violations(entries, path))

    coref_paths = [
        (f"coref_train[{i}]", e) for i, e in enumerate(record.coref_train)
    ] + [(f"coref_test[{i}]", e) for i, e in enumerate(record.coref_test)]
    retain_paths = [
        (f"retain_train[{i}]", e) for i, e in enumerate(record.retain_train)
    ] + [(f"retain_test[{i}]", e) for i, e in enumerate(record.retain_test)]

    violations.extend(_duplicate_violations(coref_paths, "coref"))
    violations.extend(_duplicate_violations(retain_paths, "retain"))

    coref_norms = {normalize_text(e.text) for _, e in coref_paths}
    target_norm = normalize_text(record.target)
    for path, entry in retain_paths:
        norm = normalize_text(entry.text)
        if norm and norm in coref_norms:
            violations.append(
                Violation(
                    SET_OVERLAP,
                    path,
                    f"{entry.text!r} appears in both coref and retain lists",
                )
            )
        if norm and norm == target_norm:
            violations.append(
                Violation(
                    TARGET_IN_RETAIN,
                    path,
                    f"retain entry {entry.text!r} equals the target",
                )
            )

    return violations


def validate_dataset(dataset: CorefConceptDataset) -> list[Violation]:
    """Record-level violations plus duplicate (target, disambiguation) pairs."""
    violations: list[Violation] = []
    seen: dict[tuple[str, str], int] = {}
    for i, record in enumerate(dataset.concepts):
        for v in validate_record(record):
            violations.append(replace(v, path=f"concepts[{i}].{v.path}"))
        ident = (
            normalize_text(record.target),
            normalize_text(record.disambiguation or ""),
        )
        if ident in seen:
            violations.append(
                Violation(
                    DUPLICATE_TARGET,
                    f"concepts[{i}].target",
                    f"duplicate target {record.target!r} (also at concepts[{seen[ident]}])",
                )
            )
        else:
            seen[ident] = i
    return violations


def _parse_entry(obj: object, path: str) -> ConceptEntry:
    if not isinstance(obj, dict):
        raise DatasetParseError("entry must be an object", path)
    if "text" not in obj:
        raise DatasetParseError('missing required field "text"', path)
    if "certainty" not in obj:
        raise DatasetParseError('missing required field "certainty"', path)
    text = obj["text"]
    if not isinstance(text, str):
        raise DatasetParseError('"text" must be a string', f"{path}.text")
    try:
        certainty = canonical_certainty(obj["certainty"])
    except UnknownCertaintyError as exc:
        raise DatasetParseError(str(exc), f"{path}.certainty") from exc
    return ConceptEntry(text=text, certainty=certainty)


def _parse_side(obj: object, path: str) -> tuple[list[ConceptEntry], list[ConceptEntry]]:
    if not isinstance(obj, dict):
        raise DatasetParseError("expected an object with train/test lists", path)
    out = []
    for split in ("train", "test"):
        items = obj.get(split, [])
        if not isinstance(items, list):
            raise DatasetParseError(f'"{split}" must be a list', f"{path}.{split}")
        out.append(
            [_parse_entry(item, f"{path}.{split}[{i}]") for i, item in enumerate(items)]
        )
    return out[0], out[1]


def _parse_record(obj: object, path: str) -> ConceptRecord:
    if not isinstance(obj, dict):
        raise DatasetParseError("concept must be an object", path)
    for required in ("target", "category"):
        if required not in obj:
            raise DatasetParseError(f'missing required field "{required}"', path)
    category = str(obj["category"]).strip().lower()
    if category not in CATEGORIES:
        raise DatasetParseError(
            f"unknown category {obj['category']!r}; expected one of {', '.join(CATEGORIES)}",
            f"{path}.category",
        )
    state = str(obj.get("state", "draft")).strip().lower()
    if state not in RECORD_STATES:
        raise DatasetParseError(
            f"unknown state {obj['state']!r}", f"{path}.state"
        )
    revision = obj.get("revision", 0)
    if not isinstance(revision, int) or revision < 0:
        raise DatasetParseError(
            "revision must be a non-negative integer", f"{path}.revision"
        )
    coref_train, coref_test = _parse_side(obj.get("corefs", {}), f"{path}.corefs")
    retain_train, retain_test = _parse_side(obj.get("retains", {}), f"{path}.retains")
    disambiguation = obj.get("disambiguation")
    if disambiguation is not None and not isinstance(disambiguation, str):
        raise DatasetParseError(
            "disambiguation must be a string", f"{path}.disambiguation"
        )
    return ConceptRecord(
        target=str(obj["target"]),
        category=category,
        disambiguation=disambiguation,
        state=state,
        revision=revision,
        coref_train=coref_train,
        coref_test=coref_test,
        retain_train=retain_train,
        retain_test=retain_test,
    )


def load_dataset(path: str | os.PathLike) -> CorefConceptDataset:
    """Load a dataset file, raising DatasetParseError with the offending path."""
    with open(path, "r", encoding="utf-8") as handle:
        try:
            payload = json.load(handle)
        except json.JSONDecodeError as exc:
            raise DatasetParseError(
                f"invalid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})"
            ) from exc
    if not isinstance(payload, dict):
        raise DatasetParseError("top level must be an object")
    version = payload.get("version")
    if version != SCHEMA_VERSION:
        raise DatasetParseError(
            f"schema version mismatch: found {version!r}, expected {SCHEMA_VERSION!r}",
            "version",
        )
    concepts_raw = payload.get("concepts")
    if not isinstance(concepts_raw, list):
        raise DatasetParseError('"concepts" must be a list', "concepts")
    concepts = [
        _parse_record(item, f"concepts[{i}]") for i, item in enumerate(concepts_raw)
    ]
    return CorefConceptDataset(version=version, concepts=concepts)


def save_dataset(dataset: CorefConceptDataset, path: str | os.PathLike) -> None:
    """Persist atomically: write to a temp file in the same directory, then
    rename over the destination."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(
        prefix=os.path.basename(path) + ".", suffix=".tmp", dir=directory
    )
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(dataset.to_dict(), handle, indent=2, ensure_ascii=False)
            handle.write("\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def dataset_digest(dataset: CorefConceptDataset) -> str:
    """sha256 over the canonical JSON form; used in run manifests."""
    blob = json.dumps(dataset.to_dict(), sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def sample_dataset_path() -> str:
    """Path of the bundled sample dataset (Horse, bat, Katniss Everdeen,
    Tom Cruise records)."""
    return os.path.join(os.path.dirname(__file__), "data", "corefconcept_sample.json")
