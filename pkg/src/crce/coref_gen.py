"""LLM-backed generation of coref and retain candidate pools.

Builds the structured chat prompts, talks to a pluggable chat client, parses
the JSON proposals (one per meaning when the target word is ambiguous),
validates the pools, splits them 10/5 into train/test, and supports
multi-round refinement driven by expert feedback.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Protocol, Sequence

from .dataset import (
    NON_MONOTONE,
    POOL_SIZE,
    POOL_SIZE_VIOLATION,
    SET_OVERLAP,
    TARGET_IN_RETAIN,
    TEST_SIZE,
    TRAIN_SIZE,
    UNKNOWN_CERTAINTY,
    ConceptEntry,
    UnknownCertaintyError,
    Violation,
    canonical_certainty,
    certainty_to_weight,
    normalize_text,
)
from .dataset import DUPLICATE_TEXT, EMPTY_TEXT

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown chat role {self.role!r}")
        if not self.content:
            raise ValueError("chat message content must be non-empty")

    def to_dict(self) -> dict:
        return {"role": self.role, "content": self.content}


@dataclass
class CandidatePools:
    """One proposal for a single meaning of the target: 15 coref candidates
    and 15 retain candidates, plus any violations found while parsing."""

    sense: str
    coref_pool: list[ConceptEntry]
    retain_pool: list[ConceptEntry]
    violations: list[Violation] = field(default_factory=list)


@dataclass
class GenerationSession:
    """A multi-round conversation with the LLM about one target concept."""

    target: str
    category: str
    transcript: list[ChatMessage]
    proposals: list[list[CandidatePools]]
    round: int = 1


class LlmClientError(RuntimeError):
    """Transport or server failure from the chat client."""

    def __init__(self, message: str, attempts: int = 1, retryable: bool = True):
        self.attempts = attempts
        self.retryable = retryable
        super().__init__(message)


class ResponseParseError(ValueError):
    """The LLM reply could not be interpreted as a proposal. Keeps the raw
    text so the refinement loop can show it to the expert."""

    def __init__(self, message: str, raw_text: str):
        self.raw_text = raw_text
        super().__init__(message)


class ChatClient(Protocol):
    def complete(self, messages: Sequence[ChatMessage]) -> str:
        """Send the transcript, return the assistant's reply text."""
        ...


# --- Prompt construction -----------------------------------------------

TASK_INSTRUCTION = """\
This research program focuses on the concept erasing behavior of Text-2-Image models, especially Stable Diffusion v1.4. The goal is to explore the under-/over-erasure behavior of the current concept erasure algorithms. As part of this academic study, you will generate coreferential (coref) lists and retention (retains) lists for specified concepts.

1. You will be given a concept that can belong to one of the following categories: Object, Intellectual Property (IP), and Celebrity.
2. Your objective is to provide a list of 15 corefs concepts that correspond to the specified target concept, and a list of 15 retains concepts.
3. The corefs should be visually related to the target concept.
4. That means these prompts can be used to generate an related image from the corefs for generative models such as Stable Diffusion.
5. Do not use very vague and general description.
6. Better not to include other irrelevant concept in the prompt.
   a. For example, when we find corefs for the celebrity "Samuel L. Jackson", the bad prompt such as "Frequent co-star with Bruce Willis" will let the T2I generative model generate "Bruce Willis" but not "Samuel L. Jackson" himself.
   b. The input concept could have multiple meanings, if you find the word to be ambiguous, you can use each of its meaning to form a JSON list. For example, apple may refer to "the fruit apple" or "the tech company apple", so you need to generate two sets of answers.

Reply with JSON only, in this envelope (one element per meaning of the concept):

{"senses": [{"sense": "<short description of the meaning>", "corefs": [{"text": "...", "certainty": "..."}, ...], "retains": [{"text": "...", "certainty": "..."}, ...]}]}
"""

CERTAINTY_CRITERIA = """\
1. Order the concepts by their relevance or confidence:
   a. The first item should be a synonym or the most accurate descriptor of the concept.
   b. The last item should be the most vague or loosely related concept.
   c. If it is possible, give more high certainty coreferential as many as possible.
2. Assign a level of certainty to each item. Use the following scale: from "Very High" to "High", "Normal", "Low", and "Very Low".

The level of certainty should be based on these Certainty Criteria:

1. Visual and Semantic Relevance:
   a. Coref entries are chosen because they are visually or conceptually similar to the target concept, ensuring they can prompt related images in generative models.
   b. Retain entries are selected to represent similar but distinct concepts that should remain intact if the target concept is erased.
2. Contextual Specificity:
   a. For celebrity and IP concepts, details such as roles, iconic traits, and narrative associations are incorporated to ensure the corefs accurately represent the subject.
3. Avoiding Vague Descriptions:
   a. The generated terms aim to be specific enough to avoid misinterpretations by generative models.
   b. Unrelated or overly generic descriptors are avoided to maintain high relevance.
4. Balancing Similarity and Distinctiveness:
   a. Coref lists focus on descriptors that are tightly aligned with the target concept.
   b. Retain lists include similar entities that are visually related but not identical, ensuring that the concept erasing process does not inadvertently remove associated, yet distinct, concepts.
"""

CATEGORY_DISPLAY = {"object": "Object", "ip": "Intellectual Property (IP)", "celebrity": "Celebrity"}


def build_generation_prompt(target: str, category: str) -> list[ChatMessage]:
    """Task instruction, certainty criteria, then the user request naming the
    target. Deterministic templating: identical inputs give identical bytes."""
    if not target or not target.strip():
        raise ValueError("target must be non-empty")
    display = CATEGORY_DISPLAY.get(category, category)
    user = (
        f'The target concept is "{target.strip()}" (category: {display}). '
        f"Provide the coref and retain lists with certainty levels."
    )
    return [
        ChatMessage("system", TASK_INSTRUCTION),
        ChatMessage("system", CERTAINTY_CRITERIA),
        ChatMessage("user", user),
    ]


# --- Response parsing ---------------------------------------------------

_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def _extract_json_block(text: str) -> object:
    """Strict parse first; fall back to the first JSON object/array embedded
    in prose or a markdown fence."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    for match in _FENCE_RE.finditer(text):
        try:
            return json.loads(match.group(1))
        except json.JSONDecodeError:
            continue
    decoder = json.JSONDecoder()
    for start_char in ("{", "["):
        idx = text.find(start_char)
        while idx != -1:
            try:
                obj, _ = decoder.raw_decode(text[idx:])
                return obj
            except json.JSONDecodeError:
                idx = text.find(start_char, idx + 1)
    raise ResponseParseError("no JSON payload found in response", text)


def _parse_pool(items: object, path: str, raw: str) -> tuple[list[ConceptEntry], list[Violation]]:
    if not isinstance(items, list):
        raise ResponseParseError(f"{path} must be a list", raw)
    entries: list[ConceptEntry] = []
    violations: list[Violation] = []
    for i, item in enumerate(items):
        if not isinstance(item, dict) or "text" not in item:
            raise ResponseParseError(f"{path}[{i}] must be an object with a text field", raw)
        text = str(item["text"])
        label = item.get("certainty", "")
        try:
            label = canonical_certainty(label)
        except UnknownCertaintyError:
            violations.append(
                Violation(
                    UNKNOWN_CERTAINTY,
                    f"{path}[{i}].certainty",
                    f"unknown certainty label {label!r}",
                )
            )
            label = str(label)
        entries.append(ConceptEntry(text=text, certainty=label))
    return entries, violations


def parse_generation_response(text: str) -> list[CandidatePools]:
    """Extract one CandidatePools per meaning from the LLM reply, preserving
    the LLM's ordering. Structural problems raise ResponseParseError; bad
    certainty labels become violations attached to the proposal."""
    payload = _extract_json_block(text)
    if isinstance(payload, dict) and "senses" in payload:
        senses = payload["senses"]
    elif isinstance(payload, dict) and "corefs" in payload:
        senses = [payload]
    elif isinstance(payload, list):
        senses = payload
    else:
        raise ResponseParseError("JSON payload has no senses/corefs structure", text)
    if not isinstance(senses, list) or not senses:
        raise ResponseParseError("senses must be a non-empty list", text)

    proposals = []
    for i, sense_obj in enumerate(senses):
        if not isinstance(sense_obj, dict):
            raise ResponseParseError(f"senses[{i}] must be an object", text)
        if "corefs" not in sense_obj or "retains" not in sense_obj:
            raise ResponseParseError(
                f"senses[{i}] must contain corefs and retains lists", text
            )
        corefs, coref_violations = _parse_pool(
            sense_obj["corefs"], f"senses[{i}].corefs", text
        )
        retains, retain_violations = _parse_pool(
            sense_obj["retains"], f"senses[{i}].retains", text
        )
        proposals.append(
            CandidatePools(
                sense=str(sense_obj.get("sense", "")),
                coref_pool=corefs,
                retain_pool=retains,
                violations=coref_violations + retain_violations,
            )
        )
    return proposals


def render_generation_response(proposals: Sequence[CandidatePools]) -> str:
    """Inverse of parse_generation_response for fixtures and mock clients."""
    return json.dumps(
        {
            "senses": [
                {
                    "sense": p.sense,
                    "corefs": [e.to_dict() for e in p.coref_pool],
                    "retains": [e.to_dict() for e in p.retain_pool],
                }
                for p in proposals
            ]
        },
        indent=2,
        ensure_ascii=False,
    )


# --- Pool validation and splitting ---------------------------------------


def _monotone_violations(pool: list[ConceptEntry], path: str) -> list[Violation]:
    # Warning only: experts resolve ordering slips during curation.
    out = []
    previous = None
    for i, entry in enumerate(pool):
        try:
            weight = certainty_to_weight(entry.certainty)
        except UnknownCertaintyError:
            continue
        if previous is not None and weight > previous:
            out.append(
                Violation(
                    NON_MONOTONE,
                    f"{path}[{i}]",
                    f"certainty {entry.certainty!r} outranks the previous entry",
                    severity="warning",
                )
            )
        previous = weight
    return out


def validate_pools(
    coref_pool: list[ConceptEntry],
    retain_pool: list[ConceptEntry],
    target: str,
) -> list[Violation]:
    """Shape and content checks on parsed candidate pools: 15 entries per
    side, certainty ordered strongest-first (warning), disjoint pools, no
    retain equal to the target, no duplicates."""
    violations: list[Violation] = []
    for path, pool in (("coref_pool", coref_pool), ("retain_pool", retain_pool)):
        if len(pool) != POOL_SIZE:
            violations.append(
                Violation(
                    POOL_SIZE_VIOLATION,
                    path,
                    f"expected {POOL_SIZE} entries, found {len(pool)}",
                )
            )
        for i, entry in enumerate(pool):
            if not entry.text or not entry.text.strip():
                violations.append(
                    Violation(EMPTY_TEXT, f"{path}[{i}].text", "entry text is empty")
                )
            try:
                canonical_certainty(entry.certainty)
            except UnknownCertaintyError:
                violations.append(
                    Violation(
                        UNKNOWN_CERTAINTY,
                        f"{path}[{i}].certainty",
                        f"unknown certainty label {entry.certainty!r}",
                    )
                )
        seen: dict[str, int] = {}
        for i, entry in enumerate(pool):
            norm = normalize_text(entry.text)
            if not norm:
                continue
            if norm in seen:
                violations.append(
                    Violation(
                        DUPLICATE_TEXT,
                        f"{path}[{i}]",
                        f"duplicate text {entry.text!r} (also at index {seen[norm]})",
                    )
                )
            else:
                seen[norm] = i
        violations.extend(_monotone_violations(pool, path))

    coref_norms = {normalize_text(e.text) for e in coref_pool if e.text.strip()}
    target_norm = normalize_text(target)
    for i, entry in enumerate(retain_pool):
        norm = normalize_text(entry.text)
        if norm and norm in coref_norms:
            violations.append(
                Violation(
                    SET_OVERLAP,
                    f"retain_pool[{i}]",
                    f"{entry.text!r} appears in both pools",
                )
            )
        if norm and norm == target_norm:
            violations.append(
                Violation(
                    TARGET_IN_RETAIN,
                    f"retain_pool[{i}]",
                    f"retain entry {entry.text!r} equals the target",
                )
            )
    return violations


def split_train_test(
    pool: Sequence[ConceptEntry], rng_seed: int
) -> tuple[list[ConceptEntry], list[ConceptEntry]]:
    """Uniformly pick 10 of 15 entries for training, the rest for test.

    Relative order within each part follows the pool order, and the split is
    a function of the seed alone.
    """
    if len(pool) != POOL_SIZE:
        raise ValueError(f"pool must have exactly {POOL_SIZE} entries, found {len(pool)}")
    rng = random.Random(rng_seed)
    train_idx = sorted(rng.sample(range(POOL_SIZE), TRAIN_SIZE))
    train_set = set(train_idx)
    train = [pool[i] for i in train_idx]
    test = [pool[i] for i in range(POOL_SIZE) if i not in train_set]
    assert len(test) == TEST_SIZE
    return train, test


# --- Sessions and refinement ---------------------------------------------


def open_session(target: str, category: str, client: ChatClient) -> GenerationSession:
    """First round: build the prompt, query the client, parse the proposal."""
    messages = build_generation_prompt(target, category)
    reply = client.complete(messages)
    proposals = parse_generation_response(reply)
    transcript = messages + [ChatMessage("assistant", reply)]
    return GenerationSession(
        target=target,
        category=category,
        transcript=transcript,
        proposals=[proposals],
        round=1,
    )


def refine(
    session: GenerationSession, expert_feedback: str, client: ChatClient
) -> GenerationSession:
    """Append expert feedback, re-query with the full transcript, and return
    a new session one round further along. The input session is left intact,
    so a client failure changes nothing."""
    if not session.proposals:
        raise ValueError("session has no proposal round to refine")
    if not expert_feedback or not expert_feedback.strip():
        raise ValueError("expert feedback must be non-empty")
    feedback_msg = ChatMessage("user", expert_feedback)
    outgoing = session.transcript + [feedback_msg]
    reply = client.complete(outgoing)
    proposals = parse_generation_response(reply)
    return replace(
        session,
        transcript=outgoing + [ChatMessage("assistant", reply)],
        proposals=session.proposals + [proposals],
        round=session.round + 1,
    )


# --- Clients --------------------------------------------------------------


def request_hash(messages: Sequence[ChatMessage]) -> str:
    """Content hash identifying a transcript; keys the fixture store."""
    blob = json.dumps([m.to_dict() for m in messages], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class MockChatClient:
    """Deterministic offline client replaying recorded fixtures.

    Fixture file format: JSON array of {"request_hash", "response_text"}.
    Responses can also be registered programmatically for a transcript.
    """

    def __init__(self, fixtures: dict[str, str] | None = None):
        self.fixtures = dict(fixtures or {})
        self.calls: list[list[ChatMessage]] = []

    @classmethod
    def from_file(cls, path: str) -> "MockChatClient":
        with open(path, "r", encoding="utf-8") as handle:
            items = json.load(handle)
        return cls({item["request_hash"]: item["response_text"] for item in items})

    def register(self, messages: Sequence[ChatMessage], response_text: str) -> None:
        self.fixtures[request_hash(messages)] = response_text

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        self.calls.append(list(messages))
        key = request_hash(messages)
        if key not in self.fixtures:
            raise LlmClientError(
                f"no fixture recorded for request {key[:12]}…", attempts=1, retryable=False
            )
        return self.fixtures[key]


class TokenBucket:
    """Requests-per-minute limiter shared across threads."""

    def __init__(self, requests_per_minute: int, clock=time.monotonic, sleep=time.sleep):
        if requests_per_minute <= 0:
            raise ValueError("requests_per_minute must be positive")
        self.capacity = float(requests_per_minute)
        self.rate = requests_per_minute / 60.0
        self.tokens = float(requests_per_minute)
        self.updated = clock()
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self.tokens = min(self.capacity, self.tokens + (now - self.updated) * self.rate)
                self.updated = now
                if self.tokens >= 1.0:
                    self.tokens -= 1.0
                    return
                wait = (1.0 - self.tokens) / self.rate
            self._sleep(wait)


@dataclass
class LlmClientConfig:
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    model: str = "o1"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_retries: int = 3
    requests_per_minute: int = 30

    @classmethod
    def from_dict(cls, obj: dict) -> "LlmClientConfig":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


class HttpChatClient:
    """Chat-completions client over HTTP with retry and rate limiting."""

    def __init__(self, config: LlmClientConfig, session=None):
        import os

        import requests

        self.config = config
        self.session = session or requests.Session()
        self.bucket = TokenBucket(config.requests_per_minute)
        self.api_key = os.environ.get(config.api_key_env, "")

    def complete(self, messages: Sequence[ChatMessage]) -> str:
        payload = {
            "model": self.config.model,
            "messages": [m.to_dict() for m in messages],
            "temperature": self.config.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error: Exception | None = None
        for attempt in range(1, self.config.max_retries + 1):
            self.bucket.acquire()
            try:
                response = self.session.post(
                    self.config.endpoint, json=payload, headers=headers, timeout=120
                )
                if response.status_code >= 500:
                    last_error = RuntimeError(f"server error {response.status_code}")
                    continue
                if response.status_code != 200:
                    raise LlmClientError(
                        f"request failed with status {response.status_code}: {response.text[:200]}",
                        attempts=attempt,
                        retryable=False,
                    )
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except LlmClientError:
                raise
            except Exception as exc:  # transport errors are retryable
                last_error = exc
        raise LlmClientError(
            f"request failed after {self.config.max_retries} attempts: {last_error}",
            attempts=self.config.max_retries,
            retryable=True,
        )
