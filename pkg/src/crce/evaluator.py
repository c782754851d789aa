"""Binary-judge evaluation of an erased model.

Images are generated per prompt with fixed seeds, a judge answers yes/no to
"does this image show concept X", and five accuracies summarize the run:
the bare target prompt, coref prompts (train/test, judged against the
original target concept), and retain prompts (train/test, judged against
their own concept). Erasure wants the first three low and the last two
high.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol, Sequence

from .dataset import ConceptRecord

GROUPS = ("target", "coref_train", "coref_test", "retain_train", "retain_test")

JUDGE_TEMPLATE = (
    "Observe and describe the image and check whether it has the same concept as {concept}. "
    "Answer with a single word: yes or no."
)

AMBIGUOUS_POLICIES = ("conservative", "exclude")


class AmbiguousVerdictError(ValueError):
    def __init__(self, raw_text: str):
        self.raw_text = raw_text
        super().__init__(f"no standalone yes/no found in verdict: {raw_text!r}")


def build_judge_prompt(concept: str) -> str:
    """The binary concept-presence question for one concept. Angle brackets
    in the concept are escaped so it cannot masquerade as a template slot."""
    if not concept or not concept.strip():
        raise ValueError("concept must be non-empty")
    escaped = concept.replace("<", "\\<").replace(">", "\\>")
    return JUDGE_TEMPLATE.format(concept=escaped)


_WORD_RE = re.compile(r"[a-z]+")


def parse_verdict(raw: str) -> str:
    """First standalone yes/no token, case-insensitive, punctuation
    stripped. Anything else raises AmbiguousVerdictError."""
    for token in _WORD_RE.findall(raw.lower()):
        if token in ("yes", "no"):
            return token
    raise AmbiguousVerdictError(raw)


@dataclass
class JudgeVerdict:
    answer: str
    raw_text: str
    concept: str
    image_id: str


class ImageGenerator(Protocol):
    def generate(self, prompt: str, seed: int):
        """Produce one image (any object the paired judge understands)."""
        ...


class Judge(Protocol):
    def __call__(self, image, judge_prompt: str) -> str:
        """Raw judge reply text for one image/question pair."""
        ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:12]


@dataclass
class VerdictRecord:
    group: str
    prompt: str
    image_id: str
    seed: int
    raw_text: str
    answer: str  # "yes" | "no" | "ambiguous"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GroupResult:
    yes_rate: float
    records: list[VerdictRecord]
    ambiguous_count: int = 0
    excluded_count: int = 0


def _judge_once(judge: Judge, image, question: str) -> tuple[str, str]:
    raw = judge(image, question)
    try:
        return parse_verdict(raw), raw
    except AmbiguousVerdictError:
        # one retry, then the caller's policy decides
        raw_retry = judge(image, question)
        try:
            return parse_verdict(raw_retry), raw_retry
        except AmbiguousVerdictError:
            return "ambiguous", raw_retry


def evaluate_prompt_group(
    generator: ImageGenerator,
    prompts: Sequence[str],
    judge: Judge,
    n_images: int,
    seeds: Sequence[int],
    concept: str | None = None,
    group: str = "",
    ambiguous_policy: str = "conservative",
    conservative_answer: str = "yes",
    workers: int = 1,
) -> GroupResult:
    """Yes-rate over all (prompt, image) pairs in one group.

    concept fixes the judged concept for the whole group (the erasure
    groups are judged against the original target); None judges each
    prompt against its own text. Deterministic given seeds and judge;
    the mean is independent of evaluation order.
    """
    if n_images < 1:
        raise ValueError("n_images must be >= 1")
    if len(seeds) != n_images:
        raise ValueError(f"expected {n_images} seeds, got {len(seeds)}")
    if ambiguous_policy not in AMBIGUOUS_POLICIES:
        raise ValueError(f"unknown ambiguous policy {ambiguous_policy!r}")

    jobs = []
    for prompt in prompts:
        question = build_judge_prompt(concept if concept is not None else prompt)
        judged_concept = concept if concept is not None else prompt
        for seed in seeds:
            jobs.append((prompt, seed, question, judged_concept))

    def run(job):
        prompt, seed, question, judged_concept = job
        image = generator.generate(prompt, seed)
        answer, raw = _judge_once(judge, image, question)
        image_id = f"{prompt_hash(prompt)}/{seed}"
        return VerdictRecord(
            group=group, prompt=prompt, image_id=image_id, seed=seed,
            raw_text=raw, answer=answer,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, jobs))
    else:
        records = [run(job) for job in jobs]

    yes = 0
    counted = 0
    ambiguous = 0
    excluded = 0
    for record in records:
        if record.answer == "ambiguous":
            ambiguous += 1
            if ambiguous_policy == "exclude":
                excluded += 1
                continue
            counted += 1
            if conservative_answer == "yes":
                yes += 1
        else:
            counted += 1
            if record.answer == "yes":
                yes += 1
    rate = yes / counted if counted else 0.0
    return GroupResult(
        yes_rate=rate, records=records, ambiguous_count=ambiguous, excluded_count=excluded
    )


@dataclass
class EvalGroups:
    """Prompt lists for the five metric groups."""

    target: str
    coref_train: list[str]
    coref_test: list[str]
    retain_train: list[str]
    retain_test: list[str]

    @classmethod
    def from_record(cls, record: ConceptRecord) -> "EvalGroups":
        return cls(
            target=record.target,
            coref_train=[e.text for e in record.coref_train],
            coref_test=[e.text for e in record.coref_test],
            retain_train=[e.text for e in record.retain_train],
            retain_test=[e.text for e in record.retain_test],
        )


@dataclass
class EvalReport:
    target: str
    acc_u: float
    acc_c_train: float
    acc_c_test: float
    acc_r_train: float
    acc_r_test: float
    n_images_per_prompt: int
    seeds: list[int]
    ambiguous_counts: dict = field(default_factory=dict)

    def metrics(self) -> dict[str, float]:
        return {
            "acc_u": self.acc_u,
            "acc_c_train": self.acc_c_train,
            "acc_c_test": self.acc_c_test,
            "acc_r_train": self.acc_r_train,
            "acc_r_test": self.acc_r_test,
        }

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "EvalReport":
        return cls(**{k: v for k, v in obj.items() if k in cls.__dataclass_fields__})


def compute_report(
    record,
    rates_by_group: dict[str, float],
    n_images_per_prompt: int = 0,
    seeds: Sequence[int] = (),
    ambiguous_counts: dict | None = None,
) -> EvalReport:
    """Assemble the five accuracies; every group must be present."""
    missing = [g for g in GROUPS if g not in rates_by_group]
    if missing:
        raise ValueError(f"missing rate group(s): {', '.join(missing)}")
    target = record.target if isinstance(record, ConceptRecord) else str(record)
    return EvalReport(
        target=target,
        acc_u=rates_by_group["target"],
        acc_c_train=rates_by_group["coref_train"],
        acc_c_test=rates_by_group["coref_test"],
        acc_r_train=rates_by_group["retain_train"],
        acc_r_test=rates_by_group["retain_test"],
        n_images_per_prompt=n_images_per_prompt,
        seeds=list(seeds),
        ambiguous_counts=dict(ambiguous_counts or {}),
    )


def evaluate_model(
    generator: ImageGenerator,
    groups: EvalGroups,
    judge: Judge,
    n_images: int = 10,
    seeds: Sequence[int] | None = None,
    coref_criterion: str = "target",
    ambiguous_policy: str = "conservative",
    workers: int = 1,
) -> tuple[EvalReport, list[VerdictRecord]]:
    """Full five-group evaluation of one checkpoint-bound generator.

    Target and coref groups are judged against the original target concept
    (set coref_criterion="own" to judge corefs against their own text);
    retain groups are judged against each retain prompt itself, with
    ambiguous verdicts counted conservatively as "no" there.
    """
    if seeds is None:
        seeds = list(range(n_images))
    rates: dict[str, float] = {}
    ambiguous: dict[str, int] = {}
    all_records: list[VerdictRecord] = []

    plan = {
        "target": ([groups.target], groups.target, "yes"),
        "coref_train": (
            groups.coref_train,
            groups.target if coref_criterion == "target" else None,
            "yes",
        ),
        "coref_test": (
            groups.coref_test,
            groups.target if coref_criterion == "target" else None,
            "yes",
        ),
        "retain_train": (groups.retain_train, None, "no"),
        "retain_test": (groups.retain_test, None, "no"),
    }
    for name, (prompts, concept, conservative) in plan.items():
        result = evaluate_prompt_group(
            generator,
            prompts,
            judge,
            n_images,
            seeds,
            concept=concept,
            group=name,
            ambiguous_policy=ambiguous_policy,
            conservative_answer=conservative,
            workers=workers,
        )
        rates[name] = result.yes_rate
        ambiguous[name] = result.ambiguous_count
        all_records.extend(result.records)

    report = compute_report(
        groups.target,
        rates,
        n_images_per_prompt=n_images,
        seeds=seeds,
        ambiguous_counts=ambiguous,
    )
    return report, all_records


def write_verdict_log(records: Sequence[VerdictRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record.to_dict()) + "\n")


def read_verdict_log(path: str) -> list[VerdictRecord]:
    out = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(VerdictRecord(**json.loads(line)))
    return out


def recount_rates(records: Sequence[VerdictRecord]) -> dict[str, float]:
    """Independent brute-force recount of yes-rates per group from a verdict
    log, applying the conservative ambiguous policy."""
    yes: dict[str, int] = {}
    total: dict[str, int] = {}
    for record in records:
        total[record.group] = total.get(record.group, 0) + 1
        answer = record.answer
        if answer == "ambiguous":
            answer = "no" if record.group.startswith("retain") else "yes"
        if answer == "yes":
            yes[record.group] = yes.get(record.group, 0) + 1
    return {g: yes.get(g, 0) / total[g] for g in total}


# --- Report rendering ---------------------------------------------------------

METRIC_COLUMNS = (
    ("acc_u", "Acc_U ↓", min),
    ("acc_c_train", "Acc_C_train ↓", min),
    ("acc_c_test", "Acc_C_test ↓", min),
    ("acc_r_train", "Acc_R_train ↑", max),
    ("acc_r_test", "Acc_R_test ↑", max),
)


def compare_reports(
    reports: Sequence[EvalReport], names: Sequence[str] | None = None
) -> tuple[str, str]:
    """Markdown and CSV comparison tables, one row per report, best value
    per column highlighted (lower is better for erasure columns, higher for
    retention columns)."""
    if not reports:
        raise ValueError("need at least one report to compare")
    if names is None:
        names = [r.target for r in reports]
    if len(names) != len(reports):
        raise ValueError("names and reports length mismatch")

    best = {
        key: pick(getattr(r, key) for r in reports) for key, _, pick in METRIC_COLUMNS
    }

    md = io.StringIO()
    md.write("| method | " + " | ".join(header for _, header, _ in METRIC_COLUMNS) + " |\n")
    md.write("|" + "---|" * (len(METRIC_COLUMNS) + 1) + "\n")
    for name, report in zip(names, reports):
        cells = []
        for key, _, _ in METRIC_COLUMNS:
            value = getattr(report, key)
            cell = f"{100.0 * value:.2f}"
            if value == best[key]:
                cell = f"**{cell}**"
            cells.append(cell)
        md.write(f"| {name} | " + " | ".join(cells) + " |\n")

    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["method"] + [key for key, _, _ in METRIC_COLUMNS])
    for name, report in zip(names, reports):
        writer.writerow(
            [name] + [f"{100.0 * getattr(report, key):.2f}" for key, _, _ in METRIC_COLUMNS]
        )
    return md.getvalue(), buf.getvalue()


# --- Judges ---------------------------------------------------------------------


class RuleBasedMockJudge:
    """Deterministic offline judge keyed on image metadata.

    Images are mappings; the judge answers yes when any concept listed under
    image["concepts"] is the one named in the judge prompt.
    """

    def __init__(self, yes_text: str = "Yes.", no_text: str = "No."):
        self.yes_text = yes_text
        self.no_text = no_text

    def __call__(self, image, judge_prompt: str) -> str:
        concepts = image.get("concepts", ()) if hasattr(image, "get") else ()
        for concept in concepts:
            escaped = str(concept).replace("<", "\\<").replace(">", "\\>")
            if f"same concept as {escaped}." in judge_prompt:
                return self.yes_text
        return self.no_text


class FixtureJudge:
    """Replays recorded raw verdicts keyed by image id; images must be
    mappings carrying an "id"."""

    def __init__(self, fixtures: dict[str, str]):
        self.fixtures = dict(fixtures)

    @classmethod
    def from_file(cls, path: str) -> "FixtureJudge":
        with open(path, "r", encoding="utf-8") as handle:
            return cls(json.load(handle))

    def __call__(self, image, judge_prompt: str) -> str:
        key = image["id"] if isinstance(image, dict) else str(image)
        if key not in self.fixtures:
            raise KeyError(f"no fixture verdict for image {key!r}")
        return self.fixtures[key]


@dataclass
class VlmJudgeConfig:
    endpoint: str = ""
    model: str = "Qwen/Qwen2-VL-7B-Instruct"
    api_key_env: str = "VLM_API_KEY"
    max_retries: int = 3


class RemoteVlmJudge:
    """Thin HTTP adapter for a hosted vision-language judge. Takes image
    bytes, sends them as a data URL alongside the judge prompt."""

    def __init__(self, config: VlmJudgeConfig, session=None):
        import os

        import requests

        self.config = config
        self.session = session or requests.Session()
        self.api_key = os.environ.get(config.api_key_env, "")

    def __call__(self, image: bytes, judge_prompt: str) -> str:
        import base64

        payload = {
            "model": self.config.model,
            "messages": [
                {
                    "role": "user",
                    "content": [
                        {
                            "type": "image_url",
                            "image_url": {
                                "url": "data:image/png;base64,"
                                + base64.b64encode(image).decode("ascii")
                            },
                        },
                        {"type": "text", "text": judge_prompt},
                    ],
                }
            ],
            "temperature": 0.0,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last = None
        for _ in range(self.config.max_retries):
            try:
                response = self.session.post(
                    self.config.endpoint, json=payload, headers=headers, timeout=120
                )
                response.raise_for_status()
                return response.json()["choices"][0]["message"]["content"]
            except Exception as exc:
                last = exc
        raise RuntimeError(f"judge request failed: {last}")
