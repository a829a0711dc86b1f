"""Three-stage part faithfulness metric: extract structured features,
derive yes/no questions, grade them, and average the normalized scores.

Graders are pluggable. The oracle grader answers object and part questions
by decoding the generated embedding in the synthetic world; the remote
grader speaks a small JSON-over-HTTP contract so a hosted multimodal model
can judge real images through the same interface. Remote verdicts are
cached on disk keyed by the request hash, retried a bounded number of
times, and fetched with a bounded number of concurrent requests.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import requests

from .errors import GraderUnavailable, MalformedVerdict, MixedScale, ValidationError
from .taxonomy import SemanticAtom, Taxonomy
from .world import WorldSpec, decode_parts

UNSPECIFIED = "unspecified"
ATTRIBUTES = ("object", "part", "color", "texture", "spatial_relation")

QUESTION_TEMPLATES = {
    "object": "Is the {part} recognizably that of a {expected}?",
    "part": "Does the output show a distinct {part}?",
    "color": "Is the {part} {expected} in color?",
    "texture": "Does the {part} have a {expected} texture?",
    "spatial_relation": "Is the {part} positioned {expected}?",
}


@dataclasses.dataclass
class PartFeature:
    object: str
    part: str
    color: str = UNSPECIFIED
    texture: str = UNSPECIFIED
    spatial_relation: str = UNSPECIFIED

    def __post_init__(self) -> None:
        if not self.object or self.object == UNSPECIFIED:
            raise ValidationError("PartFeature requires a specified object")
        if not self.part or self.part == UNSPECIFIED:
            raise ValidationError("PartFeature requires a specified part")


@dataclasses.dataclass
class EvalQuestion:
    text: str
    attribute: str
    expected: str


@dataclasses.dataclass
class GradeRecord:
    verdicts: list[int]
    partial_score: int
    max_score: int

    def __post_init__(self) -> None:
        if self.partial_score > self.max_score:
            raise ValidationError("partial_score cannot exceed max_score")

    @property
    def normalized(self) -> float:
        return self.partial_score / self.max_score


def parteval_extract(atom: SemanticAtom, metadata: Mapping[str, str] | None = None) -> PartFeature:
    """Stage 1: the atom itself fixes object and part; other attributes come
    from ground-truth metadata when available."""
    metadata = metadata or {}
    return PartFeature(
        object=atom.subject,
        part=atom.part,
        color=metadata.get("color", UNSPECIFIED),
        texture=metadata.get("texture", UNSPECIFIED),
        spatial_relation=metadata.get("spatial_relation", UNSPECIFIED),
    )


def parteval_questions(feature: PartFeature) -> list[EvalQuestion]:
    """Stage 2: one templated question per specified attribute, in the fixed
    order object, part, color, texture, spatial_relation."""
    questions = []
    for attribute in ATTRIBUTES:
        expected = getattr(feature, attribute)
        if expected == UNSPECIFIED:
            continue
        text = QUESTION_TEMPLATES[attribute].format(part=feature.part, expected=expected)
        questions.append(EvalQuestion(text=text, attribute=attribute, expected=expected))
    return questions


class StubGrader:
    """Answers from a fixed verdict or a repeating sequence; for tests."""

    def __init__(self, verdicts: int | Sequence[int] = 1):
        self._verdicts = [verdicts] if isinstance(verdicts, int) else list(verdicts)
        self._cursor = 0

    def verdict(self, subject_ref, question: EvalQuestion) -> int:
        v = self._verdicts[self._cursor % len(self._verdicts)]
        self._cursor += 1
        return int(v)


class OracleGrader:
    """Grades against the synthetic world's ground truth.

    subject_ref must be a mapping with "embedding" (the generated vector),
    "k", and "slot"; object and part questions check the decoded atom at
    that slot. Other attributes compare against subject_ref["metadata"].
    """

    def __init__(self, taxonomy: Taxonomy, world: WorldSpec):
        self.taxonomy = taxonomy
        self.world = world
        self._decode_cache: dict[bytes, list[SemanticAtom]] = {}

    def _decode(self, embedding: np.ndarray, k: int) -> list[SemanticAtom]:
        key = hashlib.sha256(np.asarray(embedding, dtype=np.float64).tobytes() + bytes([k])).digest()
        if key not in self._decode_cache:
            self._decode_cache[key] = decode_parts(embedding, k, self.taxonomy, self.world)
        return self._decode_cache[key]

    def verdict(self, subject_ref, question: EvalQuestion) -> int:
        embedding = np.asarray(subject_ref["embedding"], dtype=np.float64)
        decoded = self._decode(embedding, int(subject_ref["k"]))
        slot = int(subject_ref["slot"])
        atom = decoded[slot]
        if question.attribute == "object":
            return int(atom.subject == question.expected)
        if question.attribute == "part":
            return int(atom.part == question.expected)
        metadata = subject_ref.get("metadata") or {}
        return int(metadata.get(question.attribute) == question.expected)


class RemoteGrader:
    """JSON-over-HTTP grading backend client.

    POSTs {subject_ref, question, attribute, expected} and expects
    {"verdict": 0 or 1, "rationale": "..."}. Responses are cached on disk
    keyed by the SHA-256 of the canonical request body, so reruns and
    retries never re-ask answered questions.
    """

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        timeout: float = 10.0,
        max_retries: int = 3,
        retry_delay: float = 0.5,
        cache_dir: str | Path | None = None,
        max_concurrency: int = 4,
    ):
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.timeout = timeout
        self.max_retries = max_retries
        self.retry_delay = retry_delay
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.max_concurrency = max_concurrency

    def _payload(self, subject_ref, question: EvalQuestion) -> dict:
        return {
            "subject_ref": subject_ref,
            "question": question.text,
            "attribute": question.attribute,
            "expected": question.expected,
        }

    def _cache_path(self, payload: dict) -> Path | None:
        if not self.cache_dir:
            return None
        digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.json"

    def verdict(self, subject_ref, question: EvalQuestion) -> int:
        payload = self._payload(subject_ref, question)
        cache_path = self._cache_path(payload)
        if cache_path and cache_path.exists():
            response = json.loads(cache_path.read_text(encoding="utf-8"))
            return self._parse_verdict(response)
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                http = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
                if http.status_code >= 500:
                    last_error = GraderUnavailable(f"server error {http.status_code}")
                elif http.status_code != 200:
                    raise GraderUnavailable(f"grader rejected the request with status {http.status_code}")
                else:
                    response = http.json()
                    verdict = self._parse_verdict(response)
                    if cache_path:
                        cache_path.write_text(json.dumps(response, sort_keys=True), encoding="utf-8")
                    return verdict
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            except ValueError as exc:  # not JSON
                raise MalformedVerdict(f"grader returned a non-JSON body: {exc}") from exc
            if attempt + 1 < self.max_retries:
                time.sleep(self.retry_delay * (2 ** attempt))
        raise GraderUnavailable(f"grader unreachable after {self.max_retries} attempts: {last_error}")

    @staticmethod
    def _parse_verdict(response: dict) -> int:
        verdict = response.get("verdict") if isinstance(response, dict) else None
        if verdict not in (0, 1):
            raise MalformedVerdict(f"verdict must be 0 or 1, got {verdict!r}")
        return int(verdict)


def parteval_grade(grader, subject_ref, questions: Sequence[EvalQuestion]) -> GradeRecord:
    """Stage 3: one 0/1 verdict per question."""
    verdicts = [int(grader.verdict(subject_ref, q)) for q in questions]
    for v in verdicts:
        if v not in (0, 1):
            raise MalformedVerdict(f"verdict must be 0 or 1, got {v!r}")
    return GradeRecord(verdicts=verdicts, partial_score=sum(verdicts), max_score=len(verdicts))


def parteval_grade_many(grader, jobs: Sequence[tuple[object, Sequence[EvalQuestion]]]) -> list[GradeRecord]:
    """Grade many (subject_ref, questions) jobs.

    Remote graders run with bounded concurrency; everything else stays
    sequential. Results keep job order either way.
    """
    concurrency = getattr(grader, "max_concurrency", 1)
    if concurrency <= 1 or len(jobs) <= 1:
        return [parteval_grade(grader, ref, qs) for ref, qs in jobs]
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(parteval_grade, grader, ref, qs) for ref, qs in jobs]
        return [f.result() for f in futures]


def parteval_score(records: Sequence[GradeRecord]) -> float:
    """Mean normalized score; refuses mixed question counts."""
    if not records:
        raise ValueError("records must be non-empty")
    scales = {r.max_score for r in records}
    if len(scales) != 1:
        raise MixedScale(f"records mix max_score values {sorted(scales)}")
    return float(np.mean([r.normalized for r in records]))
