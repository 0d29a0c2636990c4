"""Adjudication: send compiled prompts to a backend, validate the JSON
verdicts, and keep a complete audit record for every attempt.

Findings are evaluated independently and results always come back in input
order regardless of completion order. A finding whose call or validation
fails is marked UNEVALUATED, never dropped.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from .backend import (
    Backend,
    BackendError,
    BackendRequest,
    RetryPolicy,
    SendResult,
    send,
)
from .prompts import PromptBundle


class Verdict(str, Enum):
    TRUE_POSITIVE = "TRUE_POSITIVE"
    FALSE_POSITIVE = "FALSE_POSITIVE"


class Confidence(str, Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


class ResponseValidationError(ValueError):
    """Base class for schema violations in a model response."""


class NotJson(ResponseValidationError):
    pass


class MissingField(ResponseValidationError):
    def __init__(self, field_name: str):
        super().__init__(f"missing field: {field_name}")
        self.field_name = field_name


class BadEnum(ResponseValidationError):
    def __init__(self, field_name: str, value: Any):
        super().__init__(f"bad enum for {field_name}: {value!r}")
        self.field_name = field_name
        self.value = value


STATUS_OK = "OK"
STATUS_UNEVALUATED = "UNEVALUATED"


@dataclass(frozen=True)
class Adjudication:
    finding_id: str
    verdict: Verdict
    confidence: Confidence
    reasoning: str
    salvaged: bool
    raw_response: str
    latency_ms: int
    attempt_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "verdict": self.verdict.value,
            "confidence": self.confidence.value,
            "reasoning": self.reasoning,
            "salvaged": self.salvaged,
            "raw_response": self.raw_response,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
        }


@dataclass(frozen=True)
class AdjudicationResult:
    """Outcome for one (finding, mode): a validated adjudication or an
    UNEVALUATED placeholder with the failure reason."""

    finding_id: str
    mode: str
    status: str  # STATUS_OK or STATUS_UNEVALUATED
    adjudication: Adjudication | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        row: dict[str, Any] = {
            "finding_id": self.finding_id,
            "mode": self.mode,
            "status": self.status,
        }
        if self.adjudication is not None:
            row.update(
                {k: v for k, v in self.adjudication.to_dict().items() if k != "finding_id"}
            )
        if self.error is not None:
            row["error"] = self.error
        return row

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AdjudicationResult":
        adjudication = None
        if d.get("status") == STATUS_OK:
            adjudication = Adjudication(
                finding_id=d["finding_id"],
                verdict=Verdict(d["verdict"]),
                confidence=Confidence(d["confidence"]),
                reasoning=d["reasoning"],
                salvaged=d.get("salvaged", False),
                raw_response=d.get("raw_response", ""),
                latency_ms=d.get("latency_ms", 0),
                attempt_count=d.get("attempt_count", 1),
            )
        return cls(
            finding_id=d["finding_id"],
            mode=d["mode"],
            status=d["status"],
            adjudication=adjudication,
            error=d.get("error"),
        )


@dataclass(frozen=True)
class AuditRecord:
    finding_id: str
    mode: str
    prompt_sha256: str
    model: str
    requested_at: str  # ISO-8601 UTC
    raw_response: str | None
    status: str
    parsed: dict[str, Any] | None
    error: str | None
    latency_ms: int
    attempt_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "finding_id": self.finding_id,
            "mode": self.mode,
            "prompt_sha256": self.prompt_sha256,
            "model": self.model,
            "requested_at": self.requested_at,
            "raw_response": self.raw_response,
            "status": self.status,
            "parsed": self.parsed,
            "error": self.error,
            "latency_ms": self.latency_ms,
            "attempt_count": self.attempt_count,
        }


def _extract_outer_object(raw: str) -> str:
    """Outermost brace-delimited substring, found with a string-aware scan
    so braces inside JSON strings do not end the object early."""
    start = raw.find("{")
    if start < 0:
        raise NotJson("no JSON object found in response")
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(raw)):
        ch = raw[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return raw[start : i + 1]
    raise NotJson("unterminated JSON object in response")


def _validate_object(obj: Any) -> tuple[Verdict, Confidence, str]:
    if not isinstance(obj, dict):
        raise NotJson("response is not a JSON object")
    for name in ("verdict", "confidence", "reasoning"):
        if name not in obj:
            raise MissingField(name)
    verdict_raw = obj["verdict"]
    if not isinstance(verdict_raw, str):
        raise BadEnum("verdict", verdict_raw)
    try:
        verdict = Verdict(verdict_raw.strip().upper())
    except ValueError:
        raise BadEnum("verdict", verdict_raw) from None
    confidence_raw = obj["confidence"]
    if not isinstance(confidence_raw, str):
        raise BadEnum("confidence", confidence_raw)
    try:
        confidence = Confidence(confidence_raw.strip().upper())
    except ValueError:
        raise BadEnum("confidence", confidence_raw) from None
    reasoning = obj["reasoning"]
    if not isinstance(reasoning, str) or not reasoning.strip():
        raise MissingField("reasoning")
    return verdict, confidence, reasoning


def validate_response(
    raw: str,
    finding_id: str = "",
    latency_ms: int = 0,
    attempt_count: int = 1,
) -> Adjudication:
    """Validate a model response against the closed verdict schema.

    Strict pass first: the response must be exactly one JSON object with
    ``verdict``, ``confidence``, and ``reasoning`` (enum values accepted
    case-insensitively). On a strict JSON failure, one salvage pass extracts
    the outermost object from surrounding prose and re-validates, setting
    ``salvaged``. Anything else raises ``NotJson``, ``MissingField``, or
    ``BadEnum``.
    """
    salvaged = False
    try:
        obj = json.loads(raw.strip())
    except json.JSONDecodeError:
        candidate = _extract_outer_object(raw)  # may raise NotJson
        try:
            obj = json.loads(candidate)
        except json.JSONDecodeError as exc:
            raise NotJson(f"salvaged substring is not valid JSON: {exc}") from exc
        salvaged = True
    verdict, confidence, reasoning = _validate_object(obj)
    return Adjudication(
        finding_id=finding_id,
        verdict=verdict,
        confidence=confidence,
        reasoning=reasoning,
        salvaged=salvaged,
        raw_response=raw,
        latency_ms=latency_ms,
        attempt_count=attempt_count,
    )


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _adjudicate_one(
    bundle: PromptBundle,
    backend: Backend,
    model: str,
    retry: RetryPolicy,
    max_output_chars: int,
) -> tuple[AdjudicationResult, AuditRecord]:
    mode = bundle.mode.value
    requested_at = _utc_now()
    request = BackendRequest(
        model=model,
        system_text=bundle.system_text,
        user_text=bundle.user_text,
        max_output_chars=max_output_chars,
        tag=f"{bundle.finding_id}.{mode}",
    )
    raw: str | None = None
    latency_ms = 0
    attempts = 0
    try:
        result: SendResult = send(request, backend, retry)
        raw, latency_ms, attempts = result.text, result.latency_ms, result.attempt_count
        if len(raw) > max_output_chars:
            raise ResponseValidationError(
                f"response is {len(raw)} chars, limit is {max_output_chars}"
            )
        adjudication = validate_response(
            raw, finding_id=bundle.finding_id, latency_ms=latency_ms, attempt_count=attempts
        )
    except (BackendError, ResponseValidationError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        result_row = AdjudicationResult(
            finding_id=bundle.finding_id,
            mode=mode,
            status=STATUS_UNEVALUATED,
            error=error,
        )
        audit = AuditRecord(
            finding_id=bundle.finding_id,
            mode=mode,
            prompt_sha256=bundle.prompt_sha256,
            model=model,
            requested_at=requested_at,
            raw_response=raw,
            status=STATUS_UNEVALUATED,
            parsed=None,
            error=error,
            latency_ms=latency_ms,
            attempt_count=attempts,
        )
        return result_row, audit

    result_row = AdjudicationResult(
        finding_id=bundle.finding_id,
        mode=mode,
        status=STATUS_OK,
        adjudication=adjudication,
    )
    audit = AuditRecord(
        finding_id=bundle.finding_id,
        mode=mode,
        prompt_sha256=bundle.prompt_sha256,
        model=model,
        requested_at=requested_at,
        raw_response=raw,
        status=STATUS_OK,
        parsed={
            "verdict": adjudication.verdict.value,
            "confidence": adjudication.confidence.value,
            "reasoning": adjudication.reasoning,
            "salvaged": adjudication.salvaged,
        },
        error=None,
        latency_ms=latency_ms,
        attempt_count=attempts,
    )
    return result_row, audit


def adjudicate_all(
    bundles: list[PromptBundle],
    backend: Backend,
    parallelism: int = 1,
    model: str = "mock",
    retry: RetryPolicy | None = None,
    max_output_chars: int = 16384,
) -> tuple[list[AdjudicationResult], list[AuditRecord]]:
    """Adjudicate every bundle exactly once.

    At most ``parallelism`` calls are in flight; output order equals input
    order regardless of completion order, and one audit record exists per
    bundle whatever happens.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    retry = retry or RetryPolicy()

    def work(bundle: PromptBundle) -> tuple[AdjudicationResult, AuditRecord]:
        return _adjudicate_one(bundle, backend, model, retry, max_output_chars)

    if parallelism == 1 or len(bundles) <= 1:
        pairs = [work(b) for b in bundles]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            pairs = list(pool.map(work, bundles))

    results = [pair[0] for pair in pairs]
    audits = [pair[1] for pair in pairs]
    return results, audits


def write_adjudications_jsonl(results: list[AdjudicationResult], path: Path | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for row in results:
            fh.write(json.dumps(row.to_dict(), ensure_ascii=False) + "\n")


def load_adjudications_jsonl(path: Path | str) -> list[AdjudicationResult]:
    rows = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(AdjudicationResult.from_dict(json.loads(line)))
    return rows
