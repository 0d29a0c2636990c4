"""SARIF 2.1.0 ingestion.

Parses analyzer output and canonicalizes every result into a ``Finding``: a
stable-identity record carrying the rule id, a normalized CWE id, the
diagnostic message, the primary location, and the ordered source-to-sink
trace taken from the result's first code flow.

Only ``codeFlows[0].threadFlows[0]`` is consumed; additional flows are
counted in ``Finding.extra_flow_count`` but not otherwise retained.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping


class MalformedJson(ValueError):
    """The input bytes are not valid JSON."""


class NotSarif(ValueError):
    """The input is JSON but not a usable SARIF 2.1.0 document."""


CWE_UNKNOWN = "CWE-UNKNOWN"

_CWE_IN_TAG = re.compile(r"cwe[/-](\d+)", re.IGNORECASE)
_CWE_ID = re.compile(r"^CWE-(\d+)$", re.IGNORECASE)


def normalize_cwe(value: str) -> str:
    """Normalize a CWE spelling to ``CWE-NNN`` with at least three digits.

    Accepts bare numbers ("89"), prefixed ids ("cwe-89"), or analyzer tag
    strings ("external/cwe/cwe-089"). Unrecognizable input degrades to
    ``CWE-UNKNOWN``.
    """
    text = value.strip()
    m = _CWE_ID.match(text)
    if m is None:
        m = _CWE_IN_TAG.search(text)
    if m is None:
        if text.isdigit():
            return f"CWE-{text.zfill(3)}"
        return CWE_UNKNOWN
    return f"CWE-{m.group(1).zfill(3)}"


class StepKind(str, Enum):
    SOURCE = "SOURCE"
    STEP = "STEP"
    SINK = "SINK"


@dataclass(frozen=True)
class CodeLocation:
    """A physical source location. Lines and columns are 1-based; the end
    column is exclusive, following the SARIF region convention."""

    uri: str
    start_line: int
    end_line: int
    start_column: int | None = None
    end_column: int | None = None

    def __post_init__(self) -> None:
        if self.start_line < 1:
            raise ValueError(f"start_line must be >= 1, got {self.start_line}")
        if self.end_line < self.start_line:
            raise ValueError(
                f"end_line {self.end_line} precedes start_line {self.start_line}"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "uri": self.uri,
            "start_line": self.start_line,
            "end_line": self.end_line,
            "start_column": self.start_column,
            "end_column": self.end_column,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "CodeLocation":
        return cls(
            uri=d["uri"],
            start_line=d["start_line"],
            end_line=d["end_line"],
            start_column=d.get("start_column"),
            end_column=d.get("end_column"),
        )


@dataclass(frozen=True)
class TraceStep:
    """One step of a source-to-sink flow."""

    index: int  # 1-based position in the trace
    kind: StepKind
    location: CodeLocation
    step_message: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "kind": self.kind.value,
            "location": self.location.to_dict(),
            "step_message": self.step_message,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TraceStep":
        return cls(
            index=d["index"],
            kind=StepKind(d["kind"]),
            location=CodeLocation.from_dict(d["location"]),
            step_message=d.get("step_message", ""),
        )


@dataclass(frozen=True)
class Finding:
    """One canonicalized static-analysis alert."""

    finding_id: str
    rule_id: str
    cwe_id: str
    message: str
    primary_location: CodeLocation
    trace: tuple[TraceStep, ...]
    origin_index: int
    extra_flow_count: int = 0

    def to_dict(self) -> dict[str, Any]:
        # Key order is fixed and documented; findings.jsonl relies on it.
        return {
            "finding_id": self.finding_id,
            "rule_id": self.rule_id,
            "cwe_id": self.cwe_id,
            "message": self.message,
            "primary_location": self.primary_location.to_dict(),
            "trace": [s.to_dict() for s in self.trace],
            "origin_index": self.origin_index,
            "extra_flow_count": self.extra_flow_count,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Finding":
        return cls(
            finding_id=d["finding_id"],
            rule_id=d["rule_id"],
            cwe_id=d["cwe_id"],
            message=d["message"],
            primary_location=CodeLocation.from_dict(d["primary_location"]),
            trace=tuple(TraceStep.from_dict(s) for s in d.get("trace", [])),
            origin_index=d["origin_index"],
            extra_flow_count=d.get("extra_flow_count", 0),
        )


@dataclass(frozen=True)
class ThreadFlowStep:
    """A raw threadFlow location prior to canonicalization."""

    location: CodeLocation
    message: str


@dataclass(frozen=True)
class SarifResult:
    rule_id: str
    message: str
    locations: tuple[CodeLocation, ...]
    thread_flow: tuple[ThreadFlowStep, ...]
    code_flow_count: int


@dataclass(frozen=True)
class SarifRun:
    tool_name: str
    rule_cwes: Mapping[str, str]  # rule id -> normalized CWE, from driver metadata
    results: tuple[SarifResult, ...]


@dataclass(frozen=True)
class SarifDocument:
    version: str
    runs: tuple[SarifRun, ...]

    @property
    def result_count(self) -> int:
        return sum(len(run.results) for run in self.runs)


def _normalize_uri(uri: str) -> str:
    uri = uri.replace("\\", "/")
    if uri.startswith("file://"):
        uri = uri[len("file://"):]
    if uri.startswith("./"):
        uri = uri[2:]
    return uri


def _location_from_sarif(obj: Mapping[str, Any], where: str) -> CodeLocation:
    phys = obj.get("physicalLocation")
    if not isinstance(phys, dict):
        raise NotSarif(f"{where}: missing physicalLocation")
    artifact = phys.get("artifactLocation", {})
    uri = artifact.get("uri")
    if not uri:
        raise NotSarif(f"{where}: missing artifactLocation.uri")
    region = phys.get("region", {})
    start_line = region.get("startLine")
    if not isinstance(start_line, int):
        raise NotSarif(f"{where}: missing region.startLine")
    end_line = region.get("endLine", start_line)
    return CodeLocation(
        uri=_normalize_uri(uri),
        start_line=start_line,
        end_line=end_line,
        start_column=region.get("startColumn"),
        end_column=region.get("endColumn"),
    )


def _rule_cwes_from_driver(driver: Mapping[str, Any]) -> dict[str, str]:
    out: dict[str, str] = {}
    for rule in driver.get("rules", []) or []:
        rule_id = rule.get("id")
        if not rule_id:
            continue
        tags = (rule.get("properties") or {}).get("tags", []) or []
        for tag in tags:
            cwe = normalize_cwe(str(tag))
            if cwe != CWE_UNKNOWN:
                out[rule_id] = cwe
                break
    return out


def _parse_result(obj: Mapping[str, Any], where: str) -> SarifResult:
    rule_id = obj.get("ruleId")
    if not rule_id:
        raise NotSarif(f"{where}: missing ruleId")
    message = (obj.get("message") or {}).get("text", "")
    raw_locations = obj.get("locations") or []
    if not raw_locations:
        raise NotSarif(f"{where}: result has no locations")
    locations = tuple(
        _location_from_sarif(loc, f"{where}.locations[{i}]")
        for i, loc in enumerate(raw_locations)
    )

    code_flows = obj.get("codeFlows") or []
    steps: list[ThreadFlowStep] = []
    if code_flows:
        thread_flows = (code_flows[0].get("threadFlows") or [])
        if thread_flows:
            for j, tfl in enumerate(thread_flows[0].get("locations") or []):
                loc_obj = tfl.get("location") or {}
                location = _location_from_sarif(
                    loc_obj, f"{where}.codeFlows[0].threadFlows[0].locations[{j}]"
                )
                step_message = (loc_obj.get("message") or {}).get("text", "")
                steps.append(ThreadFlowStep(location=location, message=step_message))
    return SarifResult(
        rule_id=rule_id,
        message=message,
        locations=locations,
        thread_flow=tuple(steps),
        code_flow_count=len(code_flows),
    )


def parse_sarif(raw: bytes | str) -> SarifDocument:
    """Parse a SARIF 2.1.0 document.

    Raises ``MalformedJson`` for byte streams that are not JSON and
    ``NotSarif`` for JSON that violates the SARIF shape this pipeline
    depends on (missing ``runs``, results without ``ruleId`` or locations,
    thread-flow steps without a physical location).
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson(f"input is not UTF-8: {exc}") from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise MalformedJson(f"input is not JSON: {exc}") from exc

    if not isinstance(data, dict):
        raise NotSarif("top-level value is not an object")
    if "runs" not in data or not isinstance(data["runs"], list):
        raise NotSarif("missing `runs` array")
    version = data.get("version")
    if not isinstance(version, str) or not version:
        raise NotSarif("missing `version` string")

    runs: list[SarifRun] = []
    for r, run_obj in enumerate(data["runs"]):
        if not isinstance(run_obj, dict):
            raise NotSarif(f"runs[{r}] is not an object")
        driver = (run_obj.get("tool") or {}).get("driver") or {}
        tool_name = driver.get("name", "unknown")
        results = tuple(
            _parse_result(res, f"runs[{r}].results[{i}]")
            for i, res in enumerate(run_obj.get("results") or [])
        )
        runs.append(
            SarifRun(
                tool_name=tool_name,
                rule_cwes=_rule_cwes_from_driver(driver),
                results=results,
            )
        )
    return SarifDocument(version=version, runs=tuple(runs))


def _identity_payload(
    rule_id: str,
    primary_location: CodeLocation,
    trace_locations: Iterable[CodeLocation],
    origin_index: int,
) -> str:
    return json.dumps(
        {
            "rule_id": rule_id,
            "primary_location": primary_location.to_dict(),
            "trace": [loc.to_dict() for loc in trace_locations],
            "origin_index": origin_index,
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def compute_finding_id(
    rule_id: str,
    primary_location: CodeLocation,
    trace_locations: Iterable[CodeLocation],
    origin_index: int,
) -> str:
    """SHA-256 (lowercase hex) over the canonical identity of a finding:
    rule id, primary location, ordered trace locations, origin index."""
    payload = _identity_payload(rule_id, primary_location, trace_locations, origin_index)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def finding_id(f: Finding) -> str:
    """Recompute the content id of a finding from its identity fields."""
    return compute_finding_id(
        f.rule_id, f.primary_location, (s.location for s in f.trace), f.origin_index
    )


def _step_kind(index: int, length: int) -> StepKind:
    # Degenerate single-step traces render as SOURCE only.
    if index == 1:
        return StepKind.SOURCE
    if index == length:
        return StepKind.SINK
    return StepKind.STEP


def canonicalize(
    doc: SarifDocument, cwe_map: Mapping[str, str] | None = None
) -> list[Finding]:
    """Canonicalize every result of ``doc`` into a ``Finding``.

    One finding per result, in file order. The CWE id is resolved from the
    rule's driver metadata tags, then from ``cwe_map``, else degrades to
    ``CWE-UNKNOWN``; canonicalization never drops a result.
    """
    cwe_map = cwe_map or {}
    findings: list[Finding] = []
    origin_index = 0
    for run in doc.runs:
        for result in run.results:
            cwe = run.rule_cwes.get(result.rule_id)
            if cwe is None and result.rule_id in cwe_map:
                cwe = normalize_cwe(cwe_map[result.rule_id])
            if cwe is None:
                cwe = CWE_UNKNOWN
            length = len(result.thread_flow)
            trace = tuple(
                TraceStep(
                    index=i + 1,
                    kind=_step_kind(i + 1, length),
                    location=step.location,
                    step_message=step.message,
                )
                for i, step in enumerate(result.thread_flow)
            )
            primary = result.locations[0]
            fid = compute_finding_id(
                result.rule_id, primary, (s.location for s in trace), origin_index
            )
            findings.append(
                Finding(
                    finding_id=fid,
                    rule_id=result.rule_id,
                    cwe_id=cwe,
                    message=result.message,
                    primary_location=primary,
                    trace=trace,
                    origin_index=origin_index,
                    extra_flow_count=max(0, result.code_flow_count - 1),
                )
            )
            origin_index += 1
    return findings


def write_findings_jsonl(findings: Iterable[Finding], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for f in findings:
            fh.write(json.dumps(f.to_dict(), ensure_ascii=False) + "\n")


def load_findings_jsonl(path: Path) -> list[Finding]:
    findings = []
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                findings.append(Finding.from_dict(json.loads(line)))
    return findings
