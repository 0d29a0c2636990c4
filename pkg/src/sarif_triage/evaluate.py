"""Scoring adjudications against ground truth.

The task is false-positive identification, so the positive class is
FALSE_POSITIVE: a true positive here means the model correctly flagged a
spurious alert. Metrics are micro-aggregated (counts summed within a group
before precision/recall/F1 are computed) and printed at three decimals.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

from .adjudicate import AdjudicationResult, STATUS_OK, Verdict
from .ingest import Finding

#: Canonical per-CWE reporting order; unknown CWEs follow alphabetically.
CWE_REPORT_ORDER = (
    "CWE-022",
    "CWE-078",
    "CWE-079",
    "CWE-089",
    "CWE-090",
    "CWE-327",
    "CWE-330",
    "CWE-501",
    "CWE-614",
    "CWE-643",
)


class Label(str, Enum):
    TRUE_VULNERABILITY = "TRUE_VULNERABILITY"
    FALSE_POSITIVE = "FALSE_POSITIVE"


class Outcome(str, Enum):
    TP = "TP"
    FP = "FP"
    TN = "TN"
    FN = "FN"


class MismatchedSets(ValueError):
    """compare_modes was given reports over different finding sets."""


@dataclass(frozen=True)
class GroundTruth:
    label: Label
    finding_id: str | None = None
    rule_id: str | None = None
    uri: str | None = None
    start_line: int | None = None

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "GroundTruth":
        return cls(
            label=Label(d["label"]),
            finding_id=d.get("finding_id"),
            rule_id=d.get("rule_id"),
            uri=d.get("uri"),
            start_line=d.get("start_line"),
        )


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class GroupMetrics:
    counts: ConfusionCounts
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "tn": self.counts.tn,
            "fn": self.counts.fn,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }


@dataclass(frozen=True)
class ScoredFinding:
    finding_id: str
    cwe_id: str
    mode: str
    outcome: Outcome


@dataclass(frozen=True)
class EvalReport:
    mode: str
    overall: GroupMetrics
    per_cwe: dict[str, GroupMetrics]
    unevaluated_count: int
    unmatched_count: int
    total_findings: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "overall": self.overall.to_dict(),
            "per_cwe": {cwe: m.to_dict() for cwe, m in self.per_cwe.items()},
            "unevaluated_count": self.unevaluated_count,
            "unmatched_count": self.unmatched_count,
            "total_findings": self.total_findings,
        }


def score(verdict: Verdict, label: Label) -> Outcome:
    """Classify one matched (verdict, label) pair. Positive class is the
    FALSE_POSITIVE verdict."""
    says_fp = verdict is Verdict.FALSE_POSITIVE
    is_fp = label is Label.FALSE_POSITIVE
    if says_fp and is_fp:
        return Outcome.TP
    if says_fp and not is_fp:
        return Outcome.FP
    if not says_fp and is_fp:
        return Outcome.FN
    return Outcome.TN


def precision(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fp
    return counts.tp / denom if denom else 0.0


def recall(counts: ConfusionCounts) -> float:
    denom = counts.tp + counts.fn
    return counts.tp / denom if denom else 0.0


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if (p + r) else 0.0


def metrics_from_counts(counts: ConfusionCounts) -> GroupMetrics:
    p = precision(counts)
    r = recall(counts)
    return GroupMetrics(counts=counts, precision=p, recall=r, f1=f1(p, r))


def counts_from_outcomes(outcomes: Iterable[Outcome]) -> ConfusionCounts:
    tally = {o: 0 for o in Outcome}
    for outcome in outcomes:
        tally[outcome] += 1
    return ConfusionCounts(
        tp=tally[Outcome.TP], fp=tally[Outcome.FP], tn=tally[Outcome.TN], fn=tally[Outcome.FN]
    )


def aggregate(scored: list[ScoredFinding], group: str) -> dict[str, GroupMetrics]:
    """Micro-aggregate scored findings by ``group``: "overall", "cwe", or
    "mode". Counts are summed within each group before metrics."""
    if group == "overall":
        keyfn = lambda s: "overall"
    elif group == "cwe":
        keyfn = lambda s: s.cwe_id
    elif group == "mode":
        keyfn = lambda s: s.mode
    else:
        raise ValueError(f"unknown group key: {group}")
    buckets: dict[str, list[Outcome]] = {}
    for item in scored:
        buckets.setdefault(keyfn(item), []).append(item.outcome)
    return {key: metrics_from_counts(counts_from_outcomes(v)) for key, v in buckets.items()}


def cwe_sort_key(cwe_id: str) -> tuple[int, str]:
    try:
        return (CWE_REPORT_ORDER.index(cwe_id), cwe_id)
    except ValueError:
        return (len(CWE_REPORT_ORDER), cwe_id)


def match_truth(
    findings: list[Finding], truths: list[GroundTruth]
) -> dict[str, GroundTruth]:
    """Resolve ground truth per finding id.

    Exact finding_id match wins; otherwise the (rule_id, uri, start_line)
    triple is tried. A triple shared by several findings or several truth
    entries is ambiguous and stays unmatched.
    """
    by_id: dict[str, GroundTruth] = {}
    triple_truths: dict[tuple[str, str, int], list[GroundTruth]] = {}
    for truth in truths:
        if truth.finding_id:
            by_id[truth.finding_id] = truth
        elif truth.rule_id and truth.uri and truth.start_line is not None:
            key = (truth.rule_id, truth.uri, truth.start_line)
            triple_truths.setdefault(key, []).append(truth)

    triple_findings: dict[tuple[str, str, int], list[str]] = {}
    for f in findings:
        key = (f.rule_id, f.primary_location.uri, f.primary_location.start_line)
        triple_findings.setdefault(key, []).append(f.finding_id)

    matched: dict[str, GroundTruth] = {}
    for f in findings:
        if f.finding_id in by_id:
            matched[f.finding_id] = by_id[f.finding_id]
            continue
        key = (f.rule_id, f.primary_location.uri, f.primary_location.start_line)
        candidates = triple_truths.get(key, [])
        if len(candidates) == 1 and len(triple_findings[key]) == 1:
            matched[f.finding_id] = candidates[0]
    return matched


def build_report(
    findings: list[Finding],
    results: list[AdjudicationResult],
    truths: list[GroundTruth],
    mode: str,
) -> EvalReport:
    """Join adjudication results with labels and aggregate.

    Conservation: scored (tp+fp+tn+fn) + unevaluated + unmatched equals the
    number of results passed in. Unevaluated findings never enter metric
    denominators; unmatched adjudications are counted, never scored.
    """
    by_fid = {f.finding_id: f for f in findings}
    matched = match_truth(findings, truths)

    scored: list[ScoredFinding] = []
    unevaluated = 0
    unmatched = 0
    for row in results:
        if row.status != STATUS_OK or row.adjudication is None:
            unevaluated += 1
            continue
        truth = matched.get(row.finding_id)
        if truth is None:
            unmatched += 1
            continue
        finding = by_fid.get(row.finding_id)
        cwe = finding.cwe_id if finding is not None else "CWE-UNKNOWN"
        scored.append(
            ScoredFinding(
                finding_id=row.finding_id,
                cwe_id=cwe,
                mode=mode,
                outcome=score(row.adjudication.verdict, truth.label),
            )
        )

    per_cwe_raw = aggregate(scored, "cwe")
    per_cwe = {
        cwe: per_cwe_raw[cwe] for cwe in sorted(per_cwe_raw, key=cwe_sort_key)
    }
    overall = metrics_from_counts(counts_from_outcomes(s.outcome for s in scored))
    return EvalReport(
        mode=mode,
        overall=overall,
        per_cwe=per_cwe,
        unevaluated_count=unevaluated,
        unmatched_count=unmatched,
        total_findings=len(results),
    )


@dataclass(frozen=True)
class DeltaRow:
    group: str
    baseline_f1: float
    optimized_f1: float
    delta: float  # optimized - baseline, rounded to 3 decimals

    @property
    def marker(self) -> str:
        if self.delta > 0:
            return "up"
        if self.delta < 0:
            return "down"
        return "flat"

    def rendered(self) -> str:
        return f"{self.delta:+.3f}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "group": self.group,
            "baseline_f1": self.baseline_f1,
            "optimized_f1": self.optimized_f1,
            "delta": self.delta,
            "direction": self.marker,
        }


def f1_delta(baseline_f1: float, optimized_f1: float) -> float:
    return round(optimized_f1 - baseline_f1, 3)


def compare_modes(
    report_baseline: EvalReport, report_optimized: EvalReport
) -> list[DeltaRow]:
    """Per-group F1 deltas (optimized minus baseline), overall first then
    per CWE in reporting order. Raises ``MismatchedSets`` when the reports
    cover different finding sets."""
    if report_baseline.total_findings != report_optimized.total_findings:
        raise MismatchedSets(
            f"baseline covers {report_baseline.total_findings} findings, "
            f"optimized covers {report_optimized.total_findings}"
        )
    if set(report_baseline.per_cwe) != set(report_optimized.per_cwe):
        raise MismatchedSets("per-CWE groups differ between reports")
    rows = [
        DeltaRow(
            group="overall",
            baseline_f1=report_baseline.overall.f1,
            optimized_f1=report_optimized.overall.f1,
            delta=f1_delta(report_baseline.overall.f1, report_optimized.overall.f1),
        )
    ]
    for cwe in sorted(report_baseline.per_cwe, key=cwe_sort_key):
        base = report_baseline.per_cwe[cwe]
        opt = report_optimized.per_cwe[cwe]
        rows.append(
            DeltaRow(
                group=cwe,
                baseline_f1=base.f1,
                optimized_f1=opt.f1,
                delta=f1_delta(base.f1, opt.f1),
            )
        )
    return rows


def load_labels_jsonl(path: Path | str) -> list[GroundTruth]:
    truths = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                truths.append(GroundTruth.from_dict(json.loads(line)))
    return truths


def _metrics_line(name: str, m: GroupMetrics) -> str:
    return (
        f"{name:<14} tp={m.counts.tp:<5} fp={m.counts.fp:<5} tn={m.counts.tn:<5} "
        f"fn={m.counts.fn:<5} P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f}"
    )


def render_report_text(
    reports: dict[str, EvalReport], deltas: list[DeltaRow] | None = None
) -> str:
    lines: list[str] = []
    for mode in sorted(reports):
        report = reports[mode]
        lines.append(f"== {mode} ==")
        lines.append(_metrics_line("overall", report.overall))
        for cwe, metrics in report.per_cwe.items():
            lines.append(_metrics_line(cwe, metrics))
        lines.append(
            f"unevaluated={report.unevaluated_count} unmatched={report.unmatched_count} "
            f"total={report.total_findings}"
        )
        lines.append("")
    if deltas is not None:
        lines.append("== mode delta (optimized - baseline F1) ==")
        for row in deltas:
            lines.append(
                f"{row.group:<14} baseline={row.baseline_f1:.3f} "
                f"optimized={row.optimized_f1:.3f} delta={row.rendered()}"
            )
        lines.append("")
    return "\n".join(lines)


def write_report_csv(reports: dict[str, EvalReport], path: Path | str) -> None:
    """Per-CWE metric rows, one per (mode, cwe), for heatmap plotting."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "group", "tp", "fp", "tn", "fn", "precision", "recall", "f1"])
        for mode in sorted(reports):
            report = reports[mode]
            rows = [("overall", report.overall)] + list(report.per_cwe.items())
            for group, m in rows:
                writer.writerow(
                    [
                        mode,
                        group,
                        m.counts.tp,
                        m.counts.fp,
                        m.counts.tn,
                        m.counts.fn,
                        f"{m.precision:.3f}",
                        f"{m.recall:.3f}",
                        f"{m.f1:.3f}",
                    ]
                )
