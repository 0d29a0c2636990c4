from __future__ import annotations

import random

import pytest

from sarif_triage.adjudicate import (
    Adjudication,
    AdjudicationResult,
    Confidence,
    STATUS_OK,
    STATUS_UNEVALUATED,
    Verdict,
)
from sarif_triage.evaluate import (
    ConfusionCounts,
    GroundTruth,
    Label,
    MismatchedSets,
    Outcome,
    aggregate,
    build_report,
    compare_modes,
    counts_from_outcomes,
    f1,
    f1_delta,
    match_truth,
    metrics_from_counts,
    score,
    ScoredFinding,
)
from sarif_triage.ingest import CodeLocation, Finding


def test_score_definitions():
    assert score(Verdict.FALSE_POSITIVE, Label.FALSE_POSITIVE) is Outcome.TP
    assert score(Verdict.FALSE_POSITIVE, Label.TRUE_VULNERABILITY) is Outcome.FP
    assert score(Verdict.TRUE_POSITIVE, Label.FALSE_POSITIVE) is Outcome.FN
    assert score(Verdict.TRUE_POSITIVE, Label.TRUE_VULNERABILITY) is Outcome.TN


def test_counts_match_brute_force_tally():
    rng = random.Random(7)
    pairs = [
        (rng.choice(list(Verdict)), rng.choice(list(Label)))
        for _ in range(10)
    ]
    outcomes = [score(v, l) for v, l in pairs]
    counts = counts_from_outcomes(outcomes)
    brute = {o: sum(1 for x in outcomes if x is o) for o in Outcome}
    assert counts.tp == brute[Outcome.TP]
    assert counts.fp == brute[Outcome.FP]
    assert counts.tn == brute[Outcome.TN]
    assert counts.fn == brute[Outcome.FN]
    assert counts.total == 10


@pytest.mark.parametrize(
    "p,r,expected",
    [
        (0.976, 0.855, 0.912),
        (1.000, 0.914, 0.955),
        (1.0, 1.0, 1.0),
    ],
)
def test_f1_reproduces_reported_values(p, r, expected):
    assert abs(f1(p, r) - expected) <= 0.005


def test_f1_zero_denominators():
    assert f1(0.0, 0.0) == 0.0
    zero = metrics_from_counts(ConfusionCounts())
    assert zero.precision == 0.0 and zero.recall == 0.0 and zero.f1 == 0.0


def test_aggregate_micro_sums_counts_before_metrics():
    scored = (
        [ScoredFinding("a", "CWE-089", "OPTIMIZED", Outcome.TP)] * 2
        + [ScoredFinding("b", "CWE-089", "OPTIMIZED", Outcome.FN)] * 1
        + [ScoredFinding("c", "CWE-079", "OPTIMIZED", Outcome.TP)] * 3
        + [ScoredFinding("d", "CWE-079", "OPTIMIZED", Outcome.FP)] * 1
    )
    overall = aggregate(scored, "overall")["overall"]
    # Hand computation: tp=5, fp=1, fn=1 -> P = R = 5/6
    assert overall.counts == ConfusionCounts(tp=5, fp=1, tn=0, fn=1)
    assert overall.precision == pytest.approx(5 / 6)
    assert overall.recall == pytest.approx(5 / 6)
    assert overall.f1 == pytest.approx(5 / 6)
    per_cwe = aggregate(scored, "cwe")
    assert per_cwe["CWE-089"].counts == ConfusionCounts(tp=2, fp=0, tn=0, fn=1)
    assert per_cwe["CWE-079"].counts == ConfusionCounts(tp=3, fp=1, tn=0, fn=0)


def test_empty_outcomes_give_zero_report():
    assert aggregate([], "overall") == {}
    assert metrics_from_counts(counts_from_outcomes([])).f1 == 0.0


def test_single_group_equals_overall():
    scored = [
        ScoredFinding("a", "CWE-089", "OPTIMIZED", Outcome.TP),
        ScoredFinding("b", "CWE-089", "OPTIMIZED", Outcome.TN),
    ]
    assert aggregate(scored, "cwe")["CWE-089"] == aggregate(scored, "overall")["overall"]


def _loc(uri="A.java", line=3):
    return CodeLocation(uri=uri, start_line=line, end_line=line)


def _finding(fid, cwe="CWE-089", rule="r", uri="A.java", line=3):
    return Finding(
        finding_id=fid,
        rule_id=rule,
        cwe_id=cwe,
        message="m",
        primary_location=_loc(uri, line),
        trace=(),
        origin_index=0,
    )


def _ok(fid, verdict, mode="OPTIMIZED"):
    return AdjudicationResult(
        finding_id=fid,
        mode=mode,
        status=STATUS_OK,
        adjudication=Adjudication(
            finding_id=fid,
            verdict=verdict,
            confidence=Confidence.HIGH,
            reasoning="r",
            salvaged=False,
            raw_response="{}",
            latency_ms=0,
            attempt_count=1,
        ),
    )


def test_match_precedence_finding_id_then_triple():
    findings = [
        _finding("f1", uri="A.java", line=1),
        _finding("f2", uri="B.java", line=2),
    ]
    truths = [
        GroundTruth(label=Label.FALSE_POSITIVE, finding_id="f1"),
        GroundTruth(label=Label.TRUE_VULNERABILITY, rule_id="r", uri="B.java", start_line=2),
    ]
    matched = match_truth(findings, truths)
    assert matched["f1"].label is Label.FALSE_POSITIVE
    assert matched["f2"].label is Label.TRUE_VULNERABILITY


def test_ambiguous_triple_stays_unmatched():
    findings = [
        _finding("f1", uri="A.java", line=1),
        _finding("f2", uri="A.java", line=1),  # same triple
    ]
    truths = [GroundTruth(label=Label.FALSE_POSITIVE, rule_id="r", uri="A.java", start_line=1)]
    assert match_truth(findings, truths) == {}

    report = build_report(findings, [_ok("f1", Verdict.FALSE_POSITIVE)], truths, "OPTIMIZED")
    assert report.unmatched_count == 1
    assert report.overall.counts.total == 0


def test_build_report_conserves_counts_and_routes_statuses():
    findings = [_finding(f"f{i}", cwe="CWE-089" if i < 3 else "CWE-022", uri=f"F{i}.java") for i in range(5)]
    truths = [
        GroundTruth(label=Label.FALSE_POSITIVE, finding_id="f0"),
        GroundTruth(label=Label.TRUE_VULNERABILITY, finding_id="f1"),
        GroundTruth(label=Label.FALSE_POSITIVE, finding_id="f2"),
        # f3 has no label -> unmatched
    ]
    results = [
        _ok("f0", Verdict.FALSE_POSITIVE),  # TP
        _ok("f1", Verdict.FALSE_POSITIVE),  # FP
        _ok("f2", Verdict.TRUE_POSITIVE),  # FN
        _ok("f3", Verdict.TRUE_POSITIVE),  # unmatched
        AdjudicationResult(finding_id="f4", mode="OPTIMIZED", status=STATUS_UNEVALUATED, error="boom"),
    ]
    report = build_report(findings, results, truths, "OPTIMIZED")
    counts = report.overall.counts
    assert (counts.tp, counts.fp, counts.tn, counts.fn) == (1, 1, 0, 1)
    assert report.unevaluated_count == 1
    assert report.unmatched_count == 1
    assert counts.total + report.unevaluated_count + report.unmatched_count == len(results)
    # overall equals the sum of per-CWE counts
    summed = ConfusionCounts()
    for metrics in report.per_cwe.values():
        summed = summed + metrics.counts
    assert summed == counts


def test_per_cwe_table_is_in_report_order():
    findings = [
        _finding("f1", cwe="CWE-643", uri="A.java", line=1),
        _finding("f2", cwe="CWE-022", uri="B.java", line=2),
        _finding("f3", cwe="CWE-ZZZ", uri="C.java", line=3),
    ]
    truths = [GroundTruth(label=Label.FALSE_POSITIVE, finding_id=f"f{i}") for i in (1, 2, 3)]
    results = [_ok(f"f{i}", Verdict.FALSE_POSITIVE) for i in (1, 2, 3)]
    report = build_report(findings, results, truths, "OPTIMIZED")
    assert list(report.per_cwe) == ["CWE-022", "CWE-643", "CWE-ZZZ"]


def _report_with_f1(value, total=10, cwe_f1s=None):
    counts = ConfusionCounts(tp=1)
    metrics = metrics_from_counts(counts)
    overall = type(metrics)(counts=counts, precision=value, recall=value, f1=value)
    per_cwe = {}
    for cwe, v in (cwe_f1s or {}).items():
        per_cwe[cwe] = type(metrics)(counts=counts, precision=v, recall=v, f1=v)
    from sarif_triage.evaluate import EvalReport

    return EvalReport(
        mode="X",
        overall=overall,
        per_cwe=per_cwe,
        unevaluated_count=0,
        unmatched_count=0,
        total_findings=total,
    )


def test_compare_modes_reports_signed_deltas():
    baseline = _report_with_f1(0.690)
    optimized = _report_with_f1(0.884)
    rows = compare_modes(baseline, optimized)
    assert rows[0].group == "overall"
    assert rows[0].delta == pytest.approx(0.194)
    assert rows[0].rendered() == "+0.194"


def test_compare_modes_zero_delta_on_equal_reports():
    report = _report_with_f1(0.5, cwe_f1s={"CWE-089": 0.5})
    rows = compare_modes(report, report)
    assert all(row.delta == 0.0 for row in rows)


def test_compare_modes_small_positive_delta():
    rows = compare_modes(_report_with_f1(0.892), _report_with_f1(0.910))
    assert rows[0].rendered() == "+0.018"


def test_compare_modes_rejects_mismatched_sets():
    with pytest.raises(MismatchedSets):
        compare_modes(_report_with_f1(0.5, total=10), _report_with_f1(0.5, total=11))
    with pytest.raises(MismatchedSets):
        compare_modes(
            _report_with_f1(0.5, cwe_f1s={"CWE-089": 0.4}),
            _report_with_f1(0.5, cwe_f1s={"CWE-022": 0.4}),
        )


def test_f1_delta_rounds_to_three_decimals():
    assert f1_delta(0.690, 0.884) == 0.194
    assert f1_delta(0.895, 0.791) == -0.104


def test_f1_bounds_hold_on_random_counts():
    rng = random.Random(20250808)
    for _ in range(200):
        counts = ConfusionCounts(
            tp=rng.randint(0, 50), fp=rng.randint(0, 50),
            tn=rng.randint(0, 50), fn=rng.randint(0, 50),
        )
        m = metrics_from_counts(counts)
        assert 0.0 <= m.f1 <= 1.0
        assert m.f1 <= max(m.precision, m.recall) + 1e-12
        assert m.f1 >= min(m.precision, m.recall) - 1e-12 or m.f1 == 0.0
