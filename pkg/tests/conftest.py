from __future__ import annotations

from pathlib import Path

import pytest

from sarif_triage.ingest import Finding, canonicalize, parse_sarif

FIXTURES = Path(__file__).parent / "fixtures"
JAVA_DIR = FIXTURES / "java"
SARIF_DIR = FIXTURES / "sarif"
OWASP_SRC = FIXTURES / "src_owasp"
GOLDEN_TRACE = FIXTURES / "golden_trace_owasp205.txt"
BOUNDARY_TABLE = FIXTURES / "java_boundaries.json"


@pytest.fixture(scope="session")
def owasp_finding() -> Finding:
    doc = parse_sarif((SARIF_DIR / "owasp205.sarif").read_bytes())
    findings = canonicalize(doc)
    assert len(findings) == 1
    return findings[0]


@pytest.fixture(scope="session")
def minimal_finding() -> Finding:
    doc = parse_sarif((SARIF_DIR / "minimal.sarif").read_bytes())
    findings = canonicalize(doc)
    assert len(findings) == 1
    return findings[0]
