"""Pipeline orchestration: stage execution, artifact layout, and resume.

Artifact tree under ``output_dir``::

    run_config.json              resolved configuration echo
    findings.jsonl               one canonical finding per line
    contexts/<fid>.json          per-alert optimized context
    contexts.jsonl               combined optimized contexts
    contexts_baseline/ + .jsonl  baseline contexts (when baseline runs)
    prompts/<fid>.<mode>.txt     exact prompt bytes (system + user)
    prompts.jsonl                prompt index with hashes
    adjudications.jsonl          one verdict/UNEVALUATED row per (finding, mode)
    audit/<fid>.<mode>.json      full audit record per call
    report.json / report.txt     metrics (when labels are configured)
    .stamps/<stage>.json         input/output hashes for --resume

Each stage reads its inputs from disk, so deleting a downstream artifact
and re-running reproduces it. With the mock backend every artifact except
``audit/`` (which records wall-clock timestamps) is byte-identical across
reruns.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

from . import adjudicate as adj
from . import evaluate as ev
from .backend import Backend, HttpBackend, MockBackend, RetryPolicy
from .context import (
    BaselineMode,
    CodeContext,
    ContextLimits,
    extract_baseline_context,
    extract_context,
)
from .ingest import Finding, canonicalize, load_findings_jsonl, parse_sarif, write_findings_jsonl
from .prompts import PromptBundle, PromptMode, compile_prompt, prompt_sha256
from .rubrics import default_rubric_dir, load_rubrics, rubric_for

PROMPT_SYSTEM_HEADER = "=========SYSTEM========="
PROMPT_USER_HEADER = "==========USER=========="

STAGES = ("ingest", "context", "prompts", "adjudicate", "evaluate")


class ConfigError(ValueError):
    """Unusable run configuration; maps to exit code 2."""


class StageError(RuntimeError):
    """A pipeline stage failed; maps to exit code 1."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass
class BackendConfig:
    kind: str = "mock"  # "mock" or "live"
    endpoint: str = ""
    model: str = "mock"
    key_env: str = "SARIF_TRIAGE_API_KEY"
    script_path: str | None = None
    max_prompt_chars: int | None = None
    attempt_cap: int = 4
    backoff_base_s: float = 0.5

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "endpoint": self.endpoint,
            "model": self.model,
            "key_env": self.key_env,
            "script_path": self.script_path,
            "max_prompt_chars": self.max_prompt_chars,
            "attempt_cap": self.attempt_cap,
            "backoff_base_s": self.backoff_base_s,
        }


@dataclass
class RunConfig:
    sarif_path: Path
    source_root: Path
    output_dir: Path
    prompt_mode: str = "OPTIMIZED"  # OPTIMIZED | BASELINE | BOTH
    baseline_style: str = "WINDOW5"  # WINDOW5 | WHOLE_FILE
    backend: BackendConfig = field(default_factory=BackendConfig)
    limits: ContextLimits = field(default_factory=ContextLimits)
    prompt_char_budget: int | None = None
    max_output_chars: int = 16384
    parallelism: int = 1
    labels_path: Path | None = None
    rubric_dir: Path | None = None
    cwe_map: dict[str, str] = field(default_factory=dict)
    write_csv: bool = False

    def modes(self) -> list[PromptMode]:
        if self.prompt_mode == "BOTH":
            return [PromptMode.BASELINE, PromptMode.OPTIMIZED]
        return [PromptMode(self.prompt_mode)]

    def to_dict(self) -> dict[str, Any]:
        return {
            "sarif_path": str(self.sarif_path),
            "source_root": str(self.source_root),
            "output_dir": str(self.output_dir),
            "prompt_mode": self.prompt_mode,
            "baseline_style": self.baseline_style,
            "backend": self.backend.to_dict(),
            "limits": {
                "max_total_lines": self.limits.max_total_lines,
                "intermediate_elide_threshold": self.limits.intermediate_elide_threshold,
                "elide_head_lines": self.limits.elide_head_lines,
                "elide_tail_lines": self.limits.elide_tail_lines,
            },
            "prompt_char_budget": self.prompt_char_budget,
            "max_output_chars": self.max_output_chars,
            "parallelism": self.parallelism,
            "labels_path": None if self.labels_path is None else str(self.labels_path),
            "rubric_dir": None if self.rubric_dir is None else str(self.rubric_dir),
            "cwe_map": dict(self.cwe_map),
            "write_csv": self.write_csv,
        }


def load_config(path: Path | str, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a JSON config file and apply flag overrides (flags win)."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must contain a JSON object")
    merged = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return config_from_dict(merged, base_dir=path.parent)


def config_from_dict(data: Mapping[str, Any], base_dir: Path | None = None) -> RunConfig:
    def resolve(p: str | None) -> Path | None:
        if p is None:
            return None
        candidate = Path(p)
        if not candidate.is_absolute() and base_dir is not None:
            candidate = base_dir / candidate
        return candidate

    for required in ("sarif_path", "source_root", "output_dir"):
        if not data.get(required):
            raise ConfigError(f"config is missing required key: {required}")

    backend_data = data.get("backend", {}) or {}
    backend = BackendConfig(
        kind=backend_data.get("kind", "mock"),
        endpoint=backend_data.get("endpoint", ""),
        model=backend_data.get("model", "mock"),
        key_env=backend_data.get("key_env", "SARIF_TRIAGE_API_KEY"),
        script_path=backend_data.get("script_path"),
        max_prompt_chars=backend_data.get("max_prompt_chars"),
        attempt_cap=int(backend_data.get("attempt_cap", 4)),
        backoff_base_s=float(backend_data.get("backoff_base_s", 0.5)),
    )
    limits_data = data.get("limits", {}) or {}
    limits = ContextLimits(
        max_total_lines=int(limits_data.get("max_total_lines", 400)),
        intermediate_elide_threshold=int(limits_data.get("intermediate_elide_threshold", 60)),
        elide_head_lines=int(limits_data.get("elide_head_lines", 20)),
        elide_tail_lines=int(limits_data.get("elide_tail_lines", 20)),
    )

    config = RunConfig(
        sarif_path=resolve(data["sarif_path"]),
        source_root=resolve(data["source_root"]),
        output_dir=resolve(data["output_dir"]),
        prompt_mode=str(data.get("prompt_mode", "OPTIMIZED")).upper(),
        baseline_style=str(data.get("baseline_style", "WINDOW5")).upper(),
        backend=backend,
        limits=limits,
        prompt_char_budget=data.get("prompt_char_budget"),
        max_output_chars=int(data.get("max_output_chars", 16384)),
        parallelism=int(data.get("parallelism", 1)),
        labels_path=resolve(data.get("labels_path")),
        rubric_dir=resolve(data.get("rubric_dir")),
        cwe_map={str(k): str(v) for k, v in (data.get("cwe_map") or {}).items()},
        write_csv=bool(data.get("write_csv", False)),
    )
    validate_config(config)
    return config


def validate_config(config: RunConfig) -> None:
    if config.prompt_mode not in ("OPTIMIZED", "BASELINE", "BOTH"):
        raise ConfigError(f"prompt_mode must be OPTIMIZED, BASELINE, or BOTH, got {config.prompt_mode}")
    if config.baseline_style not in ("WINDOW5", "WHOLE_FILE"):
        raise ConfigError(f"baseline_style must be WINDOW5 or WHOLE_FILE, got {config.baseline_style}")
    if config.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    if not config.sarif_path.is_file():
        raise ConfigError(f"sarif_path does not exist: {config.sarif_path}")
    if not config.source_root.is_dir():
        raise ConfigError(f"source_root does not exist: {config.source_root}")
    if config.labels_path is not None and not config.labels_path.is_file():
        raise ConfigError(f"labels_path does not exist: {config.labels_path}")
    if config.backend.kind not in ("mock", "live"):
        raise ConfigError(f"backend.kind must be mock or live, got {config.backend.kind}")
    if config.backend.kind == "mock":
        if not config.backend.script_path:
            raise ConfigError("mock backend requires backend.script_path")
        if not Path(config.backend.script_path).is_file():
            raise ConfigError(f"mock script not found: {config.backend.script_path}")
    if config.backend.kind == "live" and not config.backend.endpoint:
        raise ConfigError("live backend requires backend.endpoint")


def build_backend(config: RunConfig) -> Backend:
    if config.backend.kind == "mock":
        backend = MockBackend.from_script_file(config.backend.script_path)
        if config.backend.max_prompt_chars is not None:
            backend.max_prompt_chars = config.backend.max_prompt_chars
        return backend
    return HttpBackend(
        endpoint=config.backend.endpoint,
        key_env=config.backend.key_env,
        max_prompt_chars=config.backend.max_prompt_chars,
    )


# --------------------------------------------------------------------------
# Resume stamps


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _stamp_path(config: RunConfig, stage: str) -> Path:
    return config.output_dir / ".stamps" / f"{stage}.json"


def _write_stamp(config: RunConfig, stage: str, inputs: dict[str, str], outputs: list[Path]) -> None:
    stamp = {
        "inputs": inputs,
        "outputs": {
            str(p.relative_to(config.output_dir)): _sha256_file(p) for p in outputs if p.is_file()
        },
    }
    path = _stamp_path(config, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(stamp, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _stamp_matches(config: RunConfig, stage: str, inputs: dict[str, str]) -> bool:
    path = _stamp_path(config, stage)
    if not path.is_file():
        return False
    try:
        stamp = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if stamp.get("inputs") != inputs:
        return False
    for rel, expected in stamp.get("outputs", {}).items():
        target = config.output_dir / rel
        if not target.is_file() or _sha256_file(target) != expected:
            return False
    return True


# --------------------------------------------------------------------------
# Prompt artifact files


def write_prompt_file(path: Path, system_text: str, user_text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    content = (
        f"{PROMPT_SYSTEM_HEADER}\n{system_text}\n{PROMPT_USER_HEADER}\n{user_text}"
    )
    path.write_text(content, encoding="utf-8", newline="\n")


def read_prompt_file(path: Path) -> tuple[str, str]:
    text = path.read_text(encoding="utf-8")
    header = PROMPT_SYSTEM_HEADER + "\n"
    if not text.startswith(header):
        raise StageError("adjudicate", f"prompt file {path} lacks the system header")
    rest = text[len(header):]
    marker = "\n" + PROMPT_USER_HEADER + "\n"
    split_at = rest.find(marker)
    if split_at < 0:
        raise StageError("adjudicate", f"prompt file {path} lacks the user header")
    return rest[:split_at], rest[split_at + len(marker):]


# --------------------------------------------------------------------------
# Stages


def write_config_echo(config: RunConfig) -> None:
    config.output_dir.mkdir(parents=True, exist_ok=True)
    (config.output_dir / "run_config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def stage_ingest(config: RunConfig, resume: bool = False) -> list[Finding]:
    inputs = {
        "sarif": _sha256_file(config.sarif_path),
        "cwe_map": _sha256_text(json.dumps(config.cwe_map, sort_keys=True)),
    }
    out_path = config.output_dir / "findings.jsonl"
    if resume and _stamp_matches(config, "ingest", inputs):
        return load_findings_jsonl(out_path)
    try:
        doc = parse_sarif(config.sarif_path.read_bytes())
        findings = canonicalize(doc, config.cwe_map)
    except Exception as exc:
        raise StageError("ingest", str(exc)) from exc
    write_findings_jsonl(findings, out_path)
    _write_stamp(config, "ingest", inputs, [out_path])
    return findings


def _context_inputs(config: RunConfig, findings: list[Finding]) -> dict[str, str]:
    inputs = {"findings": _sha256_file(config.output_dir / "findings.jsonl")}
    uris = sorted({step.location.uri for f in findings for step in f.trace}
                  | {f.primary_location.uri for f in findings})
    for uri in uris:
        path = config.source_root / uri
        inputs[f"src:{uri}"] = _sha256_file(path) if path.is_file() else "missing"
    inputs["limits"] = _sha256_text(json.dumps(config.to_dict()["limits"], sort_keys=True))
    inputs["baseline_style"] = config.baseline_style
    inputs["prompt_mode"] = config.prompt_mode
    return inputs


def _write_contexts(
    contexts: list[CodeContext], directory: Path, combined: Path
) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    with combined.open("w", encoding="utf-8", newline="\n") as fh:
        for ctx in contexts:
            fh.write(json.dumps(ctx.to_dict(), ensure_ascii=False) + "\n")
            per_alert = directory / f"{ctx.finding_id}.json"
            per_alert.write_text(
                json.dumps(ctx.to_dict(), ensure_ascii=False, indent=2) + "\n",
                encoding="utf-8",
            )
            written.append(per_alert)
    written.append(combined)
    return written


def load_contexts_jsonl(path: Path) -> dict[str, CodeContext]:
    contexts: dict[str, CodeContext] = {}
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                ctx = CodeContext.from_dict(json.loads(line))
                contexts[ctx.finding_id] = ctx
    return contexts


def stage_context(config: RunConfig, resume: bool = False) -> None:
    findings_path = config.output_dir / "findings.jsonl"
    if not findings_path.is_file():
        raise StageError("context", f"missing input {findings_path}; run ingest first")
    findings = load_findings_jsonl(findings_path)
    inputs = _context_inputs(config, findings)
    if resume and _stamp_matches(config, "context", inputs):
        return
    try:
        outputs: list[Path] = []
        modes = config.modes()
        if any(m is PromptMode.OPTIMIZED for m in modes):
            contexts = [
                extract_context(f, config.source_root, config.limits) for f in findings
            ]
            outputs += _write_contexts(
                contexts, config.output_dir / "contexts", config.output_dir / "contexts.jsonl"
            )
        if any(m is PromptMode.BASELINE for m in modes):
            baseline = [
                extract_baseline_context(
                    f, config.source_root, BaselineMode(config.baseline_style), config.limits
                )
                for f in findings
            ]
            outputs += _write_contexts(
                baseline,
                config.output_dir / "contexts_baseline",
                config.output_dir / "contexts_baseline.jsonl",
            )
    except StageError:
        raise
    except Exception as exc:
        raise StageError("context", str(exc)) from exc
    _write_stamp(config, "context", inputs, outputs)


def stage_prompts(config: RunConfig, resume: bool = False) -> None:
    findings_path = config.output_dir / "findings.jsonl"
    if not findings_path.is_file():
        raise StageError("prompts", f"missing input {findings_path}; run ingest first")
    findings = load_findings_jsonl(findings_path)

    rubric_dir = config.rubric_dir or default_rubric_dir()
    rubric_inputs = {
        f"rubric:{p.name}": _sha256_file(p) for p in sorted(Path(rubric_dir).glob("*.rubric"))
    }
    inputs = {"findings": _sha256_file(findings_path), **rubric_inputs}
    inputs["prompt_mode"] = config.prompt_mode
    inputs["budget"] = str(config.prompt_char_budget)
    for name in ("contexts.jsonl", "contexts_baseline.jsonl"):
        path = config.output_dir / name
        if path.is_file():
            inputs[name] = _sha256_file(path)
    if resume and _stamp_matches(config, "prompts", inputs):
        return

    try:
        store = load_rubrics(rubric_dir)
        modes = config.modes()
        contexts_by_mode: dict[PromptMode, dict[str, CodeContext]] = {}
        if any(m is PromptMode.OPTIMIZED for m in modes):
            path = config.output_dir / "contexts.jsonl"
            if not path.is_file():
                raise StageError("prompts", f"missing input {path}; run context first")
            contexts_by_mode[PromptMode.OPTIMIZED] = load_contexts_jsonl(path)
        if any(m is PromptMode.BASELINE for m in modes):
            path = config.output_dir / "contexts_baseline.jsonl"
            if not path.is_file():
                raise StageError("prompts", f"missing input {path}; run context first")
            contexts_by_mode[PromptMode.BASELINE] = load_contexts_jsonl(path)

        prompts_dir = config.output_dir / "prompts"
        prompts_dir.mkdir(parents=True, exist_ok=True)
        outputs: list[Path] = []
        index_path = config.output_dir / "prompts.jsonl"
        with index_path.open("w", encoding="utf-8", newline="\n") as fh:
            for finding in findings:
                for mode in modes:
                    ctx = contexts_by_mode[mode].get(finding.finding_id)
                    if ctx is None:
                        raise StageError(
                            "prompts", f"no context for finding {finding.finding_id}"
                        )
                    rubric = rubric_for(finding.cwe_id, store)
                    bundle = compile_prompt(
                        finding, ctx, rubric, mode, config.prompt_char_budget
                    )
                    rel = f"prompts/{finding.finding_id}.{mode.value.lower()}.txt"
                    prompt_path = config.output_dir / rel
                    write_prompt_file(prompt_path, bundle.system_text, bundle.user_text)
                    outputs.append(prompt_path)
                    fh.write(
                        json.dumps(
                            {
                                "finding_id": bundle.finding_id,
                                "mode": bundle.mode.value,
                                "path": rel,
                                "prompt_sha256": bundle.prompt_sha256,
                                "placeholders_used": list(bundle.placeholders_used),
                            },
                            ensure_ascii=False,
                        )
                        + "\n"
                    )
        outputs.append(index_path)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("prompts", str(exc)) from exc
    _write_stamp(config, "prompts", inputs, outputs)


def load_prompt_bundles(config: RunConfig) -> list[PromptBundle]:
    index_path = config.output_dir / "prompts.jsonl"
    if not index_path.is_file():
        raise StageError("adjudicate", f"missing input {index_path}; run prompts first")
    bundles: list[PromptBundle] = []
    with index_path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            row = json.loads(line)
            system_text, user_text = read_prompt_file(config.output_dir / row["path"])
            digest = prompt_sha256(system_text, user_text)
            if digest != row["prompt_sha256"]:
                raise StageError(
                    "adjudicate",
                    f"prompt file {row['path']} does not match its recorded hash",
                )
            bundles.append(
                PromptBundle(
                    finding_id=row["finding_id"],
                    mode=PromptMode(row["mode"]),
                    system_text=system_text,
                    user_text=user_text,
                    prompt_sha256=digest,
                    placeholders_used=tuple(row.get("placeholders_used", [])),
                )
            )
    return bundles


def stage_adjudicate(
    config: RunConfig, resume: bool = False, sleep: Callable[[float], None] | None = None
) -> None:
    bundles = load_prompt_bundles(config)
    inputs = {
        "prompts": _sha256_file(config.output_dir / "prompts.jsonl"),
        "backend": _sha256_text(json.dumps(config.backend.to_dict(), sort_keys=True)),
    }
    if config.backend.kind == "mock" and config.backend.script_path:
        inputs["script"] = _sha256_file(Path(config.backend.script_path))
    if resume and _stamp_matches(config, "adjudicate", inputs):
        return
    try:
        backend = build_backend(config)
        retry = RetryPolicy(
            attempt_cap=config.backend.attempt_cap,
            backoff_base_s=config.backend.backoff_base_s,
            **({"sleep": sleep} if sleep is not None else {}),
        )
        results, audits = adj.adjudicate_all(
            bundles,
            backend,
            parallelism=config.parallelism,
            model=config.backend.model,
            retry=retry,
            max_output_chars=config.max_output_chars,
        )
        out_path = config.output_dir / "adjudications.jsonl"
        adj.write_adjudications_jsonl(results, out_path)
        audit_dir = config.output_dir / "audit"
        audit_dir.mkdir(parents=True, exist_ok=True)
        outputs = [out_path]
        # Audit writing is serialized here, one record per (finding, mode).
        for record in audits:
            path = audit_dir / f"{record.finding_id}.{record.mode.lower()}.json"
            path.write_text(
                json.dumps(record.to_dict(), ensure_ascii=False, indent=2) + "\n",
                encoding="utf-8",
            )
            outputs.append(path)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("adjudicate", str(exc)) from exc
    _write_stamp(config, "adjudicate", inputs, outputs)


def stage_evaluate(config: RunConfig, resume: bool = False) -> dict[str, Any]:
    if config.labels_path is None:
        raise ConfigError("evaluate requires labels_path in the config")
    findings_path = config.output_dir / "findings.jsonl"
    adjudications_path = config.output_dir / "adjudications.jsonl"
    for needed in (findings_path, adjudications_path):
        if not needed.is_file():
            raise StageError("evaluate", f"missing input {needed}")
    inputs = {
        "findings": _sha256_file(findings_path),
        "adjudications": _sha256_file(adjudications_path),
        "labels": _sha256_file(config.labels_path),
    }
    report_path = config.output_dir / "report.json"
    if resume and _stamp_matches(config, "evaluate", inputs) and report_path.is_file():
        return json.loads(report_path.read_text(encoding="utf-8"))
    try:
        findings = load_findings_jsonl(findings_path)
        results = adj.load_adjudications_jsonl(adjudications_path)
        truths = ev.load_labels_jsonl(config.labels_path)

        reports: dict[str, ev.EvalReport] = {}
        for mode in config.modes():
            mode_rows = [r for r in results if r.mode == mode.value]
            reports[mode.value] = ev.build_report(findings, mode_rows, truths, mode.value)

        deltas = None
        if "BASELINE" in reports and "OPTIMIZED" in reports:
            deltas = ev.compare_modes(reports["BASELINE"], reports["OPTIMIZED"])

        payload: dict[str, Any] = {
            "modes": {mode: report.to_dict() for mode, report in reports.items()},
        }
        if deltas is not None:
            payload["delta"] = [row.to_dict() for row in deltas]
        report_path.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
        text_path = config.output_dir / "report.txt"
        text_path.write_text(ev.render_report_text(reports, deltas), encoding="utf-8")
        outputs = [report_path, text_path]
        if config.write_csv:
            csv_path = config.output_dir / "report.csv"
            ev.write_report_csv(reports, csv_path)
            outputs.append(csv_path)
    except StageError:
        raise
    except Exception as exc:
        raise StageError("evaluate", str(exc)) from exc
    _write_stamp(config, "evaluate", inputs, outputs)
    return payload


def run_all(
    config: RunConfig, resume: bool = False, sleep: Callable[[float], None] | None = None
) -> None:
    """Execute ingest -> context -> prompts -> adjudicate (-> evaluate when
    labels are configured), writing every stage's outputs before the next
    stage begins."""
    write_config_echo(config)
    stage_ingest(config, resume)
    stage_context(config, resume)
    stage_prompts(config, resume)
    stage_adjudicate(config, resume, sleep=sleep)
    if config.labels_path is not None:
        stage_evaluate(config, resume)
