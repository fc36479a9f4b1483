"""
Report assembly and rendering (text and canonical JSON).
"""
import json
from collections import Counter
from typing import Dict, FrozenSet, Iterable, List, Sequence

from .. import __version__
from ..models import RuleId, Severity
from ..schemas import DecodeNote, ExchangeSummary, Finding, Report, ReportCounters
from .correlator import HttpExchange
from .openapi import SpecIndex

ROOT_POINTER_LABEL = "(root)"


def summarize(exchange: HttpExchange) -> ExchangeSummary:
    request, response = exchange.request, exchange.response
    match = exchange.bound_operation
    return ExchangeSummary(
        exchange_id=exchange.exchange_id,
        first_frame=exchange.first_frame,
        last_frame=exchange.last_frame,
        tcp_stream=exchange.tcp_stream_id,
        h2_stream=exchange.h2_stream_id,
        method=request.method if request is not None else None,
        path=request.path if request is not None else None,
        operation_id=match.operation.operation_id if match is not None else None,
        document=match.operation.document if match is not None else None,
        status=response.status if response is not None else None,
        version_status=str(exchange.version_status),
        links=sorted(exchange.links),
        augmentations=list(exchange.augmentations),
        notes=list(exchange.notes),
    )


def count_findings(findings: Iterable[Finding]) -> ReportCounters:
    findings = list(findings)
    by_rule = Counter(f.rule_id.value for f in findings)
    by_severity = Counter(f.severity.value for f in findings)
    return ReportCounters(
        total=len(findings),
        by_rule=dict(sorted(by_rule.items())),
        by_severity={s.value: by_severity.get(s.value, 0) for s in Severity},
    )


def build_report(
    capture: str,
    index: SpecIndex,
    exchanges: Sequence[HttpExchange],
    findings: Iterable[Finding],
    capture_notes: Sequence[DecodeNote] = (),
    disabled_rules: FrozenSet[RuleId] = frozenset(),
) -> Report:
    """Order findings by (frame, pointer, rule) and tally them; disabled rules are dropped first."""
    kept = sorted((f for f in findings if f.rule_id not in disabled_rules), key=Finding.sort_key)
    return Report(
        tool_version=__version__,
        spec_digest=index.digest,
        capture=capture,
        exchanges=[summarize(e) for e in sorted(exchanges, key=lambda e: e.exchange_id)],
        findings=kept,
        counters=count_findings(kept),
        spec_notes=list(index.notes),
        capture_notes=list(capture_notes),
    )


def exit_code(findings: Iterable[Finding], threshold: Severity) -> int:
    return 1 if any(f.severity.rank >= threshold.rank for f in findings) else 0


def _finding_line(finding: Finding, requests: Dict[int, str]) -> str:
    where = requests.get(finding.exchange_id, "-") if finding.exchange_id is not None else "-"
    pointer = finding.json_pointer or ROOT_POINTER_LABEL
    return (
        f"frame {finding.frame_number}  {finding.severity.value.upper()}  {finding.rule_id.value}  "
        f"{where}  {pointer}: {finding.message}"
    )


def render_text(report: Report) -> str:
    requests = {
        e.exchange_id: f"{e.method} {e.path}" if e.method else "(no request)"
        for e in report.exchanges
    }
    lines: List[str] = [_finding_line(f, requests) for f in report.findings]
    if lines:
        lines.append("")
    counters = report.counters
    lines.append(f"capture: {report.capture}")
    lines.append(f"spec digest: {report.spec_digest[:16]}  exchanges: {len(report.exchanges)}")
    severities = ", ".join(f"{counters.by_severity.get(s.value, 0)} {s.value}" for s in reversed(Severity))
    lines.append(f"{counters.total} findings ({severities})")
    for rule, count in counters.by_rule.items():
        lines.append(f"  {rule}: {count}")
    notes = len(report.spec_notes) + len(report.capture_notes)
    if notes:
        lines.append(f"{len(report.spec_notes)} spec notes, {len(report.capture_notes)} capture notes")
    return "\n".join(lines) + "\n"


def render_json(report: Report) -> str:
    """Canonical JSON: sorted keys, compact separators, UTF-8, one line."""
    return json.dumps(
        report.model_dump(mode="json"), sort_keys=True, separators=(",", ":"), ensure_ascii=False,
    ) + "\n"
