import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Tuple

from .config import LintSettings
from .schemas import Finding, Report
from .stages.capture import read_capture, reassemble_tcp
from .stages.correlator import HttpExchange, correlate
from .stages.http2 import decode_streams
from .stages.openapi import SpecIndex, load_spec_dir
from .stages.report import build_report
from .stages.validator import check_exchange

logger = logging.getLogger(__name__)


def _validate_all(exchanges: List[HttpExchange], settings: LintSettings) -> List[Tuple[List[Finding], List[str]]]:
    # exchanges are read-only from here on; results come back in input order
    if settings.workers > 1 and len(exchanges) > 1:
        with ThreadPoolExecutor(max_workers=settings.workers) as pool:
            return list(pool.map(lambda e: check_exchange(e, settings.max_body), exchanges))
    return [check_exchange(e, settings.max_body) for e in exchanges]


def lint_capture(path: Path, index: SpecIndex, settings: LintSettings) -> Report:
    """Decode, correlate and validate one capture file."""
    capture = read_capture(path)
    streams = reassemble_tcp(capture.packets)
    messages, decode_notes = decode_streams(streams, settings.h2_min_frames)
    exchanges, subscriptions = correlate(messages, index, settings.callback_properties)
    logger.info(
        "%s: %d TCP streams, %d messages, %d exchanges, %d subscriptions",
        Path(path).name, len(streams), len(messages), len(exchanges), len(subscriptions),
    )

    findings: List[Finding] = []
    for exchange, (validation, notes) in zip(exchanges, _validate_all(exchanges, settings)):
        findings.extend(exchange.findings)
        findings.extend(validation)
        exchange.notes.extend(notes)
    return build_report(
        capture=Path(path).name,
        index=index,
        exchanges=exchanges,
        findings=findings,
        capture_notes=[*capture.notes, *decode_notes],
        disabled_rules=settings.disabled_rules,
    )


def lint(settings: LintSettings) -> List[Report]:
    """One report per capture, in command-line order."""
    index = load_spec_dir(settings.specs)
    return [lint_capture(path, index, settings) for path in settings.pcaps]
