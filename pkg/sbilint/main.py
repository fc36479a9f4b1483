"""
Command-line entry point.

    python -m sbilint --specs DIR --pcap FILE [--pcap FILE ...] [options]

Exit codes: 0 no finding at or above --fail-on, 1 otherwise, 2 operational error.
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .config import load_settings
from .errors import SbiLintError
from .models import RuleId, Severity
from .pipeline import lint
from .stages.report import exit_code, render_json, render_text

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sbilint",
        description="Validate 5G SBI traffic in PCAP files against 3GPP OpenAPI documents.",
    )
    parser.add_argument("--specs", type=Path, required=True, help="directory of OpenAPI YAML documents")
    parser.add_argument("--pcap", type=Path, action="append", required=True, help="capture file (repeatable)")
    parser.add_argument("--format", dest="output_format", choices=["text", "json"], help="report format (default text)")
    parser.add_argument(
        "--fail-on", choices=[s.value for s in Severity],
        help="lowest severity that makes the exit code 1 (default error)",
    )
    parser.add_argument(
        "--rule-disable", dest="disabled_rules", action="append", default=[],
        choices=[r.value for r in RuleId], metavar="RULE_ID", help="drop findings of this rule (repeatable)",
    )
    parser.add_argument("--max-body", type=int, help="larger bodies are skipped (default 4 MiB)")
    parser.add_argument("--workers", type=int, help="validation threads per capture (default 1)")
    parser.add_argument("--h2-min-frames", type=int, help="chained frames needed to detect HTTP/2 mid-stream")
    parser.add_argument("--config", type=Path, help="KEY=value settings file")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug diagnostics on stderr")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="errors only on stderr")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def _configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.ERROR if quiet else logging.WARNING
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("sbilint").setLevel(level)


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    _configure_logging(args.verbose, args.quiet)

    cli_values = {
        "specs": args.specs,
        "pcaps": args.pcap,
        "output_format": args.output_format,
        "fail_on": args.fail_on,
        "disabled_rules": args.disabled_rules,
        "max_body": args.max_body,
        "workers": args.workers,
        "h2_min_frames": args.h2_min_frames,
    }
    try:
        settings = load_settings(cli_values, args.config)
        reports = lint(settings)
    except (SbiLintError, OSError) as e:
        detail = e.detail if isinstance(e, SbiLintError) else str(e)
        logger.debug("operational error", exc_info=True)
        print(f"sbilint: error: {detail}", file=sys.stderr)
        return 2

    render = render_json if settings.output_format == "json" else render_text
    sys.stdout.write(("" if settings.output_format == "json" else "\n").join(render(r) for r in reports))
    sys.stdout.flush()
    findings = [f for report in reports for f in report.findings]
    return exit_code(findings, settings.fail_on)
