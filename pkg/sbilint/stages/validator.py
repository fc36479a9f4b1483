"""
JSON body validation against compiled schemas.

Every problem is a Finding; nothing here raises on bad input. Numbers are kept
as int (written without fraction) or Decimal, so range checks are exact.
"""
import base64
import binascii
import datetime
import json
import logging
import re
from decimal import Decimal
from typing import TYPE_CHECKING, Any, Iterable, List, Optional, Set, Tuple

from ..models import MessageKind, RuleId, SchemaKind, Severity
from ..schemas import Finding
from .openapi import SchemaIR

if TYPE_CHECKING:
    from .correlator import HttpExchange

logger = logging.getLogger(__name__)

INT32_RANGE = (-(1 << 31), (1 << 31) - 1)
INT64_RANGE = (-(1 << 63), (1 << 63) - 1)
FLOAT_MAX = Decimal("3.4028234663852886e38")
DOUBLE_MAX = Decimal("1.7976931348623157e308")
# containers nested deeper than this are rejected at parse time
MAX_JSON_DEPTH = 64
_DATE_TIME = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})[Tt](\d{2}):(\d{2}):(\d{2})(\.\d+)?([Zz]|[+-]\d{2}:\d{2})$", re.ASCII,
)
_UUID = re.compile(r"^[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12}$", re.ASCII)


# JSON parsing
def _reject_duplicates(pairs: List[Tuple[str, Any]]) -> dict:
    result = {}
    for key, value in pairs:
        if key in result:
            raise ValueError(f"duplicate object key {key!r}")
        result[key] = value
    return result


def _reject_constant(name: str):
    raise ValueError(f"{name} is not valid JSON")


class ExponentDecimal(Decimal):
    """A number written with an exponent (`1e2`); never counts as an integer."""


def _parse_number(text: str) -> Decimal:
    return ExponentDecimal(text) if "e" in text or "E" in text else Decimal(text)


def _nesting(value: Any) -> int:
    deepest = 0
    stack = [(value, 1)]
    while stack:
        node, depth = stack.pop()
        if isinstance(node, dict):
            children = node.values()
        elif isinstance(node, list):
            children = node
        else:
            continue
        deepest = max(deepest, depth)
        if deepest > MAX_JSON_DEPTH:
            break
        stack.extend((child, depth + 1) for child in children)
    return deepest


def parse_json(body: bytes) -> Any:
    """
    Parse a JSON body; raises ValueError on malformed text, duplicate keys,
    NaN/Infinity or nesting deeper than MAX_JSON_DEPTH.
    """
    text = body.decode("utf-8") if isinstance(body, (bytes, bytearray)) else body
    too_deep = f"containers nested deeper than {MAX_JSON_DEPTH} levels"
    try:
        value = json.loads(
            text,
            parse_float=_parse_number,
            parse_constant=_reject_constant,
            object_pairs_hook=_reject_duplicates,
        )
    except RecursionError:
        raise ValueError(too_deep) from None
    if _nesting(value) > MAX_JSON_DEPTH:
        raise ValueError(too_deep)
    return value


def media_type(content_type: Optional[str]) -> str:
    return (content_type or "").split(";", 1)[0].strip().lower()


def is_json_media(content_type: Optional[str]) -> bool:
    mt = media_type(content_type)
    return mt == "application/json" or mt.endswith("+json")


# Value helpers
def escape_pointer_token(token: str) -> str:
    return token.replace("~", "~0").replace("/", "~1")


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float, Decimal)) and not isinstance(value, bool)


def _as_decimal(value: Any) -> Decimal:
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(value)


def _is_integral(value: Any) -> bool:
    if isinstance(value, int):
        return True
    if isinstance(value, ExponentDecimal):
        return False
    number = _as_decimal(value)
    return number.is_finite() and number == number.to_integral_value()


def json_kind(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if _is_number(value):
        return "integer" if _is_integral(value) else "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, list):
        return "array"
    if isinstance(value, dict):
        return "object"
    return type(value).__name__


def freeze(value: Any) -> Any:
    """Hashable canonical form; equal JSON values freeze equal (1 and 1.0 included)."""
    if value is None or isinstance(value, bool):
        return ("lit", value)
    if _is_number(value):
        return ("num", _as_decimal(value))
    if isinstance(value, str):
        return ("str", value)
    if isinstance(value, list):
        return ("arr", tuple(freeze(v) for v in value))
    if isinstance(value, dict):
        return ("obj", frozenset((k, freeze(v)) for k, v in value.items()))
    return ("other", repr(value))


def _sorted(findings: Iterable[Finding]) -> List[Finding]:
    return sorted(findings, key=lambda f: (f.json_pointer, f.rule_id.value, f.message))


def _finding(rule: RuleId, pointer: str, message: str, detail: Iterable[Finding] = (), severity: Severity = Severity.ERROR) -> Finding:
    return Finding(rule_id=rule, severity=severity, json_pointer=pointer, message=message, detail=_sorted(detail))


def _label(schema: SchemaIR) -> str:
    return schema.name or schema.kind.value


def _short(value: Any) -> str:
    text = json.dumps(value, default=str)
    return text if len(text) <= 60 else text[:57] + "..."


# Formats
def _date_time_ok(text: str) -> bool:
    m = _DATE_TIME.match(text)
    if m is None:
        return False
    year, month, day, hour, minute, second = (int(g) for g in m.groups()[:6])
    try:
        # leap second 60 is allowed by RFC 3339
        datetime.datetime(year, month, day, hour, minute, min(second, 59))
    except ValueError:
        return False
    return second <= 60


def _format_problem(value: Any, fmt: Optional[str]) -> Optional[str]:
    if fmt is None:
        return None
    if isinstance(value, str):
        if fmt == "date-time" and not _date_time_ok(value):
            return "is not an RFC 3339 date-time"
        if fmt == "uuid":
            if not _UUID.match(value):
                return "is not a UUID"
        if fmt == "byte":
            try:
                base64.b64decode(value, validate=True)
            except (binascii.Error, ValueError):
                return "is not base64"
        return None
    if _is_number(value):
        if fmt in ("int32", "int64"):
            if not _is_integral(value):
                return f"is not a whole {fmt}"
            lo, hi = INT32_RANGE if fmt == "int32" else INT64_RANGE
            if not lo <= int(_as_decimal(value)) <= hi:
                return f"does not fit {fmt}"
        elif fmt in ("float", "double"):
            limit = FLOAT_MAX if fmt == "float" else DOUBLE_MAX
            if abs(_as_decimal(value)) > limit:
                return f"is not a finite {fmt}"
    return None


# Validation
_KIND_CHECKS = {
    SchemaKind.STRING: lambda v: isinstance(v, str),
    SchemaKind.NUMBER: _is_number,
    SchemaKind.INTEGER: lambda v: _is_number(v) and _is_integral(v),
    SchemaKind.BOOLEAN: lambda v: isinstance(v, bool),
    SchemaKind.ARRAY: lambda v: isinstance(v, list),
    SchemaKind.OBJECT: lambda v: isinstance(v, dict),
}


class _Validator:
    def __init__(self):
        # (schema, pointer) pairs being checked, to cut alias loops that consume no input
        self.active: Set[Tuple[int, str]] = set()

    def check(self, value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        key = (id(schema), pointer)
        if key in self.active:
            return []
        self.active.add(key)
        try:
            if schema.kind == SchemaKind.COMPOSITE:
                return self.composite(value, schema, pointer)
            return self.base(value, schema, pointer)
        finally:
            self.active.discard(key)

    def base(self, value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        if value is None:
            if schema.nullable:
                return []
            if schema.kind != SchemaKind.ANY:
                return [_finding(RuleId.NULL_NOT_ALLOWED, pointer, f"null where {_label(schema)} is not nullable")]
            return self.enum(value, schema, pointer)
        check = _KIND_CHECKS.get(schema.kind)
        if check is not None and not check(value):
            return [_finding(
                RuleId.SCHEMA_TYPE_MISMATCH, pointer,
                f"expected {schema.kind.value}, got {json_kind(value)}",
            )]
        findings = self.enum(value, schema, pointer)
        if isinstance(value, str):
            findings.extend(self.string(value, schema, pointer))
        elif _is_number(value):
            findings.extend(self.number(value, schema, pointer))
        elif isinstance(value, list):
            findings.extend(self.array(value, schema, pointer))
        elif isinstance(value, dict):
            findings.extend(self.object(value, schema, pointer))
        return findings

    @staticmethod
    def enum(value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        if schema.enum is None:
            return []
        if freeze(value) in {freeze(e) for e in schema.enum}:
            return []
        allowed = ", ".join(_short(e) for e in schema.enum[:8])
        return [_finding(RuleId.ENUM_VIOLATION, pointer, f"{_short(value)} is not one of [{allowed}]")]

    @staticmethod
    def string(value: str, schema: SchemaIR, pointer: str) -> List[Finding]:
        findings = []
        if schema.regex is not None and schema.regex.search(value) is None:
            findings.append(_finding(
                RuleId.PATTERN_MISMATCH, pointer, f"{_short(value)} does not match pattern {schema.pattern!r}",
            ))
        if schema.min_length is not None and len(value) < schema.min_length:
            findings.append(_finding(
                RuleId.LENGTH_VIOLATION, pointer, f"length {len(value)} below minLength {schema.min_length}",
            ))
        if schema.max_length is not None and len(value) > schema.max_length:
            findings.append(_finding(
                RuleId.LENGTH_VIOLATION, pointer, f"length {len(value)} above maxLength {schema.max_length}",
            ))
        problem = _format_problem(value, schema.format)
        if problem:
            findings.append(_finding(RuleId.FORMAT_VIOLATION, pointer, f"{_short(value)} {problem}"))
        return findings

    @staticmethod
    def number(value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        findings = []
        number = _as_decimal(value)
        if schema.minimum is not None:
            low = number <= schema.minimum if schema.exclusive_minimum else number < schema.minimum
            if low:
                bound = "exclusive minimum" if schema.exclusive_minimum else "minimum"
                findings.append(_finding(RuleId.RANGE_VIOLATION, pointer, f"{value} below {bound} {schema.minimum}"))
        if schema.maximum is not None:
            high = number >= schema.maximum if schema.exclusive_maximum else number > schema.maximum
            if high:
                bound = "exclusive maximum" if schema.exclusive_maximum else "maximum"
                findings.append(_finding(RuleId.RANGE_VIOLATION, pointer, f"{value} above {bound} {schema.maximum}"))
        problem = _format_problem(value, schema.format)
        if problem:
            findings.append(_finding(RuleId.FORMAT_VIOLATION, pointer, f"{value} {problem}"))
        return findings

    def array(self, value: list, schema: SchemaIR, pointer: str) -> List[Finding]:
        findings = []
        if schema.min_items is not None and len(value) < schema.min_items:
            findings.append(_finding(
                RuleId.MIN_ITEMS, pointer, f"{len(value)} items, at least {schema.min_items} required",
            ))
        if schema.max_items is not None and len(value) > schema.max_items:
            findings.append(_finding(
                RuleId.MAX_ITEMS, pointer, f"{len(value)} items, at most {schema.max_items} allowed",
            ))
        if schema.unique_items:
            seen = {}
            for i, item in enumerate(value):
                frozen = freeze(item)
                if frozen in seen:
                    findings.append(_finding(
                        RuleId.UNIQUE_ITEMS, pointer, f"items {seen[frozen]} and {i} are equal",
                    ))
                    break
                seen[frozen] = i
        if schema.items is not None:
            for i, item in enumerate(value):
                findings.extend(self.check(item, schema.items, f"{pointer}/{i}"))
        return findings

    def object(self, value: dict, schema: SchemaIR, pointer: str) -> List[Finding]:
        findings = []
        properties = schema.properties or {}
        for name in sorted(schema.required):
            if name not in value:
                findings.append(_finding(RuleId.REQUIRED_MISSING, pointer, f"required property {name!r} missing"))
        for name in sorted(value):
            child = f"{pointer}/{escape_pointer_token(name)}"
            if name in properties:
                findings.extend(self.check(value[name], properties[name], child))
            elif schema.additional_properties is False:
                findings.append(_finding(
                    RuleId.ADDITIONAL_PROPERTY, child, f"property {name!r} not allowed by {_label(schema)}",
                ))
            elif isinstance(schema.additional_properties, SchemaIR):
                findings.extend(self.check(value[name], schema.additional_properties, child))
        count = len(value)
        if schema.min_properties is not None and count < schema.min_properties:
            findings.append(_finding(
                RuleId.PROPERTY_COUNT, pointer, f"{count} properties, at least {schema.min_properties} required",
            ))
        if schema.max_properties is not None and count > schema.max_properties:
            findings.append(_finding(
                RuleId.PROPERTY_COUNT, pointer, f"{count} properties, at most {schema.max_properties} allowed",
            ))
        return findings

    def composite(self, value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        if value is None and schema.nullable:
            return []
        findings: List[Finding] = []
        if schema.all_of:
            results = [self.check(value, branch, pointer) for branch in schema.all_of]
            if schema.implicit_all_of:
                for result in results:
                    findings.extend(result)
            else:
                failed = [i for i, r in enumerate(results) if r]
                if failed:
                    findings.append(_finding(
                        RuleId.ALLOF_FAILED, pointer,
                        f"allOf branches {failed} of {_label(schema)} failed",
                        [f for i in failed for f in results[i]],
                    ))
        discriminated = schema.discriminator is not None
        if schema.one_of:
            if discriminated:
                findings.extend(self.discriminated(value, schema, schema.one_of, pointer))
            else:
                findings.extend(self.one_of(value, schema, pointer))
        if schema.any_of:
            if discriminated and not schema.one_of:
                findings.extend(self.discriminated(value, schema, schema.any_of, pointer))
            else:
                findings.extend(self.any_of(value, schema, pointer))
        if schema.not_ is not None and not self.check(value, schema.not_, pointer):
            findings.append(_finding(
                RuleId.NOT_MATCHED, pointer, f"value must not match {_label(schema.not_)}",
            ))
        return findings

    def any_of(self, value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        results = [self.check(value, branch, pointer) for branch in schema.any_of]
        if any(not r for r in results):
            return []
        best = min(range(len(results)), key=lambda i: len(results[i]))
        return [_finding(
            RuleId.ANYOF_NONE, pointer,
            f"no anyOf branch of {_label(schema)} matches (closest: branch {best}, {_label(schema.any_of[best])})",
            results[best],
        )]

    def one_of(self, value: Any, schema: SchemaIR, pointer: str) -> List[Finding]:
        results = [self.check(value, branch, pointer) for branch in schema.one_of]
        passing = [i for i, r in enumerate(results) if not r]
        if len(passing) == 1:
            return []
        if passing:
            names = ", ".join(f"{i} ({_label(schema.one_of[i])})" for i in passing)
            return [_finding(RuleId.ONEOF_MULTIPLE, pointer, f"oneOf branches {names} of {_label(schema)} all match")]
        best = min(range(len(results)), key=lambda i: len(results[i]))
        return [_finding(
            RuleId.ONEOF_NONE, pointer,
            f"no oneOf branch of {_label(schema)} matches (closest: branch {best}, {_label(schema.one_of[best])})",
            results[best],
        )]

    def discriminated(self, value: Any, schema: SchemaIR, branches: List[SchemaIR], pointer: str) -> List[Finding]:
        disc = schema.discriminator
        if not isinstance(value, dict):
            return [_finding(
                RuleId.SCHEMA_TYPE_MISMATCH, pointer,
                f"expected object carrying discriminator {disc.property_name!r}, got {json_kind(value)}",
            )]
        if disc.property_name not in value:
            return [_finding(
                RuleId.DISCRIMINATOR_UNKNOWN, pointer, f"discriminator property {disc.property_name!r} missing",
            )]
        tag = value[disc.property_name]
        target = disc.mapping.get(tag) if isinstance(tag, str) else None
        if target is None:
            known = ", ".join(sorted(disc.mapping))
            return [_finding(
                RuleId.DISCRIMINATOR_UNKNOWN, f"{pointer}/{escape_pointer_token(disc.property_name)}",
                f"{_short(tag)} maps to no schema (known: {known})",
            )]
        return self.check(value, target, pointer)


def validate(value: Any, schema: SchemaIR, pointer: str = "") -> List[Finding]:
    """Findings for value against schema, sorted by (pointer, rule id); empty means conformant."""
    return _sorted(_Validator().check(value, schema, pointer))


def validate_composite(value: Any, schema: SchemaIR, pointer: str = "") -> List[Finding]:
    return _sorted(_Validator().composite(value, schema, pointer))


# Exchange level
def select_content_schema(
    exchange: "HttpExchange", side: MessageKind,
) -> Tuple[Optional[SchemaIR], Optional[str], List[Finding]]:
    """
    Pick the schema a message body is validated against.
    Findings are unstamped; header-level ones belong to the message's first frame.
    """
    message = exchange.request if side == MessageKind.REQUEST else exchange.response
    operation = exchange.bound_operation.operation
    findings: List[Finding] = []
    if side == MessageKind.RESPONSE:
        status = message.status
        if status is None:
            return None, None, findings
        found = operation.response_for(status)
        if found is None:
            declared = ", ".join(sorted(operation.responses))
            findings.append(_finding(
                RuleId.STATUS_NOT_DEFINED, "",
                f"status {status} not declared for {operation.operation_id} (declared: {declared})",
            ))
            return None, None, findings
        _, response_spec = found
        if status == 201 and "location" in response_spec.headers and "location" not in message.headers:
            findings.append(_finding(
                RuleId.LOCATION_HEADER_MISSING, "",
                f"201 response to {operation.operation_id} lacks the Location of the created resource",
            ))
        content = response_spec.content
    else:
        content = operation.request_body
    if not message.body or not content:
        return None, None, findings

    declared_type = media_type(message.content_type)
    spelled = next((name for name in content if name.lower() == declared_type), None)
    if spelled is not None:
        return content[spelled], spelled, findings
    shown = declared_type or "(none)"
    if len(content) == 1:
        only = next(iter(content))
        findings.append(_finding(
            RuleId.CONTENT_TYPE_MISMATCH, "",
            f"content-type {shown} not declared for {operation.operation_id}; validated as {only}",
            severity=Severity.WARNING,
        ))
        return content[only], only, findings
    findings.append(_finding(
        RuleId.CONTENT_TYPE_MISMATCH, "",
        f"content-type {shown} not declared for {operation.operation_id} (declared: {', '.join(content)})",
    ))
    return None, None, findings


def check_exchange(exchange: "HttpExchange", max_body: Optional[int] = None) -> Tuple[List[Finding], List[str]]:
    """Validate both bodies of a bound exchange; returns stamped findings and exchange notes."""
    findings: List[Finding] = []
    notes: List[str] = []
    if exchange.bound_operation is None or not exchange.version_status.ok:
        return findings, notes
    for side, message in ((MessageKind.REQUEST, exchange.request), (MessageKind.RESPONSE, exchange.response)):
        if message is None:
            continue
        schema, content_type, selection = select_content_schema(exchange, side)
        findings.extend(f.stamped(message.first_frame, exchange.exchange_id) for f in selection)
        if schema is None or not is_json_media(content_type):
            continue
        body_frame = message.body_last_frame or message.last_frame
        if max_body is not None and len(message.body) > max_body:
            note = f"{side.value} body of {len(message.body)} bytes exceeds max body {max_body}; not validated"
            logger.warning("exchange %d: %s", exchange.exchange_id, note)
            notes.append(note)
            continue
        try:
            value = parse_json(message.body)
        except (ValueError, UnicodeDecodeError) as e:
            findings.append(_finding(
                RuleId.BODY_NOT_JSON, "", f"{side.value} body is not JSON under {content_type}: {e}",
            ).stamped(body_frame, exchange.exchange_id))
            continue
        try:
            found = validate(value, schema)
        except RecursionError:
            found = [_finding(RuleId.BODY_NOT_JSON, "", f"{side.value} body nests too deep to validate")]
        findings.extend(f.stamped(body_frame, exchange.exchange_id) for f in found)
    return findings, notes
