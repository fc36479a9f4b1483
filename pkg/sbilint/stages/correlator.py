"""
Request/response pairing, header augmentation, operation binding and
subscription/notification linking.
"""
import logging
from dataclasses import dataclass, field
from itertools import zip_longest
from types import MappingProxyType
from typing import Dict, List, Optional, Sequence, Tuple
from urllib.parse import urlsplit

from ..config import DEFAULT_CALLBACK_PROPERTIES
from ..models import AugmentationSource, MessageKind, MissReason, RuleId, Severity
from ..schemas import AugmentationNote, Finding
from .http2 import HttpMessage
from .openapi import LookupMiss, OperationMatch, SpecIndex, lookup_operation
from .validator import media_type, parse_json

logger = logging.getLogger(__name__)

_DEFAULT_PORTS = {"http": 80, "https": 443}


@dataclass(frozen=True)
class VersionStatus:
    found: Optional[str] = None
    expected: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.expected is None

    def __str__(self) -> str:
        if self.ok:
            return "ok"
        return f"UnsupportedVersion(found={self.found or '(none)'}, expected={self.expected})"


VERSION_OK = VersionStatus()


@dataclass
class HttpExchange:
    exchange_id: int
    request: Optional[HttpMessage]
    response: Optional[HttpMessage] = None
    bound_operation: Optional[OperationMatch] = None
    augmentations: List[AugmentationNote] = field(default_factory=list)
    version_status: VersionStatus = VERSION_OK
    links: List[int] = field(default_factory=list)
    findings: List[Finding] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    @property
    def messages(self) -> List[HttpMessage]:
        return [m for m in (self.request, self.response) if m is not None]

    @property
    def tcp_stream_id(self) -> int:
        return self.messages[0].tcp_stream_id

    @property
    def h2_stream_id(self) -> int:
        return self.messages[0].h2_stream_id

    @property
    def first_frame(self) -> int:
        return min(m.first_frame for m in self.messages)

    @property
    def last_frame(self) -> int:
        return max(m.last_frame for m in self.messages)

    def flag(self, rule: RuleId, severity: Severity, message: str, frame_number: int) -> None:
        finding = Finding(
            rule_id=rule, severity=severity, message=message,
            frame_number=frame_number, exchange_id=self.exchange_id,
        )
        if finding not in self.findings:
            self.findings.append(finding)


@dataclass(frozen=True)
class SubscriptionRecord:
    exchange_id: int
    callback_uri: str
    property_name: str
    resource_location: Optional[str] = None


def pair_exchanges(messages: Sequence[HttpMessage]) -> List[HttpExchange]:
    """
    Group messages by (tcp stream, h2 stream); the n-th request pairs with the
    n-th response. Exchange ids are 1-based in order of first frame.
    """
    groups: Dict[Tuple[int, int], Tuple[List[HttpMessage], List[HttpMessage]]] = {}
    for message in sorted(messages, key=lambda m: (m.first_frame, m.direction, m.h2_stream_id)):
        requests, responses = groups.setdefault((message.tcp_stream_id, message.h2_stream_id), ([], []))
        (requests if message.kind == MessageKind.REQUEST else responses).append(message)

    pairs: List[Tuple[Optional[HttpMessage], Optional[HttpMessage]]] = []
    for requests, responses in groups.values():
        pairs.extend(zip_longest(requests, responses))
    pairs.sort(key=lambda p: min(m.first_frame for m in p if m is not None))

    exchanges = []
    for number, (request, response) in enumerate(pairs, start=1):
        exchange = HttpExchange(exchange_id=number, request=request, response=response)
        if request is None:
            exchange.flag(
                RuleId.HEADERS_INCOMPLETE, Severity.WARNING,
                "response without a captured request; not validated", response.first_frame,
            )
        elif response is None:
            exchange.notes.append("no response captured")
        exchanges.append(exchange)
    return exchanges


def match_operation(exchange: HttpExchange, index: SpecIndex) -> HttpExchange:
    """Bind the exchange to an operation, or record why none applies."""
    request = exchange.request
    if request is None or exchange.bound_operation is not None:
        return exchange
    method, path = request.method, request.path
    if not method or not path:
        missing = " and ".join(n for n, v in ((":method", method), (":path", path)) if not v)
        exchange.flag(
            RuleId.HEADERS_INCOMPLETE, Severity.WARNING,
            f"request lacks {missing}; operation unknown", request.first_frame,
        )
        return exchange
    result = lookup_operation(method, path, index)
    if isinstance(result, OperationMatch):
        exchange.bound_operation = result
        return exchange
    _record_miss(exchange, result, request)
    return exchange


def _record_miss(exchange: HttpExchange, miss: LookupMiss, request: HttpMessage) -> None:
    where = f"{request.method} {request.path}"
    if miss.reason == MissReason.UNSUPPORTED_VERSION:
        exchange.version_status = VersionStatus(found=miss.found_version, expected=miss.expected_version)
        exchange.flag(RuleId.UNSUPPORTED_API_VERSION, Severity.ERROR, f"{where}: {miss.detail}", request.first_frame)
    elif miss.reason == MissReason.METHOD_NOT_ALLOWED:
        exchange.flag(RuleId.METHOD_NOT_ALLOWED, Severity.ERROR, f"{where}: {miss.detail}", request.first_frame)
    else:
        exchange.flag(RuleId.UNKNOWN_PATH, Severity.ERROR, f"{where}: {miss.detail}", request.first_frame)


def declared_content_types(exchange: HttpExchange, side: MessageKind) -> List[str]:
    """Content types the bound operation declares for one side of the exchange."""
    if exchange.bound_operation is None:
        return []
    operation = exchange.bound_operation.operation
    if side == MessageKind.REQUEST:
        return list(operation.request_body)
    status = exchange.response.status if exchange.response is not None else None
    found = operation.response_for(status) if status is not None else None
    return list(found[1].content) if found else []


def _sniff(body: bytes) -> Optional[str]:
    try:
        parse_json(body)
    except (ValueError, UnicodeDecodeError):
        return None
    return "application/json"


def augment_headers(exchange: HttpExchange, index: Optional[SpecIndex] = None) -> HttpExchange:
    """
    Fill gaps left by lost header references. Only degraded header lists are
    touched and decoded values are never replaced; running it twice changes nothing.
    """
    if index is not None:
        match_operation(exchange, index)
    for side, message in ((MessageKind.REQUEST, exchange.request), (MessageKind.RESPONSE, exchange.response)):
        if message is None or not message.headers.degraded:
            continue
        if message.body and message.content_type is None:
            sniffed = _sniff(message.body)
            declared = declared_content_types(exchange, side)
            if len(declared) == 1 and media_type(declared[0]) != sniffed:
                value, source = declared[0], AugmentationSource.SPEC_DEFAULT
            elif sniffed is not None:
                value, source = sniffed, AugmentationSource.CONTENT_SNIFF
            else:
                value = None
            if value is not None:
                message.headers.add("content-type", value)
                exchange.augmentations.append(AugmentationNote(header="content-type", source=source, side=side, value=value))
                exchange.flag(
                    RuleId.HEADERS_INCOMPLETE, Severity.INFO,
                    f"{side.value} content-type lost; assumed {value} ({source.value})", message.first_frame,
                )
                logger.debug("exchange %d: %s content-type %s from %s", exchange.exchange_id, side.value, value, source.value)
        if side == MessageKind.RESPONSE and ":status" not in message.headers:
            already = any(a.header == ":status" for a in exchange.augmentations)
            if not already:
                exchange.augmentations.append(AugmentationNote(
                    header=":status", source=AugmentationSource.UNRECOVERABLE, side=side,
                ))
                exchange.flag(
                    RuleId.HEADERS_INCOMPLETE, Severity.WARNING,
                    "response :status lost to header compression; response not validated", message.first_frame,
                )
    return exchange


def normalize_uri(authority: str, path: str, scheme: str = "http") -> str:
    """authority + path with the scheme's default port dropped and the query removed."""
    host = authority.strip().lower()
    default = _DEFAULT_PORTS.get(scheme.lower())
    if default is not None and host.endswith(f":{default}") and not host.endswith("]"):
        host = host[: -len(f":{default}")]
    path = (path or "/").split("?", 1)[0].split("#", 1)[0] or "/"
    return f"{host}{path}"


def callback_uri(value: str) -> Optional[str]:
    parts = urlsplit(value.strip())
    if not parts.netloc:
        return None
    return normalize_uri(parts.netloc, parts.path, parts.scheme or "http")


def _subscription(exchange: HttpExchange, properties: Sequence[str]) -> Optional[SubscriptionRecord]:
    request = exchange.request
    if request is None or not request.body:
        return None
    try:
        body = parse_json(request.body)
    except (ValueError, UnicodeDecodeError):
        return None
    if not isinstance(body, dict):
        return None
    for name in properties:
        value = body.get(name)
        uri = callback_uri(value) if isinstance(value, str) else None
        if uri:
            location = exchange.response.headers.get("location") if exchange.response is not None else None
            return SubscriptionRecord(exchange.exchange_id, uri, name, location)
    return None


def _bind_callback(notification: HttpExchange, subscription: HttpExchange) -> None:
    match = subscription.bound_operation
    if match is None or notification.request is None:
        return
    method = notification.request.method
    callback = next((op for op in match.operation.callbacks if op.method == method), None)
    if callback is None:
        return
    notification.bound_operation = OperationMatch(entry=match.entry, operation=callback, path_params=MappingProxyType({}))
    # the consumer's callback path is not part of any API base path
    notification.findings = [f for f in notification.findings if f.rule_id != RuleId.UNKNOWN_PATH]


def link_subscriptions(
    exchanges: Sequence[HttpExchange], callback_properties: Sequence[str] = DEFAULT_CALLBACK_PROPERTIES,
) -> List[SubscriptionRecord]:
    """
    Link each request sent to a registered callback URI with the latest earlier
    subscription naming that URI; links are kept symmetric.
    """
    registered: Dict[str, HttpExchange] = {}
    records: List[SubscriptionRecord] = []
    for exchange in sorted(exchanges, key=lambda e: e.first_frame):
        request = exchange.request
        if request is not None and request.authority and request.path:
            scheme = request.headers.get(":scheme") or "http"
            target = registered.get(normalize_uri(request.authority, request.path, scheme))
            if target is not None and target is not exchange:
                if exchange.exchange_id not in target.links:
                    target.links.append(exchange.exchange_id)
                if target.exchange_id not in exchange.links:
                    exchange.links.append(target.exchange_id)
                if exchange.bound_operation is None:
                    _bind_callback(exchange, target)
        record = _subscription(exchange, callback_properties)
        if record is not None:
            registered[record.callback_uri] = exchange
            records.append(record)
    for exchange in exchanges:
        exchange.links.sort()
    return records


def correlate(
    messages: Sequence[HttpMessage],
    index: SpecIndex,
    callback_properties: Sequence[str] = DEFAULT_CALLBACK_PROPERTIES,
) -> Tuple[List[HttpExchange], List[SubscriptionRecord]]:
    """pair -> match -> augment -> link, the order every stage after decoding relies on."""
    exchanges = pair_exchanges(messages)
    for exchange in exchanges:
        match_operation(exchange, index)
        augment_headers(exchange, index)
    records = link_subscriptions(exchanges, callback_properties)
    return exchanges, records
