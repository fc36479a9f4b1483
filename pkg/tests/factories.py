"""HttpMessage builders for tests that start after HTTP/2 decoding."""
import json

from sbilint.models import Direction, MessageKind
from sbilint.stages.hpack_decoder import HeaderList
from sbilint.stages.http2 import HttpMessage


def _body(body, raw_body):
    if raw_body is not None:
        return raw_body if isinstance(raw_body, bytes) else raw_body.encode()
    return json.dumps(body).encode() if body is not None else b""


def request(frame, path, method="GET", stream=1, tcp=0, body=None, authority="nrf.5gc:80",
            content_type="application/json", degraded=False, raw_body=None):
    fields = [(":method", method), (":scheme", "http"), (":authority", authority), (":path", path)]
    raw = _body(body, raw_body)
    if raw and content_type:
        fields.append(("content-type", content_type))
    headers = HeaderList(fields=fields, undecodable=1 if degraded else 0)
    return HttpMessage(MessageKind.REQUEST, headers, tcp, stream, Direction.CLIENT_TO_SERVER, frame, frame, body=raw)


def response(frame, status=200, stream=1, tcp=0, body=None, headers=(), content_type="application/json",
             degraded=False, missing=False, raw_body=None):
    fields = [(":status", str(status))] if status is not None else []
    raw = _body(body, raw_body)
    if raw and content_type:
        fields.append(("content-type", content_type))
    fields.extend(headers)
    header_list = HeaderList(fields=fields, undecodable=1 if degraded else 0, missing=missing)
    return HttpMessage(MessageKind.RESPONSE, header_list, tcp, stream, Direction.SERVER_TO_CLIENT, frame, frame, body=raw)
