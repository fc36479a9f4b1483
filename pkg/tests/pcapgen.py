"""
Synthetic captures for the test suite.

HTTP/2 frames are built by hand, header blocks come from hpack.Encoder and the
TCP/IP layers from dpkt. Every HTTP/2 frame travels in its own TCP segment, so
capture frame numbers and HTTP/2 frames line up one to one.
"""
import json
import socket
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import dpkt
import yaml
from hpack import Encoder

FIXTURES = Path(__file__).parent / "fixtures"
SPEC_DIR = FIXTURES / "specs"
ISSUE_DIR = FIXTURES / "issues"

PREFACE = b"PRI * HTTP/2.0\r\n\r\nSM\r\n\r\n"
DATA, HEADERS, PRIORITY, RST_STREAM, SETTINGS, PUSH_PROMISE, PING, GOAWAY, WINDOW_UPDATE, CONTINUATION = range(10)
END_STREAM = 0x1
ACK = 0x1
END_HEADERS = 0x4
PADDED = 0x8
PRIORITY_FLAG = 0x20

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
TCP_DATA_FLAGS = dpkt.tcp.TH_ACK | dpkt.tcp.TH_PUSH


# HTTP/2 frames
def h2_frame(frame_type: int, flags: int, stream_id: int, payload: bytes = b"") -> bytes:
    return len(payload).to_bytes(3, "big") + bytes([frame_type, flags]) + stream_id.to_bytes(4, "big") + payload


def settings_frame(params: Optional[Dict[int, int]] = None, ack: bool = False) -> bytes:
    payload = b"".join(struct.pack(">HI", key, value) for key, value in (params or {}).items())
    return h2_frame(SETTINGS, ACK if ack else 0, 0, payload)


def headers_frame(block: bytes, stream_id: int, end_stream: bool = False, end_headers: bool = True,
                  padding: int = 0, priority: bool = False) -> bytes:
    flags = (END_STREAM if end_stream else 0) | (END_HEADERS if end_headers else 0)
    payload = block
    if priority:
        flags |= PRIORITY_FLAG
        payload = struct.pack(">IB", 0, 15) + payload
    if padding:
        flags |= PADDED
        payload = bytes([padding]) + payload + b"\0" * padding
    return h2_frame(HEADERS, flags, stream_id, payload)


def continuation_frame(block: bytes, stream_id: int, end_headers: bool = True) -> bytes:
    return h2_frame(CONTINUATION, END_HEADERS if end_headers else 0, stream_id, block)


def data_frame(payload: bytes, stream_id: int, end_stream: bool = True, padding: int = 0) -> bytes:
    flags = END_STREAM if end_stream else 0
    if padding:
        flags |= PADDED
        payload = bytes([padding]) + payload + b"\0" * padding
    return h2_frame(DATA, flags, stream_id, payload)


def window_update_frame(stream_id: int = 0, increment: int = 65535) -> bytes:
    return h2_frame(WINDOW_UPDATE, 0, stream_id, struct.pack(">I", increment))


# TCP/IP
def _ip_packet(src: str, dst: str, tcp: dpkt.tcp.TCP):
    if ":" in src:
        return dpkt.ip6.IP6(
            src=socket.inet_pton(socket.AF_INET6, src), dst=socket.inet_pton(socket.AF_INET6, dst),
            nxt=dpkt.ip.IP_PROTO_TCP, hlim=64, plen=len(bytes(tcp)), data=tcp,
        )
    return dpkt.ip.IP(
        src=socket.inet_aton(src), dst=socket.inet_aton(dst), p=dpkt.ip.IP_PROTO_TCP, ttl=64, data=tcp,
    )


def tcp_packet(src: Tuple[str, int], dst: Tuple[str, int], seq: int, payload: bytes = b"",
               flags: int = TCP_DATA_FLAGS, ack: int = 0, linktype: int = LINKTYPE_ETHERNET) -> bytes:
    tcp = dpkt.tcp.TCP(sport=src[1], dport=dst[1], seq=seq % (1 << 32), ack=ack, flags=flags, win=65535, data=payload)
    ip = _ip_packet(src[0], dst[0], tcp)
    if linktype == LINKTYPE_RAW:
        return bytes(ip)
    eth_type = dpkt.ethernet.ETH_TYPE_IP6 if ":" in src[0] else dpkt.ethernet.ETH_TYPE_IP
    return bytes(dpkt.ethernet.Ethernet(src=b"\x02\0\0\0\0\x01", dst=b"\x02\0\0\0\0\x02", type=eth_type, data=ip))


@dataclass
class Record:
    timestamp: float
    data: bytes


class CaptureBuilder:
    """Collects link-layer frames and writes them as PCAP or PCAPNG."""

    def __init__(self, linktype: int = LINKTYPE_ETHERNET, start: float = 1_700_000_000.0):
        self.linktype = linktype
        self.clock = start
        self.records: List[Record] = []
        self._connections: Dict[str, "H2Connection"] = {}

    def add(self, data: bytes) -> int:
        self.clock += 0.001
        self.records.append(Record(round(self.clock, 6), data))
        return len(self.records)

    def tcp(self, client: Tuple[str, int], server: Tuple[str, int], client_isn: int = 1000,
            server_isn: int = 5000) -> "TcpConnection":
        return TcpConnection(self, client, server, client_isn, server_isn)

    def h2(self, name: str = "main", client: Optional[Tuple[str, int]] = None,
           server: Optional[Tuple[str, int]] = None, **kwargs: Any) -> "H2Connection":
        """Named h2c connection, opened (handshake, preface, SETTINGS) on first use."""
        if name not in self._connections:
            n = len(self._connections) + 1
            client = client or (f"10.0.{n}.1", 40000 + n)
            server = server or (f"10.0.{n}.2", 80)
            connection = H2Connection(self.tcp(client, server), **kwargs)
            connection.open()
            self._connections[name] = connection
        return self._connections[name]

    def write_pcap(self, path: Path, little_endian: bool = True, nanoseconds: bool = False,
                   records: Optional[Sequence[Record]] = None, truncate: int = 0) -> Path:
        order = "<" if little_endian else ">"
        magic = 0xA1B23C4D if nanoseconds else 0xA1B2C3D4
        scale = 1_000_000_000 if nanoseconds else 1_000_000
        out = bytearray(struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, 262144, self.linktype))
        for record in self.records if records is None else records:
            seconds = int(record.timestamp)
            fraction = int(round((record.timestamp - seconds) * scale))
            out += struct.pack(order + "IIII", seconds, fraction, len(record.data), len(record.data))
            out += record.data
        if truncate:
            del out[-truncate:]
        path = Path(path)
        path.write_bytes(bytes(out))
        return path

    def write_pcapng(self, path: Path) -> Path:
        path = Path(path)
        with path.open("wb") as fobj:
            writer = dpkt.pcapng.Writer(fobj, snaplen=262144, linktype=self.linktype)
            for record in self.records:
                writer.writepkt(record.data, ts=record.timestamp)
        return path


class TcpConnection:
    def __init__(self, builder: CaptureBuilder, client: Tuple[str, int], server: Tuple[str, int],
                 client_isn: int, server_isn: int):
        self.builder = builder
        self.client = client
        self.server = server
        self.isn = {True: client_isn, False: server_isn}
        self.next_seq = {True: client_isn + 1, False: server_isn + 1}

    def handshake(self) -> None:
        b = self.builder
        b.add(tcp_packet(self.client, self.server, self.isn[True], flags=dpkt.tcp.TH_SYN, linktype=b.linktype))
        b.add(tcp_packet(self.server, self.client, self.isn[False], flags=dpkt.tcp.TH_SYN | dpkt.tcp.TH_ACK,
                         ack=self.isn[True] + 1, linktype=b.linktype))
        b.add(tcp_packet(self.client, self.server, self.isn[True] + 1, flags=dpkt.tcp.TH_ACK,
                         ack=self.isn[False] + 1, linktype=b.linktype))

    def send(self, from_client: bool, payload: bytes) -> int:
        """One segment carrying payload at the sender's next sequence number."""
        frame = self.segment(from_client, payload, self.next_seq[from_client])
        self.next_seq[from_client] += len(payload)
        return frame

    def segment(self, from_client: bool, payload: bytes, seq: int) -> int:
        """A segment at an explicit sequence number (retransmissions, reordering)."""
        src, dst = (self.client, self.server) if from_client else (self.server, self.client)
        return self.builder.add(tcp_packet(src, dst, seq, payload, ack=self.next_seq[not from_client],
                                           linktype=self.builder.linktype))


class H2Connection:
    """Both ends of one h2c connection, each with its own HPACK encoder."""

    def __init__(self, tcp: TcpConnection, handshake: bool = True, huffman: bool = True,
                 client_settings: Optional[Dict[int, int]] = None):
        self.tcp = tcp
        self.handshake = handshake
        self.huffman = huffman
        self.client_settings = client_settings
        self.encoders = {True: Encoder(), False: Encoder()}
        self.next_stream_id = 1

    def open(self) -> None:
        if self.handshake:
            self.tcp.handshake()
        self.tcp.send(True, PREFACE)
        self.tcp.send(True, settings_frame(self.client_settings))
        self.tcp.send(False, settings_frame({0x3: 100}))
        self.tcp.send(True, settings_frame(ack=True))
        self.tcp.send(False, settings_frame(ack=True))

    def header_block(self, from_client: bool, headers: Iterable[Tuple[str, str]]) -> bytes:
        return self.encoders[from_client].encode(list(headers), huffman=self.huffman)

    def send_message(self, from_client: bool, stream_id: int, headers: Iterable[Tuple[str, str]],
                     body: Optional[bytes]) -> None:
        block = self.header_block(from_client, headers)
        self.tcp.send(from_client, headers_frame(block, stream_id, end_stream=body is None))
        if body is not None:
            self.tcp.send(from_client, data_frame(body, stream_id))

    def request(self, method: str, path: str, authority: str, headers: Sequence[Tuple[str, str]] = (),
                body: Optional[bytes] = None) -> int:
        stream_id = self.next_stream_id
        self.next_stream_id += 2
        pseudo = [(":method", method), (":scheme", "http"), (":authority", authority), (":path", path)]
        self.send_message(True, stream_id, [*pseudo, *headers], body)
        return stream_id

    def respond(self, stream_id: int, status: int, headers: Sequence[Tuple[str, str]] = (),
                body: Optional[bytes] = None) -> None:
        self.send_message(False, stream_id, [(":status", str(status)), *headers], body)


# Issue scripts
def encode_body(message: Dict[str, Any]) -> Optional[bytes]:
    if "raw_body" in message:
        return str(message["raw_body"]).encode()
    if "body" in message:
        return json.dumps(message["body"], separators=(",", ":")).encode()
    return None


def message_headers(message: Dict[str, Any], body: Optional[bytes]) -> List[Tuple[str, str]]:
    headers: List[Tuple[str, str]] = []
    content_type = message.get("content_type", "application/json" if body is not None else None)
    if content_type:
        headers.append(("content-type", content_type))
    for name, value in (message.get("headers") or {}).items():
        headers.append((name.lower(), str(value)))
    return headers


def add_exchanges(builder: CaptureBuilder, exchanges: Sequence[Dict[str, Any]]) -> CaptureBuilder:
    """
    Replay script exchanges. Each exchange is {request, response, connection?};
    messages carry method/path/authority or status, optional content_type
    (null omits it), headers, and body (JSON value) or raw_body (text).
    """
    for exchange in exchanges:
        connection = builder.h2(exchange.get("connection", "main"))
        request = exchange["request"]
        body = encode_body(request)
        stream_id = connection.request(
            request.get("method", "GET"), request["path"], request.get("authority", "nf.5gc:80"),
            message_headers(request, body), body,
        )
        response = exchange.get("response")
        if response is not None:
            body = encode_body(response)
            connection.respond(stream_id, int(response["status"]), message_headers(response, body), body)
    return builder


def load_issue(name: str) -> Dict[str, Any]:
    with (ISSUE_DIR / f"{name}.yaml").open() as f:
        return yaml.safe_load(f)


def issue_names() -> List[str]:
    return sorted(p.stem for p in ISSUE_DIR.glob("*.yaml"))


def script_capture(path: Path, exchanges: Sequence[Dict[str, Any]], **write_options: Any) -> Path:
    builder = add_exchanges(CaptureBuilder(), exchanges)
    return builder.write_pcap(path, **write_options)
