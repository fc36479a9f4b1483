"""
PCAP / PCAPNG reading and TCP stream reassembly.
"""
import bisect
import ipaddress
import logging
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import dpkt

from ..errors import CaptureFileMissing, UnrecognizedCaptureFormat
from ..models import Direction, NoteKind
from ..schemas import DecodeNote

logger = logging.getLogger(__name__)

# Link-layer header types
LINKTYPE_NULL = 0
LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_RAW_LEGACY = (12, 14)
LINKTYPE_LINUX_SLL = 113
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229
SUPPORTED_LINKTYPES = frozenset(
    {LINKTYPE_NULL, LINKTYPE_ETHERNET, LINKTYPE_RAW, LINKTYPE_LINUX_SLL, LINKTYPE_IPV4, LINKTYPE_IPV6}
    | set(LINKTYPE_RAW_LEGACY)
)

PCAPNG_MAGIC = b"\x0a\x0d\x0d\x0a"
# magic bytes as stored -> (little endian, nanosecond resolution)
PCAP_MAGICS = {
    b"\xd4\xc3\xb2\xa1": (True, False),
    b"\x4d\x3c\xb2\xa1": (True, True),
    b"\xa1\xb2\xc3\xd4": (False, False),
    b"\xa1\xb2\x3c\x4d": (False, True),
}
_PCAP_FILE_HEADER_LEN = 24
_PCAP_RECORD_HEADER_LEN = 16
_SEQ_MOD = 1 << 32


@dataclass(frozen=True, order=True)
class Endpoint:
    ip: str
    port: int

    def __str__(self) -> str:
        host = f"[{self.ip}]" if ":" in self.ip else self.ip
        return f"{host}:{self.port}"


@dataclass(frozen=True)
class CapturePacket:
    frame_number: int
    timestamp: float
    src: Endpoint
    dst: Endpoint
    payload: bytes
    seq: int
    flags: int

    @property
    def stream_key(self) -> Tuple[Endpoint, Endpoint]:
        return (self.src, self.dst) if self.src <= self.dst else (self.dst, self.src)

    @property
    def syn(self) -> bool:
        return bool(self.flags & dpkt.tcp.TH_SYN)

    @property
    def ack(self) -> bool:
        return bool(self.flags & dpkt.tcp.TH_ACK)


@dataclass
class CaptureFile:
    path: str
    packets: List[CapturePacket] = field(default_factory=list)
    notes: List[DecodeNote] = field(default_factory=list)
    frame_count: int = 0


# Link layer
def _network_layer(linktype: int, data: bytes):
    if linktype == LINKTYPE_ETHERNET:
        return dpkt.ethernet.Ethernet(data).data
    if linktype == LINKTYPE_LINUX_SLL:
        return dpkt.sll.SLL(data).data
    if linktype == LINKTYPE_NULL:
        return dpkt.loopback.Loopback(data).data
    if not data:
        return None
    version = data[0] >> 4
    if version == 4:
        return dpkt.ip.IP(data)
    if version == 6:
        return dpkt.ip6.IP6(data)
    return None


def _to_packet(linktype: int, data: bytes, frame_number: int, timestamp: float, notes: List[DecodeNote]) -> Optional[CapturePacket]:
    try:
        ip = _network_layer(linktype, data)
    except (dpkt.UnpackError, struct.error, ValueError):
        return None
    if isinstance(ip, dpkt.ip.IP):
        if ip.mf or ip.offset:
            if ip.p == dpkt.ip.IP_PROTO_TCP:
                notes.append(DecodeNote(
                    kind=NoteKind.IP_FRAGMENT, message="fragmented IPv4 packet skipped", frame_number=frame_number,
                ))
            return None
    elif not isinstance(ip, dpkt.ip6.IP6):
        return None
    tcp = ip.data
    if not isinstance(tcp, dpkt.tcp.TCP):
        return None
    return CapturePacket(
        frame_number=frame_number,
        timestamp=timestamp,
        src=Endpoint(str(ipaddress.ip_address(ip.src)), tcp.sport),
        dst=Endpoint(str(ipaddress.ip_address(ip.dst)), tcp.dport),
        payload=bytes(tcp.data),
        seq=tcp.seq,
        flags=tcp.flags,
    )


def _truncated(capture: CaptureFile, frame_number: int) -> None:
    message = f"{Path(capture.path).name} truncated after frame {frame_number}"
    logger.warning(message)
    capture.notes.append(DecodeNote(kind=NoteKind.TRUNCATED_FILE, message=message, frame_number=frame_number or None))


def _read_pcap(fobj, capture: CaptureFile, little_endian: bool, nanoseconds: bool) -> None:
    head = fobj.read(_PCAP_FILE_HEADER_LEN)
    if len(head) < _PCAP_FILE_HEADER_LEN:
        _truncated(capture, 0)
        return
    file_header = (dpkt.pcap.LEFileHdr if little_endian else dpkt.pcap.FileHdr)(head)
    linktype = file_header.linktype & 0x0FFFFFFF
    if linktype not in SUPPORTED_LINKTYPES:
        raise UnrecognizedCaptureFormat(capture.path, reason=f"unsupported link type {linktype}")
    record_header = dpkt.pcap.LEPktHdr if little_endian else dpkt.pcap.PktHdr
    divisor = 1e9 if nanoseconds else 1e6
    frame_number = 0
    while True:
        raw = fobj.read(_PCAP_RECORD_HEADER_LEN)
        if not raw:
            break
        if len(raw) < _PCAP_RECORD_HEADER_LEN:
            _truncated(capture, frame_number)
            break
        header = record_header(raw)
        data = fobj.read(header.caplen)
        if len(data) < header.caplen:
            _truncated(capture, frame_number)
            break
        frame_number += 1
        packet = _to_packet(linktype, data, frame_number, header.tv_sec + header.tv_usec / divisor, capture.notes)
        if packet is not None:
            capture.packets.append(packet)
    capture.frame_count = frame_number


def _read_pcapng(fobj, capture: CaptureFile) -> None:
    frame_number = 0
    try:
        reader = dpkt.pcapng.Reader(fobj)
    except (dpkt.UnpackError, struct.error, ValueError) as e:
        raise UnrecognizedCaptureFormat(capture.path, reason=str(e)) from e
    linktype = reader.datalink()
    if linktype not in SUPPORTED_LINKTYPES:
        raise UnrecognizedCaptureFormat(capture.path, reason=f"unsupported link type {linktype}")
    try:
        for timestamp, data in reader:
            frame_number += 1
            packet = _to_packet(linktype, data, frame_number, float(timestamp), capture.notes)
            if packet is not None:
                capture.packets.append(packet)
    except (dpkt.UnpackError, struct.error, ValueError):
        _truncated(capture, frame_number)
    capture.frame_count = frame_number


def read_capture(path: Union[str, Path]) -> CaptureFile:
    """Read TCP packets from a PCAP or PCAPNG file; frame numbers count every record."""
    path = Path(path)
    if not path.is_file():
        raise CaptureFileMissing(f"Capture file {path} not found")
    capture = CaptureFile(path=str(path))
    with path.open("rb") as fobj:
        magic = fobj.read(4)
        fobj.seek(0)
        if magic == PCAPNG_MAGIC:
            _read_pcapng(fobj, capture)
        elif magic in PCAP_MAGICS:
            little_endian, nanoseconds = PCAP_MAGICS[magic]
            _read_pcap(fobj, capture, little_endian, nanoseconds)
        else:
            raise UnrecognizedCaptureFormat(str(path), magic)
    logger.debug("%s: %d frames, %d TCP packets", path.name, capture.frame_count, len(capture.packets))
    return capture


# TCP reassembly
@dataclass(frozen=True)
class Gap:
    offset: int      # position in the delivered bytes where the hole sits
    missing: int     # number of absent bytes


@dataclass
class StreamDirection:
    data: bytes = b""
    spans: List[Tuple[int, int, int]] = field(default_factory=list)  # (start, end, frame)
    gaps: List[Gap] = field(default_factory=list)

    @cached_property
    def span_starts(self) -> List[int]:
        return [s[0] for s in self.spans]

    def frame_at(self, offset: int) -> int:
        """Capture frame that delivered the byte at offset."""
        if not self.spans:
            return 0
        i = bisect.bisect_right(self.span_starts, offset) - 1
        return self.spans[max(i, 0)][2]

    def chunks(self) -> List[Tuple[int, int]]:
        """Contiguous (start, end) ranges of data between gaps."""
        bounds = [0] + [g.offset for g in self.gaps if 0 < g.offset < len(self.data)] + [len(self.data)]
        return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


@dataclass
class TcpStream:
    stream_id: int
    client: Endpoint
    server: Endpoint
    directions: Tuple[StreamDirection, StreamDirection]
    handshake_seen: bool = False
    first_frame: int = 0
    notes: List[DecodeNote] = field(default_factory=list)

    def direction(self, direction: Direction) -> StreamDirection:
        return self.directions[direction]

    @property
    def gaps(self) -> List[Tuple[Direction, Gap]]:
        return [(d, g) for d in Direction for g in self.directions[d].gaps]


@dataclass
class _Piece:
    start: int
    end: int
    data: bytes
    frame: int


def _relative(seq: int, reference: int) -> int:
    diff = (seq - reference) % _SEQ_MOD
    return diff - _SEQ_MOD if diff >= _SEQ_MOD // 2 else diff


def _reassemble_direction(
    segments: List[CapturePacket], isn: Optional[int], label: str, notes: List[DecodeNote],
) -> StreamDirection:
    if not segments:
        return StreamDirection()
    reference = isn if isn is not None else segments[0].seq
    placed = [(_relative(p.seq, reference), p) for p in segments]
    base = 0 if isn is not None else min(rel for rel, _ in placed)

    pieces: List[_Piece] = []
    starts: List[int] = []
    for rel, packet in placed:
        start = rel - base
        end = start + len(packet.payload)
        if end <= 0:
            continue
        cursor = max(start, 0)
        fresh: List[Tuple[int, int]] = []
        i = max(bisect.bisect_right(starts, cursor) - 1, 0)
        conflict = False
        while i < len(pieces) and pieces[i].start < end:
            piece = pieces[i]
            if piece.end > cursor:
                if piece.start > cursor:
                    fresh.append((cursor, piece.start))
                lo, hi = max(piece.start, cursor), min(piece.end, end)
                if lo < hi:
                    old = piece.data[lo - piece.start:hi - piece.start]
                    new = packet.payload[lo - start:hi - start]
                    conflict = conflict or old != new
                    cursor = hi
            i += 1
        if cursor < end:
            fresh.append((cursor, end))
        if conflict:
            notes.append(DecodeNote(
                kind=NoteKind.TCP_OVERLAP_CONFLICT,
                message=f"{label}: retransmitted bytes differ; first-arrived bytes kept",
                frame_number=packet.frame_number,
            ))
        for lo, hi in fresh:
            index = bisect.bisect_left(starts, lo)
            starts.insert(index, lo)
            pieces.insert(index, _Piece(lo, hi, packet.payload[lo - start:hi - start], packet.frame_number))

    result = StreamDirection()
    buffer = bytearray()
    position = 0
    for piece in pieces:
        if piece.start > position:
            gap = Gap(offset=len(buffer), missing=piece.start - position)
            result.gaps.append(gap)
            notes.append(DecodeNote(
                kind=NoteKind.TCP_GAP,
                message=f"{label}: {gap.missing} bytes missing before offset {len(buffer)}",
                frame_number=piece.frame,
            ))
        result.spans.append((len(buffer), len(buffer) + len(piece.data), piece.frame))
        buffer.extend(piece.data)
        position = piece.end
    result.data = bytes(buffer)
    return result


def _pick_client(packets: List[CapturePacket]) -> Tuple[Endpoint, Endpoint, bool]:
    for p in packets:
        if p.syn and not p.ack:
            return p.src, p.dst, True
    for p in packets:
        if p.syn and p.ack:
            return p.dst, p.src, True
    # mid-stream: the ephemeral (higher) port is taken as the client
    a, b = packets[0].src, packets[0].dst
    if a.port != b.port:
        return (a, b, False) if a.port > b.port else (b, a, False)
    return a, b, False


def _build_stream(stream_id: int, packets: List[CapturePacket]) -> TcpStream:
    client, server, handshake = _pick_client(packets)
    notes: List[DecodeNote] = []
    directions = []
    for direction, sender in ((Direction.CLIENT_TO_SERVER, client), (Direction.SERVER_TO_CLIENT, server)):
        sent = [p for p in packets if p.src == sender]
        syn = next((p for p in sent if p.syn), None)
        isn = (syn.seq + 1) % _SEQ_MOD if syn is not None else None
        segments = [p for p in sent if p.payload]
        label = f"tcp stream {stream_id} {sender}"
        directions.append(_reassemble_direction(segments, isn, label, notes))
    for note in notes:
        logger.warning(note.message)
    return TcpStream(
        stream_id=stream_id,
        client=client,
        server=server,
        directions=(directions[0], directions[1]),
        handshake_seen=handshake,
        first_frame=packets[0].frame_number,
        notes=notes,
    )


def reassemble_tcp(packets: List[CapturePacket]) -> List[TcpStream]:
    """
    Group packets into connections and rebuild both byte streams.
    Stream ids follow first appearance; a fresh SYN on a used 4-tuple opens a new stream.
    """
    groups: Dict[Tuple[Endpoint, Endpoint], List[CapturePacket]] = {}
    finished: List[List[CapturePacket]] = []
    for packet in packets:
        key = packet.stream_key
        current = groups.get(key)
        if current is not None and packet.syn and not packet.ack and any(p.payload for p in current):
            finished.append(current)
            current = None
        if current is None:
            current = groups[key] = []
        current.append(packet)
    finished.extend(groups.values())
    finished.sort(key=lambda group: group[0].frame_number)
    return [_build_stream(i, group) for i, group in enumerate(finished)]
