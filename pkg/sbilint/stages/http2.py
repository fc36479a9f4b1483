"""
Cleartext HTTP/2 (h2c) framing on top of reassembled TCP streams.
"""
import enum
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple

from ..models import Direction, MessageKind, NoteKind
from ..schemas import DecodeNote
from .capture import TcpStream
from .hpack_decoder import DEFAULT_TABLE_SIZE, DynamicTable, HeaderList, decode_hpack

logger = logging.getLogger(__name__)

CLIENT_PREFACE = b"PRI * HTTP/2.0\r\n\r\nSM\r\n\r\n"
FRAME_HEADER_LEN = 9
MAX_FRAME_LENGTH = (1 << 24) - 1
SETTINGS_HEADER_TABLE_SIZE = 0x1
DEFAULT_MIN_FRAMES = 3

FLAG_END_STREAM = 0x1
FLAG_ACK = 0x1
FLAG_END_HEADERS = 0x4
FLAG_PADDED = 0x8
FLAG_PRIORITY = 0x20


class FrameType(enum.IntEnum):
    DATA = 0x0
    HEADERS = 0x1
    PRIORITY = 0x2
    RST_STREAM = 0x3
    SETTINGS = 0x4
    PUSH_PROMISE = 0x5
    PING = 0x6
    GOAWAY = 0x7
    WINDOW_UPDATE = 0x8
    CONTINUATION = 0x9


_KNOWN_TYPES = frozenset(t.value for t in FrameType)
_CONNECTION_ONLY = frozenset({FrameType.SETTINGS, FrameType.PING, FrameType.GOAWAY})
_STREAM_ONLY = frozenset({
    FrameType.DATA, FrameType.HEADERS, FrameType.PRIORITY, FrameType.RST_STREAM,
    FrameType.PUSH_PROMISE, FrameType.CONTINUATION,
})
_FIXED_LENGTH = {FrameType.PRIORITY: 5, FrameType.RST_STREAM: 4, FrameType.PING: 8, FrameType.WINDOW_UPDATE: 4}


@dataclass(frozen=True)
class Http2Frame:
    frame_type: int
    flags: int
    h2_stream_id: int
    payload: bytes
    origin_frame_number: int
    direction: Direction
    offset: int = 0
    resync: bool = False  # first frame after a TCP gap

    @property
    def type_name(self) -> str:
        return FrameType(self.frame_type).name if self.frame_type in _KNOWN_TYPES else "unknown"

    def has(self, flag: int) -> bool:
        return bool(self.flags & flag)


@dataclass
class HttpMessage:
    kind: MessageKind
    headers: HeaderList
    tcp_stream_id: int
    h2_stream_id: int
    direction: Direction
    first_frame: int
    last_frame: int
    body: bytes = b""
    trailers: Optional[HeaderList] = None
    end_stream_seen: bool = False
    data_length: int = 0
    body_last_frame: Optional[int] = None
    notes: List[str] = field(default_factory=list)

    @property
    def method(self) -> Optional[str]:
        return self.headers.get(":method")

    @property
    def path(self) -> Optional[str]:
        return self.headers.get(":path")

    @property
    def authority(self) -> Optional[str]:
        return self.headers.get(":authority") or self.headers.get("host")

    @property
    def status(self) -> Optional[int]:
        raw = self.headers.get(":status")
        if raw is None or not raw.strip().isdigit():
            return None
        return int(raw)

    @property
    def content_type(self) -> Optional[str]:
        return self.headers.get("content-type")


def _plausible_header(data: bytes, pos: int) -> Optional[Tuple[int, int, int, int]]:
    if pos + FRAME_HEADER_LEN > len(data):
        return None
    length = int.from_bytes(data[pos:pos + 3], "big")
    frame_type = data[pos + 3]
    flags = data[pos + 4]
    stream_id = int.from_bytes(data[pos + 5:pos + 9], "big") & 0x7FFFFFFF
    if frame_type not in _KNOWN_TYPES or length > MAX_FRAME_LENGTH:
        return None
    if frame_type in _CONNECTION_ONLY and stream_id != 0:
        return None
    if frame_type in _STREAM_ONLY and stream_id == 0:
        return None
    if frame_type in _FIXED_LENGTH and length != _FIXED_LENGTH[frame_type]:
        return None
    if frame_type == FrameType.SETTINGS and (length % 6 or (flags & FLAG_ACK and length)):
        return None
    return length, frame_type, flags, stream_id


def _chains(data: bytes, pos: int, min_frames: int) -> bool:
    count = 0
    cursor = pos
    while True:
        header = _plausible_header(data, cursor)
        if header is None:
            return False
        end = cursor + FRAME_HEADER_LEN + header[0]
        if end > len(data):
            return count >= min_frames
        count += 1
        if end == len(data):
            return count >= min_frames
        if count >= min_frames and _plausible_header(data, end) is not None:
            return True
        cursor = end


def find_frame_alignment(data: bytes, min_frames: int = DEFAULT_MIN_FRAMES) -> Optional[int]:
    """Offset of the first frame boundary in data, or None if it does not look like HTTP/2."""
    if data.startswith(CLIENT_PREFACE):
        return len(CLIENT_PREFACE)
    for pos in range(0, max(len(data) - FRAME_HEADER_LEN + 1, 0)):
        if _chains(data, pos, min_frames):
            return pos
    return None


def detect_h2(stream: TcpStream, direction: Direction, min_frames: int = DEFAULT_MIN_FRAMES) -> Optional[int]:
    return find_frame_alignment(stream.direction(direction).data, min_frames)


def is_tls(data: bytes) -> bool:
    return len(data) >= 2 and data[0] == 0x16 and data[1] == 0x03


def parse_frames(
    data: bytes,
    start: int,
    direction: Direction = Direction.CLIENT_TO_SERVER,
    frame_of: Optional[Callable[[int], int]] = None,
    end: Optional[int] = None,
) -> Tuple[List[Http2Frame], List[DecodeNote]]:
    """
    Split data[start:end] into frames. A frame overrunning the available bytes
    stops parsing with a FramingDesync note.
    """
    end = len(data) if end is None else end
    frames: List[Http2Frame] = []
    notes: List[DecodeNote] = []
    pos = start
    while pos < end:
        if end - pos < FRAME_HEADER_LEN:
            notes.append(_desync(f"{end - pos} trailing bytes do not form a frame header", frame_of, pos))
            break
        length = int.from_bytes(data[pos:pos + 3], "big")
        frame_end = pos + FRAME_HEADER_LEN + length
        if frame_end > end:
            notes.append(_desync(f"frame length {length} overruns the remaining {end - pos - FRAME_HEADER_LEN} bytes", frame_of, pos))
            break
        frames.append(Http2Frame(
            frame_type=data[pos + 3],
            flags=data[pos + 4],
            h2_stream_id=int.from_bytes(data[pos + 5:pos + 9], "big") & 0x7FFFFFFF,
            payload=bytes(data[pos + FRAME_HEADER_LEN:frame_end]),
            origin_frame_number=frame_of(frame_end - 1) if frame_of else 0,
            direction=direction,
            offset=pos,
        ))
        pos = frame_end
    return frames, notes


def _desync(message: str, frame_of, pos: int) -> DecodeNote:
    logger.warning("framing desync: %s", message)
    return DecodeNote(kind=NoteKind.FRAMING_DESYNC, message=message, frame_number=frame_of(pos) if frame_of else None)


def settings_table_size(frame: Http2Frame) -> Optional[int]:
    """Last HEADER_TABLE_SIZE carried by a non-ACK SETTINGS frame."""
    if frame.frame_type != FrameType.SETTINGS or frame.has(FLAG_ACK):
        return None
    value = None
    for i in range(0, len(frame.payload) - 5, 6):
        if int.from_bytes(frame.payload[i:i + 2], "big") == SETTINGS_HEADER_TABLE_SIZE:
            value = int.from_bytes(frame.payload[i + 2:i + 6], "big")
    return value


def _strip_padding(frame: Http2Frame) -> Optional[bytes]:
    payload = frame.payload
    pad = 0
    if frame.has(FLAG_PADDED):
        if not payload:
            return None
        pad = payload[0]
        payload = payload[1:]
    if frame.frame_type == FrameType.HEADERS and frame.has(FLAG_PRIORITY):
        if len(payload) < 5:
            return None
        payload = payload[5:]
    if pad > len(payload):
        return None
    return payload[:len(payload) - pad]


@dataclass
class _PendingBlock:
    h2_stream_id: int
    fragments: List[bytes]
    first_frame: int
    end_stream: bool


class _Assembler:
    def __init__(self, tcp_stream_id: int, direction: Direction, initiator: Direction,
                 table: DynamicTable, degraded: bool):
        self.tcp_stream_id = tcp_stream_id
        self.direction = direction
        self.initiator = initiator
        self.table = table
        self.degraded = degraded
        self.open: Dict[int, HttpMessage] = {}
        self.bodies: Dict[int, List[bytes]] = {}
        self.done: List[HttpMessage] = []
        self.notes: List[DecodeNote] = []
        self.pending: Optional[_PendingBlock] = None

    def _note(self, kind: NoteKind, message: str, frame_number: int) -> None:
        logger.info("tcp stream %d: %s", self.tcp_stream_id, message)
        self.notes.append(DecodeNote(kind=kind, message=f"tcp stream {self.tcp_stream_id}: {message}", frame_number=frame_number))

    def _kind(self, headers: HeaderList) -> MessageKind:
        if ":method" in headers:
            return MessageKind.REQUEST
        if ":status" in headers:
            return MessageKind.RESPONSE
        return MessageKind.REQUEST if self.direction == self.initiator else MessageKind.RESPONSE

    def _new_message(self, h2_stream_id: int, headers: HeaderList, first_frame: int) -> HttpMessage:
        previous = self.open.pop(h2_stream_id, None)
        if previous is not None:
            self._close(previous, h2_stream_id)
        message = HttpMessage(
            kind=self._kind(headers),
            headers=headers,
            tcp_stream_id=self.tcp_stream_id,
            h2_stream_id=h2_stream_id,
            direction=self.direction,
            first_frame=first_frame,
            last_frame=first_frame,
        )
        self.open[h2_stream_id] = message
        self.bodies[h2_stream_id] = []
        return message

    def _close(self, message: HttpMessage, h2_stream_id: int) -> None:
        message.body = b"".join(self.bodies.pop(h2_stream_id, []))
        self.done.append(message)

    def _header_block(self, block: _PendingBlock, last_frame: int) -> None:
        headers, _ = decode_hpack(b"".join(block.fragments), self.table, self.degraded)
        if headers.abandoned and not self.degraded:
            self.degraded = True
            self._note(NoteKind.HPACK_DEGRADED, f"header block undecodable ({headers.error}); decoding continues degraded", last_frame)
        elif headers.undecodable:
            self._note(NoteKind.HPACK_DEGRADED, f"{headers.undecodable} header references lost to mid-stream capture", last_frame)
        message = self.open.get(block.h2_stream_id)
        status = message.status if message is not None else None
        informational = status is not None and 100 <= status < 200 and not message.data_length
        if message is not None and not message.end_stream_seen and not informational:
            if message.data_length or block.end_stream:
                message.trailers = headers
            else:
                message.notes.append("repeated header block merged")
                for name, value in headers.fields:
                    message.headers.add(name, value)
        else:
            if informational:
                # interim 1xx response; the final header block replaces it
                self.open.pop(block.h2_stream_id)
                self.bodies.pop(block.h2_stream_id, None)
            message = self._new_message(block.h2_stream_id, headers, block.first_frame)
        message.last_frame = max(message.last_frame, last_frame)
        if block.end_stream:
            self._end(message)

    def _end(self, message: HttpMessage) -> None:
        message.end_stream_seen = True
        self.open.pop(message.h2_stream_id, None)
        self._close(message, message.h2_stream_id)

    def feed(self, frame: Http2Frame) -> None:
        if frame.resync and not self.degraded:
            self.degraded = True
            self._note(NoteKind.HPACK_DEGRADED, "bytes lost in transit; header decoding continues degraded", frame.origin_frame_number)
        if self.pending is not None and (
            frame.frame_type != FrameType.CONTINUATION or frame.h2_stream_id != self.pending.h2_stream_id
        ):
            self._note(NoteKind.MALFORMED_STREAM, f"header block on h2 stream {self.pending.h2_stream_id} interrupted", frame.origin_frame_number)
            self.pending = None
            self.degraded = True
        if frame.frame_type == FrameType.HEADERS:
            fragment = _strip_padding(frame)
            if fragment is None:
                self._note(NoteKind.MALFORMED_STREAM, f"bad padding on h2 stream {frame.h2_stream_id}", frame.origin_frame_number)
                return
            block = _PendingBlock(frame.h2_stream_id, [fragment], frame.origin_frame_number, frame.has(FLAG_END_STREAM))
            if frame.has(FLAG_END_HEADERS):
                self._header_block(block, frame.origin_frame_number)
            else:
                self.pending = block
        elif frame.frame_type == FrameType.CONTINUATION:
            if self.pending is None:
                self._note(NoteKind.MALFORMED_STREAM, f"CONTINUATION without HEADERS on h2 stream {frame.h2_stream_id}", frame.origin_frame_number)
                return
            self.pending.fragments.append(frame.payload)
            if frame.has(FLAG_END_HEADERS):
                block, self.pending = self.pending, None
                self._header_block(block, frame.origin_frame_number)
        elif frame.frame_type == FrameType.DATA:
            self._data(frame)
        elif frame.frame_type == FrameType.RST_STREAM:
            message = self.open.get(frame.h2_stream_id)
            if message is not None:
                message.notes.append("stream reset")
        elif frame.frame_type == FrameType.PUSH_PROMISE:
            logger.debug("PUSH_PROMISE on h2 stream %d ignored", frame.h2_stream_id)

    def _data(self, frame: Http2Frame) -> None:
        payload = _strip_padding(frame)
        if payload is None:
            self._note(NoteKind.MALFORMED_STREAM, f"bad padding on h2 stream {frame.h2_stream_id}", frame.origin_frame_number)
            return
        message = self.open.get(frame.h2_stream_id)
        if message is None:
            headers = HeaderList(missing=True)
            message = self._new_message(frame.h2_stream_id, headers, frame.origin_frame_number)
            message.notes.append("headers not captured")
        self.bodies[frame.h2_stream_id].append(payload)
        message.data_length += len(payload)
        message.last_frame = max(message.last_frame, frame.origin_frame_number)
        message.body_last_frame = frame.origin_frame_number
        if frame.has(FLAG_END_STREAM):
            self._end(message)

    def finish(self) -> List[HttpMessage]:
        if self.pending is not None:
            self._note(NoteKind.MALFORMED_STREAM, f"header block on h2 stream {self.pending.h2_stream_id} never completed", self.pending.first_frame)
            self.pending = None
        for h2_stream_id, message in list(self.open.items()):
            self._close(message, h2_stream_id)
        self.open.clear()
        return sorted(self.done, key=lambda m: (m.first_frame, m.h2_stream_id))


def assemble_messages(
    frames: List[Http2Frame],
    tcp_stream_id: int = 0,
    direction: Direction = Direction.CLIENT_TO_SERVER,
    initiator: Direction = Direction.CLIENT_TO_SERVER,
    table: Optional[DynamicTable] = None,
    degraded_start: bool = False,
) -> Tuple[List[HttpMessage], List[DecodeNote]]:
    """Turn one direction's frames, in byte order, into HTTP messages."""
    assembler = _Assembler(tcp_stream_id, direction, initiator, table or DynamicTable(), degraded_start)
    for frame in frames:
        assembler.feed(frame)
    messages = assembler.finish()
    return messages, assembler.notes


def _direction_frames(
    stream: TcpStream, direction: Direction, min_frames: int, notes: List[DecodeNote], opened: bool = False,
) -> List[Http2Frame]:
    """`opened`: the connection was captured from its preface, so this side starts on a frame boundary."""
    flow = stream.direction(direction)
    frames: List[Http2Frame] = []
    for index, (start, end) in enumerate(flow.chunks()):
        chunk = flow.data[start:end]
        if opened and start == 0 and _plausible_header(chunk, 0) is not None:
            offset = 0
        else:
            offset = find_frame_alignment(chunk, min_frames)
        if offset is None:
            notes.append(DecodeNote(
                kind=NoteKind.NOT_HTTP2,
                message=f"tcp stream {stream.stream_id} {direction.name.lower()}: {len(chunk)} bytes not recognized as HTTP/2",
                frame_number=flow.frame_at(start),
            ))
            continue
        parsed, desync = parse_frames(flow.data, start + offset, direction, flow.frame_at, end)
        notes.extend(desync)
        if parsed and index:
            parsed[0] = replace(parsed[0], resync=True)
        frames.extend(parsed)
    return frames


def decode_stream(stream: TcpStream, min_frames: int = DEFAULT_MIN_FRAMES) -> Tuple[List[HttpMessage], List[DecodeNote]]:
    """Decode both directions of one TCP connection into HTTP messages."""
    notes: List[DecodeNote] = []
    client = stream.direction(Direction.CLIENT_TO_SERVER).data
    server = stream.direction(Direction.SERVER_TO_CLIENT).data
    if is_tls(client) or is_tls(server):
        notes.append(DecodeNote(
            kind=NoteKind.TLS_SKIPPED,
            message=f"tcp stream {stream.stream_id} ({stream.client} -> {stream.server}) carries TLS; skipped",
            frame_number=stream.first_frame,
        ))
        return [], notes

    from_start = client.startswith(CLIENT_PREFACE)
    frames = {d: _direction_frames(stream, d, min_frames, notes, opened=from_start) for d in Direction}
    # each side's SETTINGS bound the table the peer encodes into
    tables = {d: DynamicTable(DEFAULT_TABLE_SIZE) for d in Direction}
    for d in Direction:
        limit = next((v for v in map(settings_table_size, frames[d]) if v is not None), None)
        if limit is not None:
            tables[Direction(1 - d)].set_limit(limit)

    messages: List[HttpMessage] = []
    for d in Direction:
        if not frames[d]:
            continue
        found, assembly_notes = assemble_messages(
            frames[d], stream.stream_id, d, Direction.CLIENT_TO_SERVER, tables[d], degraded_start=not from_start,
        )
        messages.extend(found)
        notes.extend(assembly_notes)
    messages.sort(key=lambda m: (m.first_frame, m.direction, m.h2_stream_id))
    return messages, notes


def decode_streams(streams: List[TcpStream], min_frames: int = DEFAULT_MIN_FRAMES) -> Tuple[List[HttpMessage], List[DecodeNote]]:
    messages: List[HttpMessage] = []
    notes: List[DecodeNote] = []
    for stream in streams:
        notes.extend(stream.notes)
        found, stream_notes = decode_stream(stream, min_frames)
        messages.extend(found)
        notes.extend(stream_notes)
    return messages, notes
