"""
HPACK header block decoding with a capture-tolerant dynamic table.

Static table and Huffman code come from the hpack package. The state machine is
local because a capture can start mid-connection: in degraded mode a reference
to an unknown dynamic entry is counted and skipped instead of failing the block.
"""
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional, Tuple

from hpack.exceptions import HPACKDecodingError
from hpack.huffman_table import decode_huffman
from hpack.table import HeaderTable

from ..errors import HpackError, HpackIndexError, HpackIntegerOverflow, HpackTruncated, HuffmanPaddingError
from ..models import Completeness

logger = logging.getLogger(__name__)

STATIC_TABLE: Tuple[Tuple[str, str], ...] = tuple(
    (name.decode("ascii"), value.decode("ascii")) for name, value in HeaderTable.STATIC_TABLE
)
DEFAULT_TABLE_SIZE = 4096
ENTRY_OVERHEAD = 32
MAX_INTEGER = (1 << 32) - 1


@dataclass
class HeaderList:
    """Decoded header fields in wire order, pseudo-headers first."""
    fields: List[Tuple[str, str]] = field(default_factory=list)
    undecodable: int = 0
    abandoned: bool = False
    missing: bool = False
    error: Optional[str] = None

    @property
    def completeness(self) -> Completeness:
        if self.undecodable or self.abandoned or self.missing:
            return Completeness.DEGRADED
        return Completeness.COMPLETE

    @property
    def degraded(self) -> bool:
        return self.completeness is Completeness.DEGRADED

    def add(self, name: str, value: str) -> None:
        if name.startswith(":"):
            position = sum(1 for n, _ in self.fields if n.startswith(":"))
            self.fields.insert(position, (name, value))
        else:
            self.fields.append((name, value))

    def get(self, name: str) -> Optional[str]:
        for n, v in self.fields:
            if n == name:
                return v
        return None

    def get_all(self, name: str) -> List[str]:
        return [v for n, v in self.fields if n == name]

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self.fields)


@dataclass
class _Entry:
    name: Optional[str]   # None marks a placeholder whose name was never seen
    value: str

    @property
    def size(self) -> int:
        return ENTRY_OVERHEAD + len((self.name or "").encode()) + len(self.value.encode())


class DynamicTable:
    def __init__(self, capacity: int = DEFAULT_TABLE_SIZE):
        self.entries: Deque[_Entry] = deque()
        self.capacity = capacity
        self.limit = capacity
        self.size = 0

    def __len__(self) -> int:
        return len(self.entries)

    def add(self, name: Optional[str], value: str) -> None:
        entry = _Entry(name, value)
        if entry.size > self.capacity:
            self.entries.clear()
            self.size = 0
            return
        self.entries.appendleft(entry)
        self.size += entry.size
        self._evict()

    def resize(self, capacity: int) -> None:
        if capacity > self.limit:
            logger.debug("dynamic table size update %d above advertised limit %d", capacity, self.limit)
        self.capacity = capacity
        self._evict()

    def set_limit(self, limit: int) -> None:
        """Apply a SETTINGS_HEADER_TABLE_SIZE advertised by the peer decoder."""
        self.limit = limit
        if self.capacity > limit:
            self.capacity = limit
            self._evict()

    def _evict(self) -> None:
        while self.size > self.capacity and self.entries:
            self.size -= self.entries.pop().size

    def lookup(self, index: int, degraded: bool) -> Optional[_Entry]:
        if index == 0:
            raise HpackIndexError("index 0 is not addressable")
        if index <= len(STATIC_TABLE):
            return _Entry(*STATIC_TABLE[index - 1])
        position = index - len(STATIC_TABLE) - 1
        if position < len(self.entries):
            return self.entries[position]
        if degraded:
            return None
        raise HpackIndexError(f"index {index} beyond dynamic table of {len(self.entries)} entries")


def _integer(block: bytes, pos: int, prefix_bits: int) -> Tuple[int, int]:
    if pos >= len(block):
        raise HpackTruncated("integer runs past end of block")
    max_prefix = (1 << prefix_bits) - 1
    value = block[pos] & max_prefix
    pos += 1
    if value < max_prefix:
        return value, pos
    shift = 0
    while True:
        if pos >= len(block):
            raise HpackTruncated("integer continuation runs past end of block")
        octet = block[pos]
        pos += 1
        value += (octet & 0x7F) << shift
        shift += 7
        if value > MAX_INTEGER or shift > 35:
            raise HpackIntegerOverflow("integer exceeds 32 bits")
        if not octet & 0x80:
            return value, pos


def _string(block: bytes, pos: int) -> Tuple[str, int]:
    if pos >= len(block):
        raise HpackTruncated("string length missing")
    huffman = bool(block[pos] & 0x80)
    length, pos = _integer(block, pos, 7)
    if pos + length > len(block):
        raise HpackTruncated(f"string of {length} octets runs past end of block")
    raw = block[pos:pos + length]
    if huffman:
        try:
            raw = decode_huffman(raw)
        except HPACKDecodingError as e:
            raise HuffmanPaddingError(f"invalid Huffman string: {e}") from e
    return raw.decode("utf-8", errors="replace"), pos + length


def _literal(block: bytes, pos: int, prefix_bits: int, table: DynamicTable, degraded: bool):
    name_index, pos = _integer(block, pos, prefix_bits)
    if name_index:
        entry = table.lookup(name_index, degraded)
        name = entry.name if entry is not None else None
    else:
        name, pos = _string(block, pos)
    value, pos = _string(block, pos)
    return (name.lower() if name is not None else None), value, pos


def decode_hpack(block: bytes, table: DynamicTable, degraded: bool = False) -> Tuple[HeaderList, DynamicTable]:
    """
    Decode one complete header block, updating the table in place.
    An HpackError in strict mode abandons the rest of the block; the caller must
    treat the table as desynchronized from then on.
    """
    headers = HeaderList()
    pos = 0
    try:
        while pos < len(block):
            octet = block[pos]
            if octet & 0x80:
                index, pos = _integer(block, pos, 7)
                entry = table.lookup(index, degraded)
                if entry is None or entry.name is None:
                    headers.undecodable += 1
                else:
                    headers.add(entry.name, entry.value)
            elif octet & 0x40:
                name, value, pos = _literal(block, pos, 6, table, degraded)
                table.add(name, value)
                if name is None:
                    headers.undecodable += 1
                else:
                    headers.add(name, value)
            elif octet & 0x20:
                capacity, pos = _integer(block, pos, 5)
                table.resize(capacity)
            else:
                # without indexing (0000) and never indexed (0001) share the 4-bit prefix
                name, value, pos = _literal(block, pos, 4, table, degraded)
                if name is None:
                    headers.undecodable += 1
                else:
                    headers.add(name, value)
    except HpackError as e:
        headers.abandoned = True
        headers.error = e.detail
        logger.debug("header block abandoned at octet %d: %s", pos, e.detail)
    return headers, table
