import enum


class Severity(str, enum.Enum):
    INFO = "info"
    WARNING = "warning"
    ERROR = "error"

    @property
    def rank(self) -> int:
        return _SEVERITY_RANK[self]


_SEVERITY_RANK = {Severity.INFO: 0, Severity.WARNING: 1, Severity.ERROR: 2}


class RuleId(str, enum.Enum):
    # Schema rules
    SCHEMA_TYPE_MISMATCH = "SCHEMA_TYPE_MISMATCH"
    PATTERN_MISMATCH = "PATTERN_MISMATCH"
    RANGE_VIOLATION = "RANGE_VIOLATION"
    LENGTH_VIOLATION = "LENGTH_VIOLATION"
    MIN_ITEMS = "MIN_ITEMS"
    MAX_ITEMS = "MAX_ITEMS"
    UNIQUE_ITEMS = "UNIQUE_ITEMS"
    REQUIRED_MISSING = "REQUIRED_MISSING"
    ADDITIONAL_PROPERTY = "ADDITIONAL_PROPERTY"
    PROPERTY_COUNT = "PROPERTY_COUNT"
    ENUM_VIOLATION = "ENUM_VIOLATION"
    FORMAT_VIOLATION = "FORMAT_VIOLATION"
    NULL_NOT_ALLOWED = "NULL_NOT_ALLOWED"
    ONEOF_NONE = "ONEOF_NONE"
    ONEOF_MULTIPLE = "ONEOF_MULTIPLE"
    DISCRIMINATOR_UNKNOWN = "DISCRIMINATOR_UNKNOWN"
    ANYOF_NONE = "ANYOF_NONE"
    ALLOF_FAILED = "ALLOF_FAILED"
    NOT_MATCHED = "NOT_MATCHED"
    # Message rules
    BODY_NOT_JSON = "BODY_NOT_JSON"
    CONTENT_TYPE_MISMATCH = "CONTENT_TYPE_MISMATCH"
    STATUS_NOT_DEFINED = "STATUS_NOT_DEFINED"
    UNKNOWN_PATH = "UNKNOWN_PATH"
    METHOD_NOT_ALLOWED = "METHOD_NOT_ALLOWED"
    UNSUPPORTED_API_VERSION = "UNSUPPORTED_API_VERSION"
    HEADERS_INCOMPLETE = "HEADERS_INCOMPLETE"
    LOCATION_HEADER_MISSING = "LOCATION_HEADER_MISSING"


class SchemaKind(str, enum.Enum):
    STRING = "string"
    NUMBER = "number"
    INTEGER = "integer"
    BOOLEAN = "boolean"
    ARRAY = "array"
    OBJECT = "object"
    COMPOSITE = "composite"
    ANY = "any"


class Direction(enum.IntEnum):
    # TCP direction relative to the connection initiator
    CLIENT_TO_SERVER = 0
    SERVER_TO_CLIENT = 1


class MessageKind(str, enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


class Completeness(str, enum.Enum):
    COMPLETE = "complete"
    DEGRADED = "degraded"


class MissReason(str, enum.Enum):
    UNKNOWN_BASE_PATH = "UnknownBasePath"
    UNKNOWN_PATH = "UnknownPath"
    METHOD_NOT_ALLOWED = "MethodNotAllowed"
    UNSUPPORTED_VERSION = "UnsupportedVersion"


class AugmentationSource(str, enum.Enum):
    CONTENT_SNIFF = "content-sniff"
    SPEC_DEFAULT = "spec-default"
    UNRECOVERABLE = "unrecoverable"


class NoteKind(str, enum.Enum):
    LOAD_WARNING = "LoadWarning"
    UNVALIDATED_FORMAT = "UnvalidatedFormat"
    TRUNCATED_FILE = "TruncatedFile"
    IP_FRAGMENT = "IpFragment"
    TCP_GAP = "TcpGap"
    TCP_OVERLAP_CONFLICT = "TcpOverlapConflict"
    TLS_SKIPPED = "TlsSkipped"
    NOT_HTTP2 = "NotHttp2"
    FRAMING_DESYNC = "FramingDesync"
    HPACK_DEGRADED = "HpackDegraded"
    MALFORMED_STREAM = "MalformedStream"
