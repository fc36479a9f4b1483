from pydantic import BaseModel, ConfigDict, Field
from typing import Optional, List, Dict

from .models import AugmentationSource, MessageKind, NoteKind, RuleId, Severity


# Finding schemas
class Finding(BaseModel):
    """One conformance violation, addressed by RFC 6901 pointer into the body."""
    model_config = ConfigDict(frozen=True)

    rule_id: RuleId
    severity: Severity
    json_pointer: str = ""
    message: str
    frame_number: int = 0
    exchange_id: Optional[int] = None
    detail: List["Finding"] = Field(default_factory=list)

    def sort_key(self):
        return (self.frame_number, self.json_pointer, self.rule_id.value, self.message)

    def stamped(self, frame_number: int, exchange_id: Optional[int]) -> "Finding":
        return self.model_copy(update={"frame_number": frame_number, "exchange_id": exchange_id})


Finding.model_rebuild()


class DecodeNote(BaseModel):
    """Non-fatal anomaly seen while loading specs or decoding a capture."""
    model_config = ConfigDict(frozen=True)

    kind: NoteKind
    message: str
    frame_number: Optional[int] = None


# Exchange schemas
class AugmentationNote(BaseModel):
    """One header value synthesized for a message whose headers were lost."""
    header: str
    source: AugmentationSource
    original_value: Optional[str] = None
    side: Optional[MessageKind] = None
    value: Optional[str] = None


class ExchangeSummary(BaseModel):
    exchange_id: int
    first_frame: int
    last_frame: int
    tcp_stream: int
    h2_stream: int
    method: Optional[str] = None
    path: Optional[str] = None
    operation_id: Optional[str] = None
    document: Optional[str] = None
    status: Optional[int] = None
    version_status: str = "ok"
    links: List[int] = Field(default_factory=list)
    augmentations: List[AugmentationNote] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)


# Report schemas
class ReportCounters(BaseModel):
    total: int = 0
    by_rule: Dict[str, int] = Field(default_factory=dict)
    by_severity: Dict[str, int] = Field(default_factory=dict)


class Report(BaseModel):
    tool_version: str
    spec_digest: str
    capture: str
    exchanges: List[ExchangeSummary] = Field(default_factory=list)
    findings: List[Finding] = Field(default_factory=list)
    counters: ReportCounters = Field(default_factory=ReportCounters)
    spec_notes: List[DecodeNote] = Field(default_factory=list)
    capture_notes: List[DecodeNote] = Field(default_factory=list)
