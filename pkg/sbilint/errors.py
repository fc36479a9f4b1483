from typing import Optional


class SbiLintError(Exception):
    """Base class for every error raised by the linter."""

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


# Spec corpus errors
class SpecError(SbiLintError):
    pass


class EmptyCorpus(SpecError):
    def __init__(self, directory: str):
        super().__init__(f"No OpenAPI document found in {directory}")
        self.directory = directory


class UnresolvableRef(SpecError):
    def __init__(self, ref: str, location: str):
        super().__init__(f"Unresolvable reference {ref!r} at {location}")
        self.ref = ref
        self.location = location


class BadTemplate(SpecError):
    def __init__(self, template: str, reason: str):
        super().__init__(f"Bad path template {template!r}: {reason}")
        self.template = template


# Capture errors
class CaptureError(SbiLintError):
    pass


class CaptureFileMissing(CaptureError):
    pass


class UnrecognizedCaptureFormat(CaptureError):
    def __init__(self, path: str, magic: Optional[bytes] = None, reason: Optional[str] = None):
        if reason is None:
            shown = magic.hex() if magic else "empty file"
            reason = f"neither PCAP nor PCAPNG (magic {shown})"
        super().__init__(f"{path}: {reason}")
        self.path = path


# HPACK errors; the decoder catches these and degrades the header list
class HpackError(SbiLintError):
    pass


class HpackIntegerOverflow(HpackError):
    pass


class HuffmanPaddingError(HpackError):
    pass


class HpackIndexError(HpackError):
    pass


class HpackTruncated(HpackError):
    pass


class ConfigError(SbiLintError):
    pass
