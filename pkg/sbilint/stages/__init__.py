# Pipeline stages: openapi -> capture -> http2 (hpack_decoder) -> correlator -> validator -> report
