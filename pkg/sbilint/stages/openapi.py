"""
Compile a directory of 3GPP-style OpenAPI 3.0 YAML documents into a SpecIndex.

References (local and cross-file) are resolved once, schemas become SchemaIR
nodes, and every path template becomes an anchored regular expression, so
that per-request lookup is a regex scan over a sorted entry list.
"""
import datetime
import hashlib
import logging
import re
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, FrozenSet, Iterator, List, Mapping, Optional, Pattern, Sequence, Tuple, Union
from urllib.parse import unquote, urlsplit

import yaml

from ..errors import BadTemplate, EmptyCorpus, SpecError, UnresolvableRef
from ..models import MissReason, NoteKind, SchemaKind
from ..schemas import DecodeNote

logger = logging.getLogger(__name__)

HTTP_METHODS = ("get", "put", "post", "delete", "patch", "head", "options", "trace")
VALIDATED_FORMATS = frozenset({"int32", "int64", "float", "double", "date-time", "uuid", "byte"})

_COMPOSITE_KEYS = ("oneOf", "anyOf", "allOf", "not")
_OBJECT_KEYS = ("properties", "required", "additionalProperties", "minProperties", "maxProperties")
_ARRAY_KEYS = ("items", "minItems", "maxItems", "uniqueItems")
_SCALAR_KEYS = (
    "pattern", "minimum", "maximum", "exclusiveMinimum", "exclusiveMaximum",
    "minLength", "maxLength", "enum", "format",
)
_TYPE_KINDS = {
    "string": SchemaKind.STRING,
    "number": SchemaKind.NUMBER,
    "integer": SchemaKind.INTEGER,
    "boolean": SchemaKind.BOOLEAN,
    "array": SchemaKind.ARRAY,
    "object": SchemaKind.OBJECT,
}
_VERSION_SEGMENT = re.compile(r"^v\d+$")
_MAX_ALIAS_HOPS = 32


# Schema IR
@dataclass(eq=False)
class Discriminator:
    property_name: str
    mapping: Dict[str, "SchemaIR"] = field(default_factory=dict)


@dataclass(eq=False)
class SchemaIR:
    """
    Reference-free schema node.

    Named components compile to one shared node, so a recursive schema is a
    cycle in the object graph rather than an unresolved reference.
    """
    kind: SchemaKind = SchemaKind.ANY
    name: Optional[str] = None
    # scalar constraints
    pattern: Optional[str] = None
    regex: Optional[Pattern] = field(default=None, repr=False)
    minimum: Optional[Decimal] = None
    maximum: Optional[Decimal] = None
    exclusive_minimum: bool = False
    exclusive_maximum: bool = False
    min_length: Optional[int] = None
    max_length: Optional[int] = None
    enum: Optional[List[Any]] = None
    format: Optional[str] = None
    nullable: bool = False
    # object group
    properties: Optional[Dict[str, "SchemaIR"]] = None
    required: FrozenSet[str] = frozenset()
    additional_properties: Union[bool, "SchemaIR"] = True
    min_properties: Optional[int] = None
    max_properties: Optional[int] = None
    # array group
    items: Optional["SchemaIR"] = None
    min_items: Optional[int] = None
    max_items: Optional[int] = None
    unique_items: bool = False
    # composite group
    one_of: List["SchemaIR"] = field(default_factory=list)
    any_of: List["SchemaIR"] = field(default_factory=list)
    all_of: List["SchemaIR"] = field(default_factory=list)
    not_: Optional["SchemaIR"] = None
    discriminator: Optional[Discriminator] = None
    # all_of produced by splitting a node that mixed groups; its failures are
    # reported as the parts' own findings
    implicit_all_of: bool = False

    @property
    def has_object_group(self) -> bool:
        return (
            self.properties is not None or bool(self.required)
            or self.additional_properties is not True
            or self.min_properties is not None or self.max_properties is not None
        )

    @property
    def has_array_group(self) -> bool:
        return (
            self.items is not None or self.min_items is not None
            or self.max_items is not None or self.unique_items
        )

    @property
    def has_composite_group(self) -> bool:
        return bool(self.one_of or self.any_of or self.all_of) or self.not_ is not None

    def __repr__(self) -> str:
        label = self.name or "anonymous"
        return f"<SchemaIR {self.kind.value} {label}>"


def iter_schema_nodes(root: SchemaIR) -> Iterator[SchemaIR]:
    """Yield every node reachable from root exactly once."""
    seen = set()
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        yield node
        children: List[SchemaIR] = []
        if node.properties:
            children.extend(node.properties.values())
        if isinstance(node.additional_properties, SchemaIR):
            children.append(node.additional_properties)
        if node.items is not None:
            children.append(node.items)
        children.extend(node.one_of)
        children.extend(node.any_of)
        children.extend(node.all_of)
        if node.not_ is not None:
            children.append(node.not_)
        if node.discriminator:
            children.extend(node.discriminator.mapping.values())
        stack.extend(children)


# Regular expressions
def ecma_to_python(pattern: str) -> str:
    """
    Translate an ECMA-262 pattern to Python syntax.
    `$` becomes `\\Z` (no match before a trailing newline) and `(?<name>` becomes `(?P<name>`.
    """
    out = []
    in_class = False
    i = 0
    while i < len(pattern):
        c = pattern[i]
        if c == "\\":
            out.append(pattern[i:i + 2])
            i += 2
            continue
        if in_class:
            if c == "]":
                in_class = False
            out.append(c)
        elif c == "[":
            in_class = True
            out.append(c)
        elif c == "$":
            out.append(r"\Z")
        elif pattern.startswith("(?<", i) and i + 3 < len(pattern) and pattern[i + 3] not in "=!":
            out.append("(?P<")
            i += 3
            continue
        else:
            out.append(c)
        i += 1
    return "".join(out)


def compile_pattern(pattern: str) -> Pattern:
    return re.compile(ecma_to_python(pattern), re.ASCII)


def strip_anchors(pattern: str) -> str:
    if pattern.startswith("^"):
        pattern = pattern[1:]
    if pattern.endswith("$") and not pattern.endswith("\\$"):
        pattern = pattern[:-1]
    return pattern


# Documents
@dataclass
class RawPath:
    template: str
    item: Dict[str, Any]


@dataclass
class SpecDocument:
    file_name: str
    raw: Dict[str, Any]
    api_name: str = ""
    api_version: str = ""
    base_path: str = ""
    raw_paths: List[RawPath] = field(default_factory=list)
    components: Dict[str, Any] = field(default_factory=dict)

    @property
    def has_paths(self) -> bool:
        return bool(self.raw_paths)


def _normalize_yaml(value: Any) -> Any:
    # YAML floats become Decimal so enum comparison matches parsed JSON numbers
    if isinstance(value, bool) or value is None:
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    if isinstance(value, (datetime.date, datetime.datetime)):
        return value.isoformat()
    if isinstance(value, list):
        return [_normalize_yaml(v) for v in value]
    if isinstance(value, dict):
        return {str(k): _normalize_yaml(v) for k, v in value.items()}
    return value


def parse_server_path(url: str) -> str:
    """Strip the apiRoot variable (or any scheme/authority) from a server URL."""
    url = url.replace("{apiRoot}", "")
    if "://" in url:
        url = urlsplit(url).path
    url = "/" + url.strip("/")
    return url if url != "/" else ""


def make_document(file_name: str, raw: Dict[str, Any]) -> Tuple[SpecDocument, List[DecodeNote]]:
    notes: List[DecodeNote] = []
    doc = SpecDocument(file_name=file_name, raw=raw)
    doc.components = dict(((raw.get("components") or {}).get("schemas") or {}))
    paths = raw.get("paths") or {}
    doc.raw_paths = [RawPath(str(t), item or {}) for t, item in sorted(paths.items(), key=lambda kv: str(kv[0]))]
    servers = raw.get("servers") or []
    if servers and isinstance(servers[0], dict) and servers[0].get("url"):
        doc.base_path = parse_server_path(str(servers[0]["url"]))
        segments = [s for s in doc.base_path.split("/") if s]
        if segments:
            doc.api_name = segments[0]
            versions = [s for s in segments[1:] if _VERSION_SEGMENT.match(s)]
            doc.api_version = versions[-1] if versions else ""
    if doc.has_paths and not (doc.api_name and doc.api_version):
        notes.append(DecodeNote(
            kind=NoteKind.LOAD_WARNING,
            message=f"{file_name}: server URL has no api-name/version segment; paths skipped",
        ))
        doc.raw_paths = []
    return doc, notes


def read_documents(directory: Union[str, Path]) -> Tuple[List[SpecDocument], str, List[DecodeNote]]:
    """Parse every YAML file in directory; returns documents, corpus digest and load notes."""
    root = Path(directory)
    if not root.is_dir():
        raise SpecError(f"Spec directory {root} does not exist")
    notes: List[DecodeNote] = []
    documents: List[SpecDocument] = []
    digest = hashlib.sha256()
    for path in sorted(p for p in root.iterdir() if p.is_file() and p.suffix in (".yaml", ".yml")):
        data = path.read_bytes()
        digest.update(path.name.encode() + b"\0" + data + b"\0")
        try:
            raw = yaml.safe_load(data)
        except yaml.YAMLError as e:
            logger.warning("Skipping %s: %s", path.name, e)
            notes.append(DecodeNote(kind=NoteKind.LOAD_WARNING, message=f"{path.name}: YAML error: {e}"))
            continue
        if not isinstance(raw, dict) or "openapi" not in raw:
            logger.debug("Skipping %s: not an OpenAPI document", path.name)
            continue
        if str(raw["openapi"]).startswith("3.1"):
            notes.append(DecodeNote(
                kind=NoteKind.LOAD_WARNING,
                message=f"{path.name}: OpenAPI {raw['openapi']} read with 3.0 semantics",
            ))
        doc, doc_notes = make_document(path.name, raw)
        notes.extend(doc_notes)
        documents.append(doc)
    if not documents:
        raise EmptyCorpus(str(root))
    return documents, digest.hexdigest(), notes


# Reference resolution
def _unescape_token(token: str) -> str:
    return unquote(token).replace("~1", "/").replace("~0", "~")


class SchemaCompiler:
    """Resolves references and compiles raw schema dicts into SchemaIR nodes."""

    def __init__(self, documents: Mapping[str, SpecDocument]):
        self.documents = documents
        self._named: Dict[Tuple[str, str], SchemaIR] = {}
        self.unknown_formats: Dict[str, str] = {}
        self.notes: List[DecodeNote] = []

    # raw lookups
    def _split_ref(self, ref: str, doc: SpecDocument, location: str) -> Tuple[SpecDocument, str]:
        if not isinstance(ref, str) or "#" not in ref and not ref.endswith((".yaml", ".yml")):
            raise UnresolvableRef(str(ref), location)
        file_part, _, fragment = ref.partition("#")
        if file_part:
            target = self.documents.get(Path(file_part).name)
            if target is None:
                raise UnresolvableRef(ref, location)
        else:
            target = doc
        return target, fragment

    def raw_target(self, ref: str, doc: SpecDocument, location: str) -> Tuple[Any, SpecDocument]:
        target_doc, fragment = self._split_ref(ref, doc, location)
        node: Any = target_doc.raw
        for token in [t for t in fragment.split("/") if t]:
            token = _unescape_token(token)
            if isinstance(node, dict) and token in node:
                node = node[token]
            elif isinstance(node, list) and token.isdigit() and int(token) < len(node):
                node = node[int(token)]
            else:
                raise UnresolvableRef(ref, location)
        return node, target_doc

    def deref(self, raw: Any, doc: SpecDocument, location: str) -> Tuple[Any, SpecDocument]:
        """Follow `$ref` chains of non-schema objects (parameters, responses, headers)."""
        hops = 0
        while isinstance(raw, dict) and "$ref" in raw:
            raw, doc = self.raw_target(raw["$ref"], doc, location)
            hops += 1
            if hops > _MAX_ALIAS_HOPS:
                raise SpecError(f"Reference chain too long at {location}")
        return raw, doc

    # schema compilation
    def resolve(self, ref: Union[str, SchemaIR], doc: SpecDocument, location: str = "") -> SchemaIR:
        if isinstance(ref, SchemaIR):
            return ref
        target_doc, fragment = self._split_ref(ref, doc, location or doc.file_name)
        key = (target_doc.file_name, fragment)
        node = self._named.get(key)
        if node is not None:
            return node
        raw, raw_doc = self.raw_target(ref, doc, location or doc.file_name)
        node = SchemaIR(name=_unescape_token(fragment.rsplit("/", 1)[-1]) or None)
        self._named[key] = node
        where = f"{target_doc.file_name}#{fragment}"
        if isinstance(raw, dict) and "$ref" in raw:
            # alias of another named schema
            node.kind = SchemaKind.COMPOSITE
            node.implicit_all_of = True
            node.all_of = [self.resolve(raw["$ref"], raw_doc, where)]
        else:
            self._fill(node, raw, raw_doc, where)
        return node

    def compile(self, raw: Any, doc: SpecDocument, location: str) -> SchemaIR:
        if isinstance(raw, dict) and "$ref" in raw:
            return self.resolve(raw["$ref"], doc, location)
        node = SchemaIR()
        self._fill(node, raw, doc, location)
        return node

    def _fill(self, node: SchemaIR, raw: Any, doc: SpecDocument, location: str) -> None:
        if not isinstance(raw, dict):
            self.notes.append(DecodeNote(kind=NoteKind.LOAD_WARNING, message=f"{location}: schema is not a mapping"))
            return
        composite = [k for k in _COMPOSITE_KEYS if k in raw]
        has_object = raw.get("type") == "object" or any(k in raw for k in _OBJECT_KEYS)
        has_array = raw.get("type") == "array" or any(k in raw for k in _ARRAY_KEYS)
        has_base = "type" in raw or has_object or has_array or any(k in raw for k in _SCALAR_KEYS)
        node.nullable = bool(raw.get("nullable", False))

        if composite and has_base or (has_object and has_array and "type" not in raw):
            # one node may carry only one of the object/array/composite groups
            node.kind = SchemaKind.COMPOSITE
            node.implicit_all_of = True
            base = {k: v for k, v in raw.items() if k not in _COMPOSITE_KEYS and k != "discriminator"}
            if has_object and has_array and "type" not in raw:
                object_part = {k: v for k, v in base.items() if k not in _ARRAY_KEYS}
                array_part = {k: v for k, v in base.items() if k not in _OBJECT_KEYS}
                parts = [object_part, array_part]
            else:
                parts = [base]
            for part in parts:
                child = SchemaIR(name=node.name)
                self._fill_base(child, part, doc, location)
                node.all_of.append(child)
            if composite:
                child = SchemaIR(kind=SchemaKind.COMPOSITE, name=node.name, nullable=node.nullable)
                self._fill_composite(child, raw, doc, location)
                node.all_of.append(child)
        elif composite:
            node.kind = SchemaKind.COMPOSITE
            self._fill_composite(node, raw, doc, location)
        else:
            self._fill_base(node, raw, doc, location)

    def _fill_base(self, node: SchemaIR, raw: Dict[str, Any], doc: SpecDocument, location: str) -> None:
        node.nullable = bool(raw.get("nullable", False))
        kind = _TYPE_KINDS.get(raw.get("type")) if isinstance(raw.get("type"), str) else None
        node.kind = kind or SchemaKind.ANY

        if "pattern" in raw:
            node.pattern = str(raw["pattern"])
            try:
                node.regex = compile_pattern(node.pattern)
            except re.error as e:
                self.notes.append(DecodeNote(
                    kind=NoteKind.LOAD_WARNING,
                    message=f"{location}: pattern {node.pattern!r} not compilable ({e}); ignored",
                ))
                node.pattern = None
        for key, attr in (("minimum", "minimum"), ("maximum", "maximum")):
            if key in raw and raw[key] is not None:
                setattr(node, attr, Decimal(repr(raw[key])) if isinstance(raw[key], float) else Decimal(raw[key]))
        # 3.0 booleans; numeric forms are accepted as exclusive bounds
        for key, bound, flag in (
            ("exclusiveMinimum", "minimum", "exclusive_minimum"),
            ("exclusiveMaximum", "maximum", "exclusive_maximum"),
        ):
            value = raw.get(key)
            if isinstance(value, bool):
                setattr(node, flag, value)
            elif isinstance(value, (int, float)):
                setattr(node, bound, Decimal(repr(value)) if isinstance(value, float) else Decimal(value))
                setattr(node, flag, True)
        for key, attr in (
            ("minLength", "min_length"), ("maxLength", "max_length"),
            ("minItems", "min_items"), ("maxItems", "max_items"),
            ("minProperties", "min_properties"), ("maxProperties", "max_properties"),
        ):
            if raw.get(key) is not None:
                setattr(node, attr, int(raw[key]))
        node.unique_items = bool(raw.get("uniqueItems", False))
        if isinstance(raw.get("enum"), list):
            node.enum = _normalize_yaml(raw["enum"])
        if raw.get("format") is not None:
            node.format = str(raw["format"])
            if node.format not in VALIDATED_FORMATS:
                self.unknown_formats.setdefault(node.format, location)

        if node.kind == SchemaKind.ARRAY or (node.kind == SchemaKind.ANY and "type" not in raw and any(k in raw for k in _ARRAY_KEYS)):
            if "items" in raw:
                node.items = self.compile(raw["items"], doc, f"{location}/items")
            return
        if "properties" in raw and isinstance(raw["properties"], dict):
            node.properties = {
                str(name): self.compile(sub, doc, f"{location}/properties/{name}")
                for name, sub in raw["properties"].items()
            }
        if isinstance(raw.get("required"), list):
            node.required = frozenset(str(r) for r in raw["required"])
        additional = raw.get("additionalProperties", True)
        if isinstance(additional, bool):
            node.additional_properties = additional
        elif isinstance(additional, dict):
            node.additional_properties = self.compile(additional, doc, f"{location}/additionalProperties")

    def _fill_composite(self, node: SchemaIR, raw: Dict[str, Any], doc: SpecDocument, location: str) -> None:
        for key, attr in (("oneOf", "one_of"), ("anyOf", "any_of"), ("allOf", "all_of")):
            branches = raw.get(key)
            if isinstance(branches, list):
                setattr(node, attr, [
                    self.compile(b, doc, f"{location}/{key}/{i}") for i, b in enumerate(branches)
                ])
        if "not" in raw:
            node.not_ = self.compile(raw["not"], doc, f"{location}/not")
        disc = raw.get("discriminator")
        if isinstance(disc, dict):
            node.discriminator = self._discriminator(disc, raw, doc, location)

    def _discriminator(self, disc: Dict[str, Any], raw: Dict[str, Any], doc: SpecDocument, location: str) -> Optional[Discriminator]:
        prop = disc.get("propertyName")
        if not prop:
            self.notes.append(DecodeNote(
                kind=NoteKind.LOAD_WARNING, message=f"{location}: discriminator without propertyName ignored",
            ))
            return None
        mapping: Dict[str, SchemaIR] = {}
        # implicit mapping: referenced branch schema names
        for key in ("oneOf", "anyOf"):
            for branch in raw.get(key) or []:
                if isinstance(branch, dict) and "$ref" in branch:
                    name = _unescape_token(str(branch["$ref"]).rsplit("/", 1)[-1])
                    mapping[name] = self.resolve(branch["$ref"], doc, location)
        for value, target in (disc.get("mapping") or {}).items():
            target = str(target)
            if "#" not in target and not target.endswith((".yaml", ".yml")):
                target = f"#/components/schemas/{target}"
            mapping[str(value)] = self.resolve(target, doc, f"{location}/discriminator/mapping/{value}")
        return Discriminator(property_name=str(prop), mapping=mapping)

    def format_notes(self) -> List[DecodeNote]:
        return [
            DecodeNote(
                kind=NoteKind.UNVALIDATED_FORMAT,
                message=f"format {fmt!r} is accepted without validation (first seen at {where})",
            )
            for fmt, where in sorted(self.unknown_formats.items())
        ]


def resolve_ref(ref_text: Union[str, SchemaIR], current_doc: SpecDocument, corpus: Mapping[str, SpecDocument]) -> SchemaIR:
    """Resolve a local or cross-file schema reference into a SchemaIR."""
    if isinstance(ref_text, SchemaIR):
        return ref_text
    return SchemaCompiler(corpus).resolve(ref_text, current_doc, current_doc.file_name)


def compile_schema(raw: Dict[str, Any], components: Optional[Dict[str, Any]] = None) -> SchemaIR:
    """Compile one inline schema; `components` backs `#/components/schemas/...` references."""
    doc = SpecDocument(
        file_name="inline.yaml",
        raw={"openapi": "3.0.0", "components": {"schemas": components or {}}},
        components=dict(components or {}),
    )
    return SchemaCompiler({doc.file_name: doc}).compile(raw, doc, "inline.yaml#")


# Path matching
@dataclass(frozen=True)
class PathMatcher:
    template: str
    regex: str
    literal_segment_count: int
    parameter_names: Tuple[str, ...]
    compiled: Pattern = field(repr=False, compare=False)

    def match(self, path: str) -> Optional[Dict[str, str]]:
        m = self.compiled.fullmatch(path)
        if m is None:
            return None
        bound = {}
        for i, name in enumerate(self.parameter_names):
            value = m.group(f"p{i}")
            # a parameter never spans segments, whatever its pattern allows
            if not value or "/" in value:
                return None
            bound[name] = value
        return bound


def _template_tokens(template: str) -> List[Tuple[bool, str]]:
    tokens: List[Tuple[bool, str]] = []
    literal = []
    i = 0
    while i < len(template):
        c = template[i]
        if c == "{":
            end = template.find("}", i + 1)
            if end < 0 or "{" in template[i + 1:end]:
                raise BadTemplate(template, "unbalanced braces")
            name = template[i + 1:end]
            if not name.strip():
                raise BadTemplate(template, "empty parameter name")
            if literal:
                tokens.append((False, "".join(literal)))
                literal = []
            tokens.append((True, name))
            i = end + 1
            continue
        if c == "}":
            raise BadTemplate(template, "unbalanced braces")
        literal.append(c)
        i += 1
    if literal:
        tokens.append((False, "".join(literal)))
    return tokens


def compile_path_template(template: str, parameters: Optional[Mapping[str, SchemaIR]] = None) -> PathMatcher:
    """Build an anchored regex for a path template; declared string patterns become the segment expression."""
    if not template.startswith("/"):
        raise BadTemplate(template, "template must begin with '/'")
    parameters = parameters or {}
    tokens = _template_tokens(template)
    names: List[str] = []
    parts = []
    for is_param, text in tokens:
        if not is_param:
            parts.append(re.escape(text))
            continue
        schema = parameters.get(text)
        expression = "[^/]+"
        if schema is not None and schema.pattern and schema.kind in (SchemaKind.STRING, SchemaKind.ANY):
            candidate = "(?:" + ecma_to_python(strip_anchors(schema.pattern)) + ")"
            try:
                re.compile(candidate, re.ASCII)
                expression = candidate
            except re.error:
                logger.warning("Pattern of path parameter %s in %s ignored", text, template)
        parts.append(f"(?P<p{len(names)}>{expression})")
        names.append(text)
    regex = "^" + "".join(parts) + "$"
    literal_segments = sum(1 for seg in template.split("/")[1:] if "{" not in seg)
    return PathMatcher(
        template=template,
        regex=regex,
        literal_segment_count=literal_segments,
        parameter_names=tuple(names),
        compiled=re.compile(regex, re.ASCII),
    )


# Operations
@dataclass(frozen=True)
class ResponseSpec:
    content: Mapping[str, SchemaIR]
    headers: Mapping[str, bool]

    @property
    def required_headers(self) -> List[str]:
        return sorted(name for name, required in self.headers.items() if required)


@dataclass(frozen=True)
class OperationSpec:
    method: str
    operation_id: str
    template: str
    document: str
    request_body: Mapping[str, SchemaIR]
    responses: Mapping[str, ResponseSpec]
    request_body_required: bool = False
    callbacks: Tuple["OperationSpec", ...] = ()

    @property
    def callbacks_present(self) -> bool:
        return bool(self.callbacks)

    def response_for(self, status: int) -> Optional[Tuple[str, ResponseSpec]]:
        """Exact code, then its NXX class, then default."""
        for key in (str(status), f"{status // 100}XX", "default"):
            if key in self.responses:
                return key, self.responses[key]
        return None


@dataclass(frozen=True)
class SpecEntry:
    base_path: str
    matcher: PathMatcher
    operations: Mapping[str, OperationSpec]
    document: str
    api_name: str


@dataclass(frozen=True)
class SpecIndex:
    entries: Tuple[SpecEntry, ...]
    supported_versions: Mapping[str, str]
    documents: Tuple[str, ...] = ()
    digest: str = ""
    notes: Tuple[DecodeNote, ...] = ()


@dataclass(frozen=True)
class OperationMatch:
    entry: SpecEntry
    operation: OperationSpec
    path_params: Mapping[str, str]


@dataclass(frozen=True)
class LookupMiss:
    reason: MissReason
    detail: str
    found_version: Optional[str] = None
    expected_version: Optional[str] = None
    allowed_methods: Tuple[str, ...] = ()


def _content_map(compiler: SchemaCompiler, content: Any, doc: SpecDocument, location: str) -> Dict[str, SchemaIR]:
    result: Dict[str, SchemaIR] = {}
    for media_type, media in sorted((content or {}).items()):
        schema_raw = (media or {}).get("schema")
        where = f"{location}/content/{media_type}"
        result[str(media_type)] = SchemaIR() if schema_raw is None else compiler.compile(schema_raw, doc, where)
    return result


def _compile_operation(
    compiler: SchemaCompiler, method: str, raw_op: Dict[str, Any], template: str, doc: SpecDocument,
    location: Optional[str] = None,
) -> Optional[OperationSpec]:
    location = location or f"{doc.file_name}#/paths/{template}/{method}"
    request_body: Dict[str, SchemaIR] = {}
    body_required = False
    if "requestBody" in raw_op:
        body, body_doc = compiler.deref(raw_op["requestBody"], doc, location)
        request_body = _content_map(compiler, (body or {}).get("content"), body_doc, f"{location}/requestBody")
        body_required = bool((body or {}).get("required", False))
    responses: Dict[str, ResponseSpec] = {}
    for code, raw_response in (raw_op.get("responses") or {}).items():
        code = str(code).upper() if str(code).lower() != "default" else "default"
        where = f"{location}/responses/{code}"
        response, response_doc = compiler.deref(raw_response, doc, where)
        response = response or {}
        headers: Dict[str, bool] = {}
        for name, raw_header in (response.get("headers") or {}).items():
            header, _ = compiler.deref(raw_header, response_doc, f"{where}/headers/{name}")
            headers[str(name).lower()] = bool((header or {}).get("required", False))
        responses[code] = ResponseSpec(
            content=MappingProxyType(_content_map(compiler, response.get("content"), response_doc, where)),
            headers=MappingProxyType(headers),
        )
    if not responses:
        compiler.notes.append(DecodeNote(
            kind=NoteKind.LOAD_WARNING, message=f"{location}: operation declares no responses; skipped",
        ))
        return None
    return OperationSpec(
        method=method.upper(),
        operation_id=str(raw_op.get("operationId") or f"{method.upper()} {template}"),
        template=template,
        document=doc.file_name,
        request_body=MappingProxyType(request_body),
        responses=MappingProxyType(responses),
        request_body_required=body_required,
        callbacks=tuple(_compile_callbacks(compiler, raw_op.get("callbacks"), doc, location)),
    )


def _compile_callbacks(compiler: SchemaCompiler, raw_callbacks: Any, doc: SpecDocument, location: str) -> List[OperationSpec]:
    """Operations a consumer must serve at the URIs it hands over; the runtime expression is kept as template."""
    operations: List[OperationSpec] = []
    if not isinstance(raw_callbacks, dict):
        return operations
    for name, raw_callback in sorted(raw_callbacks.items()):
        callback, callback_doc = compiler.deref(raw_callback, doc, f"{location}/callbacks/{name}")
        for expression, raw_item in sorted((callback or {}).items()):
            item, item_doc = compiler.deref(raw_item, callback_doc, f"{location}/callbacks/{name}")
            for method in HTTP_METHODS:
                raw_op = (item or {}).get(method)
                if not isinstance(raw_op, dict):
                    continue
                raw_op = {k: v for k, v in raw_op.items() if k != "callbacks"}
                where = f"{location}/callbacks/{name}/{method}"
                operation = _compile_operation(compiler, method, raw_op, str(expression), item_doc, where)
                if operation is not None:
                    operations.append(operation)
    return operations


def _path_parameters(compiler: SchemaCompiler, raw_params: Any, doc: SpecDocument, location: str) -> Dict[str, SchemaIR]:
    result: Dict[str, SchemaIR] = {}
    for i, raw_param in enumerate(raw_params or []):
        param, param_doc = compiler.deref(raw_param, doc, f"{location}/parameters/{i}")
        if not isinstance(param, dict) or param.get("in") != "path" or "schema" not in param:
            continue
        result[str(param["name"])] = compiler.compile(param["schema"], param_doc, f"{location}/parameters/{i}/schema")
    return result


def compile_index(documents: Sequence[SpecDocument], digest: str = "", notes: Sequence[DecodeNote] = ()) -> SpecIndex:
    """Compile parsed documents; the result does not depend on the order of `documents`."""
    ordered = sorted(documents, key=lambda d: d.file_name)
    by_name = {d.file_name: d for d in ordered}
    compiler = SchemaCompiler(by_name)
    load_notes: List[DecodeNote] = list(notes)
    supported: Dict[str, str] = {}
    entries: List[SpecEntry] = []

    for doc in ordered:
        if not doc.has_paths:
            continue
        known = supported.get(doc.api_name)
        if known is not None and known != doc.api_version:
            load_notes.append(DecodeNote(
                kind=NoteKind.LOAD_WARNING,
                message=f"{doc.file_name}: {doc.api_name} {doc.api_version} ignored, corpus already has {known}",
            ))
            continue
        supported[doc.api_name] = doc.api_version
        for raw_path in doc.raw_paths:
            location = f"{doc.file_name}#/paths/{raw_path.template}"
            item, item_doc = compiler.deref(raw_path.item, doc, location)
            params = _path_parameters(compiler, item.get("parameters"), item_doc, location)
            operations: Dict[str, OperationSpec] = {}
            for method in HTTP_METHODS:
                raw_op = item.get(method)
                if not isinstance(raw_op, dict):
                    continue
                for name, schema in _path_parameters(compiler, raw_op.get("parameters"), item_doc, f"{location}/{method}").items():
                    params.setdefault(name, schema)
                operation = _compile_operation(compiler, method, raw_op, raw_path.template, item_doc)
                if operation is not None:
                    operations[operation.method] = operation
            if not operations:
                continue
            entries.append(SpecEntry(
                base_path=doc.base_path,
                matcher=compile_path_template(raw_path.template, params),
                operations=MappingProxyType(operations),
                document=doc.file_name,
                api_name=doc.api_name,
            ))

    load_notes.extend(compiler.notes)
    load_notes.extend(compiler.format_notes())
    for note in compiler.format_notes():
        logger.info(note.message)
    entries.sort(key=lambda e: (e.base_path, e.matcher.template))
    return SpecIndex(
        entries=tuple(entries),
        supported_versions=MappingProxyType(dict(sorted(supported.items()))),
        documents=tuple(d.file_name for d in ordered),
        digest=digest,
        notes=tuple(load_notes),
    )


def load_spec_dir(directory: Union[str, Path]) -> SpecIndex:
    documents, digest, notes = read_documents(directory)
    for note in notes:
        logger.warning(note.message)
    index = compile_index(documents, digest, notes)
    logger.info("Compiled %d path entries from %d documents", len(index.entries), len(index.documents))
    return index


def lookup_operation(method: str, path: str, index: SpecIndex) -> Union[OperationMatch, LookupMiss]:
    """
    Find the operation for a request.
    The api-name segment may sit behind a deployment prefix; matching starts there.
    """
    path = path.split("?", 1)[0].split("#", 1)[0]
    method = method.upper()
    segments = path.split("/")
    api_at = next((i for i, s in enumerate(segments) if s in index.supported_versions), None)
    if api_at is None:
        return LookupMiss(MissReason.UNKNOWN_BASE_PATH, f"no API in the corpus serves {path}")
    suffix = "/" + "/".join(segments[api_at:])

    candidates: List[Tuple[SpecEntry, Dict[str, str]]] = []
    base_matched = False
    for entry in index.entries:
        if not (suffix == entry.base_path or suffix.startswith(entry.base_path + "/")):
            continue
        base_matched = True
        bound = entry.matcher.match(suffix[len(entry.base_path):])
        if bound is not None:
            candidates.append((entry, bound))

    if candidates:
        with_method = [c for c in candidates if method in c[0].operations]
        if not with_method:
            allowed = sorted({m for entry, _ in candidates for m in entry.operations})
            return LookupMiss(
                MissReason.METHOD_NOT_ALLOWED,
                f"{method} not defined for {candidates[0][0].matcher.template} (allowed: {', '.join(allowed)})",
                allowed_methods=tuple(allowed),
            )
        entry, bound = min(
            with_method,
            key=lambda c: (-c[0].matcher.literal_segment_count, c[0].matcher.template, c[0].base_path),
        )
        return OperationMatch(entry=entry, operation=entry.operations[method], path_params=MappingProxyType(bound))

    if base_matched:
        return LookupMiss(MissReason.UNKNOWN_PATH, f"no path template of the API matches {suffix}")
    api_name = segments[api_at]
    found = segments[api_at + 1] if api_at + 1 < len(segments) else ""
    expected = index.supported_versions[api_name]
    if found != expected:
        return LookupMiss(
            MissReason.UNSUPPORTED_VERSION,
            f"{api_name} {found or '(none)'} requested, corpus provides {expected}",
            found_version=found,
            expected_version=expected,
        )
    return LookupMiss(MissReason.UNKNOWN_BASE_PATH, f"no API in the corpus serves {path}")
