import random
import re
import string

import pytest
from hypothesis import given, strategies as st

from sbilint.errors import BadTemplate, EmptyCorpus, SpecError, UnresolvableRef
from sbilint.models import MissReason, NoteKind, SchemaKind
from sbilint.stages.openapi import (
    LookupMiss,
    OperationMatch,
    SchemaIR,
    compile_index,
    compile_path_template,
    compile_pattern,
    compile_schema,
    ecma_to_python,
    iter_schema_nodes,
    load_spec_dir,
    lookup_operation,
    make_document,
    read_documents,
    resolve_ref,
)
from sbilint.stages.validator import validate

from pcapgen import SPEC_DIR

NF_ID = "8d4e2bd6-3f0a-4c7e-9d5a-2b1f0e6c7a11"
SEGMENT = string.ascii_letters + string.digits + "._~"


def _doc(name, base, paths, schemas=None):
    raw = {
        "openapi": "3.0.0",
        "info": {"title": name, "version": "1.0.0"},
        "servers": [{"url": "{apiRoot}" + base}],
        "paths": paths,
        "components": {"schemas": schemas or {}},
    }
    return make_document(name, raw)[0]


def _op(operation_id, status="200"):
    return {"operationId": operation_id, "responses": {status: {"description": "ok"}}}


def test_corpus_versions(spec_index):
    assert dict(spec_index.supported_versions) == {
        "nausf-auth": "v1",
        "nnrf-disc": "v1",
        "nnrf-nfm": "v1",
        "nsmf-pdusession": "v1",
        "nudm-sdm": "v2",
        "nudm-ueau": "v1",
        "nudr-dr": "v2",
    }
    assert len(spec_index.digest) == 64


def test_unknown_format_noted_once(spec_index):
    notes = [n for n in spec_index.notes if n.kind == NoteKind.UNVALIDATED_FORMAT]
    assert len(notes) == 1
    assert "'binary'" in notes[0].message


def test_lookup_binds_operation_and_parameters(spec_index):
    result = lookup_operation("PUT", f"/nnrf-nfm/v1/nf-instances/{NF_ID}", spec_index)
    assert isinstance(result, OperationMatch)
    assert result.operation.operation_id == "RegisterNFInstance"
    assert result.operation.document == "TS29510_Nnrf_NFManagement.yaml"
    assert dict(result.path_params) == {"nfInstanceID": NF_ID}


def test_lookup_ignores_query_and_deployment_prefix(spec_index):
    plain = lookup_operation("GET", "/nnrf-disc/v1/nf-instances?target-nf-type=AUSF", spec_index)
    prefixed = lookup_operation("GET", "/core/nrf/nnrf-disc/v1/nf-instances", spec_index)
    assert plain.operation.operation_id == prefixed.operation.operation_id == "SearchNFInstances"


def test_lookup_method_not_allowed(spec_index):
    miss = lookup_operation("POST", f"/nnrf-nfm/v1/nf-instances/{NF_ID}", spec_index)
    assert isinstance(miss, LookupMiss)
    assert miss.reason == MissReason.METHOD_NOT_ALLOWED
    assert miss.allowed_methods == ("DELETE", "GET", "PUT")


def test_lookup_unsupported_version(spec_index):
    miss = lookup_operation(
        "PUT", "/nudr-dr/v1/subscription-data/imsi-001010000000001/authentication-data/authentication-status",
        spec_index,
    )
    assert miss.reason == MissReason.UNSUPPORTED_VERSION
    assert (miss.found_version, miss.expected_version) == ("v1", "v2")


@pytest.mark.parametrize("path, reason", [
    ("/nnrf-nfm/v1/no-such-resource", MissReason.UNKNOWN_PATH),
    ("/nnrf-nfm/v1", MissReason.UNKNOWN_PATH),
    ("/namf-comm/v1/ue-contexts/1", MissReason.UNKNOWN_BASE_PATH),
    ("/", MissReason.UNKNOWN_BASE_PATH),
])
def test_lookup_misses(spec_index, path, reason):
    assert lookup_operation("GET", path, spec_index).reason == reason


def test_lookup_prefers_literal_segments():
    doc = _doc("A.yaml", "/napi/v1", {
        "/items/{id}": {"get": _op("GetItem")},
        "/items/search": {"get": _op("SearchItems")},
    })
    index = compile_index([doc])
    assert lookup_operation("GET", "/napi/v1/items/search", index).operation.operation_id == "SearchItems"
    assert lookup_operation("GET", "/napi/v1/items/42", index).operation.operation_id == "GetItem"


def test_lookup_prefers_candidate_with_method():
    doc = _doc("A.yaml", "/napi/v1", {
        "/items/{id}": {"delete": _op("DeleteItem", "204")},
        "/items/search": {"get": _op("SearchItems")},
    })
    index = compile_index([doc])
    assert lookup_operation("DELETE", "/napi/v1/items/search", index).operation.operation_id == "DeleteItem"


def test_first_version_of_an_api_wins():
    v1 = _doc("A_v1.yaml", "/napi/v1", {"/items": {"get": _op("ListV1")}})
    v2 = _doc("B_v2.yaml", "/napi/v2", {"/items": {"get": _op("ListV2")}})
    index = compile_index([v2, v1])
    assert dict(index.supported_versions) == {"napi": "v1"}
    assert any(n.kind == NoteKind.LOAD_WARNING and "B_v2.yaml" in n.message for n in index.notes)


def test_lookup_invariant_under_load_order(spec_dir):
    documents, digest, notes = read_documents(spec_dir)
    requests = [
        ("PUT", f"/nnrf-nfm/v1/nf-instances/{NF_ID}"),
        ("POST", "/nnrf-nfm/v1/subscriptions"),
        ("DELETE", "/nnrf-nfm/v1/subscriptions/00101-abc"),
        ("GET", "/nudm-sdm/v2/imsi-001010000000001/sm-data"),
        ("POST", "/nudm-ueau/v1/imsi-001010000000001/auth-events"),
        ("PUT", "/nausf-auth/v1/ue-authentications/1/5g-aka-confirmation"),
        ("GET", "/nudm-sdm/v1/imsi-001010000000001/sm-data"),
        ("GET", "/nope/v1/x"),
    ]

    def outcome(index):
        result = []
        for method, path in requests:
            found = lookup_operation(method, path, index)
            if isinstance(found, OperationMatch):
                result.append((found.operation.operation_id, found.entry.matcher.template, tuple(found.path_params.items())))
            else:
                result.append((found.reason, found.detail))
        return result

    expected = outcome(compile_index(documents, digest, notes))
    rng = random.Random(7)
    for _ in range(5):
        shuffled = list(documents)
        rng.shuffle(shuffled)
        assert outcome(compile_index(shuffled, digest, notes)) == expected


def _entry_path(entry, values):
    path = entry.matcher.template
    for name in entry.matcher.parameter_names:
        path = path.replace("{" + name + "}", values[name], 1)
    return entry.base_path + path


def test_generated_paths_match_their_template(spec_index):
    rng = random.Random(2024)
    for entry in spec_index.entries:
        method = sorted(entry.operations)[0]
        for _ in range(100):
            values = {
                name: "".join(rng.choice(string.ascii_letters + string.digits) for _ in range(rng.randint(1, 12)))
                for name in entry.matcher.parameter_names
            }
            found = lookup_operation(method, _entry_path(entry, values), spec_index)
            assert isinstance(found, OperationMatch), (entry.matcher.template, values)
            assert found.entry.matcher.template == entry.matcher.template
            assert dict(found.path_params) == values


def _patterned_path_parameters():
    documents, _, _ = read_documents(SPEC_DIR)
    corpus = {d.file_name: d for d in documents}
    found = set()
    for doc in documents:
        for raw_path in doc.raw_paths:
            item = raw_path.item
            for method in ("get", "put", "post", "patch", "delete"):
                operation = item.get(method)
                if not isinstance(operation, dict):
                    continue
                for param in [*item.get("parameters", []), *operation.get("parameters", [])]:
                    if param.get("in") != "path":
                        continue
                    schema = param.get("schema") or {}
                    if "$ref" in schema:
                        pattern = resolve_ref(schema["$ref"], doc, corpus).pattern
                    else:
                        pattern = schema.get("pattern")
                    if pattern:
                        found.add((doc.base_path + raw_path.template, method.upper(), param["name"], pattern))
    return sorted(found)


PATTERNED_PARAMETERS = _patterned_path_parameters()
PARAMETER_CHARS = SEGMENT + "-"


def test_corpus_has_patterned_path_parameters():
    assert {name for _, _, name, _ in PATTERNED_PARAMETERS} >= {"supi", "subscriptionID"}


@pytest.mark.parametrize("template, method, name, pattern", PATTERNED_PARAMETERS)
@given(data=st.data())
def test_values_from_declared_patterns_match(spec_index, template, method, name, pattern, data):
    value = data.draw(st.from_regex(pattern, fullmatch=True, alphabet=PARAMETER_CHARS))
    found = lookup_operation(method, template.replace("{" + name + "}", value), spec_index)
    assert isinstance(found, OperationMatch), (template, value)
    assert found.path_params[name] == value


def test_value_outside_declared_pattern_misses(spec_index):
    found = lookup_operation("DELETE", "/nnrf-nfm/v1/subscriptions/a-b", spec_index)
    assert isinstance(found, LookupMiss)
    assert found.reason == MissReason.UNKNOWN_PATH
    assert isinstance(lookup_operation("DELETE", "/nnrf-nfm/v1/subscriptions/12345-b", spec_index), OperationMatch)


def test_mutated_paths_miss(spec_index):
    rng = random.Random(99)
    for entry in spec_index.entries:
        method = sorted(entry.operations)[0]
        for _ in range(100):
            values = {name: f"p{rng.randint(0, 10_000)}" for name in entry.matcher.parameter_names}
            path = _entry_path(entry, values)
            if rng.random() < 0.5:
                path += "/extra/" + rng.choice(["x", "0", "tail"])
            else:
                segments = path.split("/")
                literal = [i for i, s in enumerate(segments) if s and s not in values.values()
                           and i > entry.base_path.count("/")]
                i = rng.choice(literal)
                segments[i] = segments[i] + rng.choice(["x", "-", "s"])
                path = "/".join(segments)
            found = lookup_operation(method, path, spec_index)
            assert isinstance(found, LookupMiss), path
            assert found.reason == MissReason.UNKNOWN_PATH


@given(st.lists(st.text(SEGMENT, min_size=1, max_size=8), min_size=1, max_size=3))
def test_single_parameter_never_spans_segments(segments):
    matcher = compile_path_template("/{id}/tail")
    bound = matcher.match("/" + "/".join(segments) + "/tail")
    if len(segments) == 1:
        assert bound == {"id": segments[0]}
    else:
        assert bound is None


def test_parameter_pattern_becomes_segment_expression():
    schema = compile_schema({"type": "string", "pattern": "^[0-9]{5}$"})
    matcher = compile_path_template("/sub/{subId}", {"subId": schema})
    assert matcher.match("/sub/12345") == {"subId": "12345"}
    assert matcher.match("/sub/1234") is None
    assert matcher.literal_segment_count == 1


@pytest.mark.parametrize("template", ["no-slash", "/a/{id", "/a/id}", "/a/{}", "/a/{x{y}}"])
def test_bad_templates(template):
    with pytest.raises(BadTemplate):
        compile_path_template(template)


@pytest.mark.parametrize("pattern, expected", [
    ("^a$", r"^a\Z"),
    ("(?<name>x)", "(?P<name>x)"),
    ("(?<=x)y", "(?<=x)y"),
    ("[$^]", "[$^]"),
    (r"a\$", r"a\$"),
])
def test_ecma_translation(pattern, expected):
    assert ecma_to_python(pattern) == expected


def test_patterns_are_ascii_and_reject_trailing_newline():
    pattern = compile_pattern(r"^\d{3}$")
    assert pattern.search("123")
    assert not pattern.search("123\n")
    assert not pattern.search("١٢٣")


def test_recursive_schema_is_a_cycle():
    node = compile_schema(
        {"$ref": "#/components/schemas/Tree"},
        {"Tree": {"type": "object", "properties": {"children": {"type": "array", "items": {"$ref": "#/components/schemas/Tree"}}}}},
    )
    assert node.properties["children"].items is node
    assert len(list(iter_schema_nodes(node))) == 2


def test_mixed_groups_are_split():
    node = compile_schema({
        "type": "object",
        "properties": {"a": {"type": "string"}},
        "oneOf": [{"required": ["a"]}, {"required": ["b"]}],
    })
    assert node.kind == SchemaKind.COMPOSITE
    assert node.implicit_all_of
    base, composite = node.all_of
    assert base.kind == SchemaKind.OBJECT and set(base.properties) == {"a"}
    assert len(composite.one_of) == 2


def test_alias_becomes_implicit_all_of():
    node = compile_schema(
        {"$ref": "#/components/schemas/Alias"},
        {"Alias": {"$ref": "#/components/schemas/Target"}, "Target": {"type": "integer", "minimum": 0}},
    )
    assert node.implicit_all_of
    assert node.all_of[0].name == "Target"
    assert node.all_of[0].minimum == 0


def test_resolve_cross_file_reference(spec_dir):
    documents, _, _ = read_documents(spec_dir)
    corpus = {d.file_name: d for d in documents}
    nrf = corpus["TS29510_Nnrf_NFManagement.yaml"]
    sd = resolve_ref("TS29571_CommonData.yaml#/components/schemas/Sd", nrf, corpus)
    assert isinstance(sd, SchemaIR)
    assert sd.kind == SchemaKind.STRING
    assert sd.regex.search("0a0B0c")


def test_resolving_a_resolved_schema_changes_nothing(spec_dir):
    documents, _, _ = read_documents(spec_dir)
    corpus = {d.file_name: d for d in documents}
    nrf = corpus["TS29510_Nnrf_NFManagement.yaml"]
    sd = resolve_ref("TS29571_CommonData.yaml#/components/schemas/Sd", nrf, corpus)
    before = repr(sd), sd.kind, sd.pattern
    assert resolve_ref(sd, nrf, corpus) is sd
    assert resolve_ref(resolve_ref(sd, nrf, corpus), nrf, corpus) is sd
    assert (repr(sd), sd.kind, sd.pattern) == before


def test_cross_file_uinteger(spec_dir):
    documents, _, _ = read_documents(spec_dir)
    corpus = {d.file_name: d for d in documents}
    discovery = corpus["TS29510_Nnrf_NFDiscovery.yaml"]
    uinteger = resolve_ref("TS29571_CommonData.yaml#/components/schemas/Uinteger", discovery, corpus)
    assert (uinteger.kind, uinteger.minimum) == (SchemaKind.INTEGER, 0)
    search_result = resolve_ref("#/components/schemas/SearchResult", discovery, corpus)
    count = search_result.properties["numNfInstComplete"]
    assert (count.kind, count.minimum) == (SchemaKind.INTEGER, 0)
    assert validate(0, count) == []
    assert [f.rule_id.value for f in validate(-1, count)] == ["RANGE_VIOLATION"]


def test_unresolvable_reference_is_fatal():
    doc = _doc("A.yaml", "/napi/v1", {
        "/items": {"get": {"operationId": "List", "responses": {"200": {
            "description": "ok",
            "content": {"application/json": {"schema": {"$ref": "Missing.yaml#/components/schemas/X"}}},
        }}}},
    })
    with pytest.raises(UnresolvableRef) as e:
        compile_index([doc])
    assert "Missing.yaml" in e.value.detail


def test_empty_and_missing_corpus(tmp_path):
    (tmp_path / "README.txt").write_text("not a spec")
    with pytest.raises(EmptyCorpus):
        load_spec_dir(tmp_path)
    with pytest.raises(SpecError):
        load_spec_dir(tmp_path / "absent")


def test_server_without_version_skips_paths():
    raw = {"openapi": "3.0.0", "servers": [{"url": "https://example.com"}], "paths": {"/x": {"get": _op("X")}}}
    doc, notes = make_document("NoVersion.yaml", raw)
    assert not doc.has_paths
    assert notes and notes[0].kind == NoteKind.LOAD_WARNING


def test_callbacks_compiled(spec_index):
    match = lookup_operation("POST", "/nnrf-nfm/v1/subscriptions", spec_index)
    (callback,) = match.operation.callbacks
    assert callback.method == "POST"
    assert callback.template == "{$request.body#/nfStatusNotificationUri}"
    assert "application/json" in callback.request_body
    assert match.operation.callbacks_present


def test_response_headers_and_status_fallback(spec_index):
    match = lookup_operation("POST", "/nudm-ueau/v1/imsi-001010000000001/auth-events", spec_index)
    code, response = match.operation.response_for(201)
    assert code == "201"
    assert response.required_headers == ["location"]
    assert match.operation.response_for(500) is None
    assert match.operation.request_body_required


def test_path_regexes_compile(spec_index):
    for entry in spec_index.entries:
        assert re.compile(entry.matcher.regex)
