import json

import jsonschema
import pytest

import otgym


def _schema(schema_dir, direction, type_):
    return json.loads((schema_dir / direction / f"{type_}.schema.json").read_text())


def _validate(schema_dir, direction, msg):
    schema = _schema(schema_dir, direction, msg["type"])
    jsonschema.Draft202012Validator.check_schema(schema)
    jsonschema.validate(msg, schema, cls=jsonschema.Draft202012Validator)


def test_every_type_has_a_schema(schema_dir):
    c2s = {p.name.split(".")[0] for p in (schema_dir / "client_to_server").glob("*.schema.json")}
    s2c = {p.name.split(".")[0] for p in (schema_dir / "server_to_client").glob("*.schema.json")}
    assert c2s == {"hello", "operator_input", "mode_change", "start", "pause", "reset"}
    assert s2c == {"hello", "state_update", "haptic_update", "episode_result", "ack", "error"}


def test_valid_fixtures_match_schemas(schema_dir, fixture_dir):
    files = sorted((fixture_dir / "valid").glob("*.json"))
    assert len(files) == 12
    for f in files:
        msg = json.loads(f.read_text())
        direction = "client_to_server" if f.name.startswith("c2s_") else "server_to_client"
        _validate(schema_dir, direction, msg)
        if direction == "client_to_server":
            otgym.parse_envelope(f.read_text())


def test_invalid_fixtures_are_refused(fixture_dir):
    cases = json.loads((fixture_dir / "invalid" / "cases.json").read_text())
    for case in cases:
        with pytest.raises(otgym.ProtocolError) as e:
            otgym.parse_envelope(case["raw"])
        assert e.value.code == case["code"], case["name"]


def test_invalid_payloads_also_fail_schemas(schema_dir, fixture_dir):
    cases = json.loads((fixture_dir / "invalid" / "cases.json").read_text())
    checked = 0
    for case in cases:
        if case["code"] != "bad_payload":
            continue
        msg = json.loads(case["raw"])
        with pytest.raises(jsonschema.ValidationError):
            _validate(schema_dir, "client_to_server", msg)
        checked += 1
    assert checked >= 5
