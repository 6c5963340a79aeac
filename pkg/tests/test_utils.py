from __future__ import annotations
import json
import math

import pytest

from hullsense.utils import (
    canonical_json_string,
    locate_json_path,
    parse_override,
    sha256_text,
    validate_against_schema,
)


def test_canonical_json_string_stable_ordering():
    a = {"b": 2, "a": 1, "c": {"y": 1, "x": 2}}
    b = {"c": {"x": 2, "y": 1}, "b": 2, "a": 1}
    sa = canonical_json_string(a)
    assert sa == canonical_json_string(b)
    assert sa == '{"a":1,"b":2,"c":{"x":2,"y":1}}'
    assert sha256_text(sa) == sha256_text(canonical_json_string(b))


def test_canonical_json_rejects_nan():
    with pytest.raises(ValueError):
        canonical_json_string({"x": math.nan})


def test_parse_override_values():
    assert parse_override("kappa=0.5") == (["kappa"], 0.5)
    assert parse_override("policy.kind=lex") == (["policy", "kind"], "lex")
    assert parse_override("weights.Q_diag=[1,2]") == (["weights", "Q_diag"], [1, 2])
    with pytest.raises(ValueError):
        parse_override("novalue")
    with pytest.raises(ValueError):
        parse_override("=3")


def test_locate_json_path_finds_nested_lines():
    text = json.dumps({"a": {"b": [10, 20, {"c": 1}]}, "d": 2}, indent=2)
    lines = text.splitlines()
    assert '"d"' in lines[locate_json_path(text, ["d"]) - 1]
    assert '"c"' in lines[locate_json_path(text, ["a", "b", 2, "c"]) - 1]
    assert "20" in lines[locate_json_path(text, ["a", "b", 1]) - 1]


def test_validate_against_scenario_schema(scenario_dict):
    assert validate_against_schema(scenario_dict(), "scenario.schema.json")["valid"]
    bad = scenario_dict(policy={"kind": "greedy"})
    report = validate_against_schema(bad, "scenario.schema.json")
    assert not report["valid"]
    assert report["errors"][0]["pointer"] == "/policy/kind"
