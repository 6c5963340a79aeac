from __future__ import annotations
import datetime
import hashlib
import json
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Tuple, Union

from jsonschema import Draft7Validator

SCHEMA_DIR = Path(__file__).resolve().parent.parent / "schemas"


def deep_sort(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: deep_sort(obj[k]) for k in sorted(obj)}
    if isinstance(obj, list):
        return [deep_sort(x) for x in obj]
    return obj


def canonical_json_string(obj: Any) -> str:
    """Sorted-key compact JSON; raises ValueError on NaN or infinity."""
    return json.dumps(deep_sort(obj), ensure_ascii=False, separators=(",", ":"), allow_nan=False)


def sha256_text(s: str) -> str:
    return hashlib.sha256(s.encode("utf-8")).hexdigest()


def load_text(path: Union[str, Path]) -> str:
    return Path(path).read_text(encoding="utf-8")


def utc_now_iso() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat().replace("+00:00", "Z")


def reject_constant(name: str) -> Any:
    """parse_constant hook for json.loads: NaN and Infinity are not valid numbers here"""
    raise ValueError(f"non-finite number {name!r}")


# Simple in-process cache for schemas and validators, keyed by schema file name
_VALIDATOR_CACHE: Dict[str, Tuple[Dict[str, Any], Draft7Validator]] = {}


def load_schema(name: str) -> Tuple[Dict[str, Any], Draft7Validator]:
    cached = _VALIDATOR_CACHE.get(name)
    if cached is not None:
        return cached
    schema = json.loads(load_text(SCHEMA_DIR / name))
    validator = Draft7Validator(schema)
    _VALIDATOR_CACHE[name] = (schema, validator)
    return schema, validator


def validate_against_schema(obj: Any, schema_name: str) -> Dict[str, Any]:
    _, validator = load_schema(schema_name)
    errors = [
        {"path": list(e.absolute_path), "pointer": "/" + "/".join(map(str, e.absolute_path)), "message": e.message}
        for e in sorted(validator.iter_errors(obj), key=lambda e: list(map(str, e.absolute_path)))
    ]
    return {"valid": len(errors) == 0, "errors": errors}


def _skip_ws(text: str, i: int) -> int:
    while i < len(text) and text[i] in " \t\r\n":
        i += 1
    return i


def _element_offset(text: str, pos: int, index: int) -> int:
    """Offset of the index-th element of the first JSON array opening at or after pos."""
    start = text.find("[", pos)
    if start < 0:
        return pos
    depth = 0
    count = 0
    in_string = False
    escaped = False
    i = start
    while i < len(text):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                break
        elif ch == "," and depth == 1:
            count += 1
            if count == index:
                return _skip_ws(text, i + 1)
        i += 1
    return _skip_ws(text, start + 1) if index == 0 else pos


def locate_json_path(text: str, path: Iterable[Union[str, int]]) -> int:
    """
    Best-effort 1-based line number of the value addressed by a JSON path.

    Keys are matched by their quoted token after the current offset, array
    indices by counting top-level commas of the enclosing array.
    """
    pos = 0
    for segment in path:
        if isinstance(segment, int):
            pos = _element_offset(text, pos, segment)
        else:
            match = re.compile(r'"%s"\s*:' % re.escape(str(segment))).search(text, pos)
            if match is None:
                break
            pos = match.start()
    return text.count("\n", 0, pos) + 1


def parse_override(raw: str) -> Tuple[List[str], Any]:
    """Split ``a.b=value`` into a key path and a JSON-decoded value (string fallback)."""
    if "=" not in raw:
        raise ValueError(f"override {raw!r} is not of the form key=value")
    key, value = raw.split("=", 1)
    key = key.strip()
    if not key:
        raise ValueError(f"override {raw!r} has an empty key")
    try:
        parsed = json.loads(value, parse_constant=reject_constant)
    except ValueError:
        parsed = value
    return key.split("."), parsed
