"""Fixed-width record codec.

Legacy-style flat records: every field lives at a fixed offset with a fixed
length, numerics are right-aligned, text is space-padded, decimals carry an
implied decimal point. Encode is strict about values the padding rules could
not round-trip (trailing spaces in left-aligned text, fractions that do not
fit the implied scale) so that decode(encode(v)) == v always holds for values
encode accepts.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Mapping

from .errors import CodecError

KINDS = ("text", "integer", "decimal")

_INT_RE = re.compile(r"^[+-]?[0-9]+$")

_KIND_DEFAULTS = {
    "text": ("space", "left"),
    "integer": ("zero", "right"),
    "decimal": ("zero", "right"),
}


@dataclass(frozen=True)
class FieldSpec:
    """One field of a fixed-width record. pad/align default by kind."""

    name: str
    offset: int
    length: int
    kind: str
    pad: str = ""
    align: str = ""
    scale: int = 0

    def __post_init__(self):
        if not self.name:
            raise CodecError("field name must be non-empty")
        if self.kind not in KINDS:
            raise CodecError(f"field {self.name}: unknown kind {self.kind!r}", self.name)
        if self.offset < 0 or self.length < 1:
            raise CodecError(f"field {self.name}: bad extent", self.name)
        d_pad, d_align = _KIND_DEFAULTS[self.kind]
        if not self.pad:
            object.__setattr__(self, "pad", d_pad)
        if not self.align:
            object.__setattr__(self, "align", d_align)
        if self.pad not in ("space", "zero"):
            raise CodecError(f"field {self.name}: bad pad {self.pad!r}", self.name)
        if self.align not in ("left", "right"):
            raise CodecError(f"field {self.name}: bad align {self.align!r}", self.name)
        if self.kind == "text" and self.pad != "space":
            raise CodecError(f"field {self.name}: text fields are space padded", self.name)
        if self.kind != "text" and self.align != "right":
            raise CodecError(f"field {self.name}: numeric fields are right aligned", self.name)
        if self.kind != "decimal" and self.scale != 0:
            raise CodecError(f"field {self.name}: scale applies to decimal only", self.name)
        if self.scale < 0 or self.scale >= self.length:
            raise CodecError(f"field {self.name}: scale out of range", self.name)

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass(frozen=True)
class MessageSpec:
    """A full record layout: total length plus non-overlapping fields."""

    record_length: int
    fields: tuple[FieldSpec, ...]

    def __post_init__(self):
        if self.record_length < 0:
            raise CodecError("record_length must be >= 0")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise CodecError("duplicate field names")
        ordered = sorted(self.fields, key=lambda f: f.offset)
        for f in ordered:
            if f.end > self.record_length:
                raise CodecError(f"field {f.name}: extends past record end", f.name)
        for a, b in zip(ordered, ordered[1:]):
            if a.end > b.offset:
                raise CodecError(f"fields {a.name} and {b.name} overlap", b.name)

    def field(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise CodecError(f"no field named {name!r}", name)

    @property
    def field_names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.fields)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "MessageSpec":
        try:
            fields = tuple(
                FieldSpec(
                    name=fd["name"],
                    offset=int(fd["offset"]),
                    length=int(fd["length"]),
                    kind=fd["kind"],
                    pad=fd.get("pad", ""),
                    align=fd.get("align", ""),
                    scale=int(fd.get("scale", 0)),
                )
                for fd in doc.get("fields", ())
            )
            return cls(record_length=int(doc["record_length"]), fields=fields)
        except (KeyError, TypeError, ValueError) as exc:
            raise CodecError(f"bad message spec: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "record_length": self.record_length,
            "fields": [
                {
                    "name": f.name,
                    "offset": f.offset,
                    "length": f.length,
                    "kind": f.kind,
                    "pad": f.pad,
                    "align": f.align,
                    "scale": f.scale,
                }
                for f in self.fields
            ],
        }


def _render_text(f: FieldSpec, value) -> str:
    if not isinstance(value, str):
        raise CodecError(f"field {f.name}: text value must be str", f.name)
    if len(value) > f.length:
        raise CodecError(f"field {f.name}: value too long for width {f.length}", f.name)
    for ch in value:
        if not (32 <= ord(ch) < 127):
            raise CodecError(f"field {f.name}: non-printable character", f.name)
    # Padding is stripped on decode, so values that already carry pad-side
    # spaces would not round-trip. Refuse them.
    if f.align == "left" and value.rstrip(" ") != value:
        raise CodecError(f"field {f.name}: trailing spaces would be lost", f.name)
    if f.align == "right" and value.lstrip(" ") != value:
        raise CodecError(f"field {f.name}: leading spaces would be lost", f.name)
    return value.ljust(f.length) if f.align == "left" else value.rjust(f.length)


def _render_units(f: FieldSpec, n: int) -> str:
    s = str(n)
    if len(s) > f.length:
        raise CodecError(f"field {f.name}: {s} overflows width {f.length}", f.name)
    return s.zfill(f.length) if f.pad == "zero" else s.rjust(f.length)


def _to_int(f: FieldSpec, value) -> int:
    if isinstance(value, bool):
        raise CodecError(f"field {f.name}: boolean is not an integer", f.name)
    if isinstance(value, int):
        return value
    if isinstance(value, str) and _INT_RE.match(value.strip()):
        return int(value.strip())
    raise CodecError(f"field {f.name}: {value!r} is not an integer", f.name)


def _to_units(f: FieldSpec, value) -> int:
    """Scale a decimal value to integer units per the field's implied scale."""
    if isinstance(value, bool):
        raise CodecError(f"field {f.name}: boolean is not a decimal", f.name)
    try:
        d = value if isinstance(value, Decimal) else Decimal(str(value))
    except InvalidOperation as exc:
        raise CodecError(f"field {f.name}: {value!r} is not a decimal", f.name) from exc
    scaled = d.scaleb(f.scale)
    if scaled != scaled.to_integral_value():
        raise CodecError(f"field {f.name}: {value} does not fit scale {f.scale}", f.name)
    return int(scaled)


def encode_record(spec: MessageSpec, values: Mapping) -> str:
    """Render a complete record. Every spec field must have a value; unknown
    value names are rejected so mapping typos surface here."""
    extra = set(values) - set(spec.field_names)
    if extra:
        raise CodecError(f"values for unknown fields: {sorted(extra)}")
    buf = [" "] * spec.record_length
    for f in spec.fields:
        if f.name not in values:
            raise CodecError(f"no value for field {f.name}", f.name)
        value = values[f.name]
        if f.kind == "text":
            cell = _render_text(f, value)
        elif f.kind == "integer":
            cell = _render_units(f, _to_int(f, value))
        else:
            cell = _render_units(f, _to_units(f, value))
        buf[f.offset : f.end] = cell
    return "".join(buf)


def _parse_units(f: FieldSpec, raw: str) -> int:
    stripped = raw.strip(" ")
    if not _INT_RE.match(stripped or ""):
        raise CodecError(f"field {f.name}: cannot parse {raw!r}", f.name)
    return int(stripped)


def decode_record(spec: MessageSpec, record: str) -> dict:
    """Parse a record back into typed values: str, int, or Decimal."""
    if len(record) != spec.record_length:
        raise CodecError(
            f"record length {len(record)} != spec length {spec.record_length}"
        )
    out = {}
    for f in spec.fields:
        raw = record[f.offset : f.end]
        if f.kind == "text":
            out[f.name] = raw.rstrip(" ") if f.align == "left" else raw.lstrip(" ")
        elif f.kind == "integer":
            out[f.name] = _parse_units(f, raw)
        else:
            out[f.name] = Decimal(_parse_units(f, raw)).scaleb(-f.scale)
    return out
