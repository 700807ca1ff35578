"""Fixed-width codec: round-trip property plus the strictness rules."""

from decimal import Decimal

import pytest
from hypothesis import given, strategies as st

from tra.errors import CodecError
from tra.records import FieldSpec, MessageSpec, decode_record, encode_record

# Printable ASCII without the space character, so padding can never collide
# with value content in generated cases.
_TEXT = st.text(
    alphabet=st.characters(min_codepoint=33, max_codepoint=126),
    min_size=0,
    max_size=12,
)


@st.composite
def spec_and_values(draw):
    n = draw(st.integers(min_value=1, max_value=5))
    fields = []
    values = {}
    offset = 0
    for i in range(n):
        offset += draw(st.integers(min_value=0, max_value=2))
        kind = draw(st.sampled_from(("text", "integer", "decimal")))
        length = draw(st.integers(min_value=1, max_value=10))
        name = f"f{i}"
        if kind == "text":
            align = draw(st.sampled_from(("left", "right")))
            fields.append(FieldSpec(name, offset, length, "text", align=align))
            values[name] = draw(
                st.text(
                    alphabet=st.characters(min_codepoint=33, max_codepoint=126),
                    min_size=0,
                    max_size=length,
                )
            )
        elif kind == "integer":
            pad = draw(st.sampled_from(("zero", "space")))
            fields.append(FieldSpec(name, offset, length, "integer", pad=pad))
            lo = -(10 ** (length - 1)) + 1 if length > 1 else 0
            values[name] = draw(st.integers(min_value=lo, max_value=10**length - 1))
        else:
            scale = draw(st.integers(min_value=0, max_value=min(length - 1, 4)))
            fields.append(FieldSpec(name, offset, length, "decimal", scale=scale))
            lo = -(10 ** (length - 1)) + 1 if length > 1 else 0
            units = draw(st.integers(min_value=lo, max_value=10**length - 1))
            values[name] = Decimal(units).scaleb(-scale)
        offset += length
    trailer = draw(st.integers(min_value=0, max_value=3))
    return MessageSpec(record_length=offset + trailer, fields=tuple(fields)), values


@given(spec_and_values())
def test_round_trip(case):
    spec, values = case
    record = encode_record(spec, values)
    assert len(record) == spec.record_length
    assert decode_record(spec, record) == values


def test_known_encoding():
    spec = MessageSpec(
        record_length=16,
        fields=(
            FieldSpec("id", 0, 6, "text"),
            FieldSpec("qty", 6, 4, "integer"),
            FieldSpec("amt", 10, 6, "decimal", scale=2),
        ),
    )
    record = encode_record(spec, {"id": "AB12", "qty": 7, "amt": Decimal("12.50")})
    assert record == "AB12  0007001250"
    assert decode_record(spec, record) == {
        "id": "AB12",
        "qty": 7,
        "amt": Decimal("12.50"),
    }


def test_interior_spaces_survive():
    spec = MessageSpec(record_length=8, fields=(FieldSpec("t", 0, 8, "text"),))
    assert decode_record(spec, encode_record(spec, {"t": "a b c"}))["t"] == "a b c"


def test_gap_bytes_are_spaces():
    spec = MessageSpec(record_length=6, fields=(FieldSpec("n", 4, 2, "integer"),))
    assert encode_record(spec, {"n": 5}) == "    05"


def test_integer_accepts_digit_strings():
    spec = MessageSpec(record_length=4, fields=(FieldSpec("n", 0, 4, "integer"),))
    assert encode_record(spec, {"n": "42"}) == "0042"
    with pytest.raises(CodecError):
        encode_record(spec, {"n": True})
    with pytest.raises(CodecError):
        encode_record(spec, {"n": "4_2"})


def test_negative_numbers_round_trip():
    spec = MessageSpec(
        record_length=10,
        fields=(
            FieldSpec("n", 0, 4, "integer"),
            FieldSpec("d", 4, 6, "decimal", scale=2),
        ),
    )
    rec = encode_record(spec, {"n": -3, "d": Decimal("-1.25")})
    assert decode_record(spec, rec) == {"n": -3, "d": Decimal("-1.25")}


@pytest.mark.parametrize(
    "value",
    ["toolongvalue", "tab\there", "trailing ", 12],
)
def test_text_rejections(value):
    spec = MessageSpec(record_length=8, fields=(FieldSpec("t", 0, 8, "text"),))
    with pytest.raises(CodecError):
        encode_record(spec, {"t": value})


def test_overflow_and_scale_rejections():
    spec = MessageSpec(
        record_length=8,
        fields=(
            FieldSpec("n", 0, 3, "integer"),
            FieldSpec("d", 3, 5, "decimal", scale=2),
        ),
    )
    with pytest.raises(CodecError):
        encode_record(spec, {"n": 1000, "d": Decimal("1")})
    with pytest.raises(CodecError):
        encode_record(spec, {"n": 1, "d": Decimal("0.123")})


def test_missing_and_unknown_values():
    spec = MessageSpec(record_length=4, fields=(FieldSpec("a", 0, 4, "text"),))
    with pytest.raises(CodecError):
        encode_record(spec, {})
    with pytest.raises(CodecError):
        encode_record(spec, {"a": "x", "b": "y"})


def test_decode_length_and_junk():
    spec = MessageSpec(record_length=4, fields=(FieldSpec("n", 0, 4, "integer"),))
    with pytest.raises(CodecError):
        decode_record(spec, "123")
    with pytest.raises(CodecError):
        decode_record(spec, "12x4")


def test_spec_validation():
    with pytest.raises(CodecError):
        FieldSpec("x", 0, 4, "float")
    with pytest.raises(CodecError):
        FieldSpec("x", 0, 4, "integer", align="left")
    with pytest.raises(CodecError):
        FieldSpec("x", 0, 4, "text", pad="zero")
    with pytest.raises(CodecError):
        FieldSpec("x", 0, 4, "integer", scale=2)
    with pytest.raises(CodecError):
        FieldSpec("x", 0, 4, "decimal", scale=4)
    with pytest.raises(CodecError):
        MessageSpec(4, (FieldSpec("a", 0, 3, "text"), FieldSpec("b", 2, 2, "text")))
    with pytest.raises(CodecError):
        MessageSpec(4, (FieldSpec("a", 0, 8, "text"),))
    with pytest.raises(CodecError):
        MessageSpec(8, (FieldSpec("a", 0, 2, "text"), FieldSpec("a", 4, 2, "text")))


def test_spec_dict_round_trip():
    spec = MessageSpec(
        record_length=10,
        fields=(
            FieldSpec("a", 0, 4, "text"),
            FieldSpec("b", 4, 6, "decimal", scale=3),
        ),
    )
    assert MessageSpec.from_dict(spec.to_dict()) == spec
