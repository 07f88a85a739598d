import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msgflow.events import (
    EVENT_KINDS,
    MessageKey,
    TraceEvent,
    TraceFormatError,
    decode_event,
    decode_record,
    encode_event,
)

ident = st.text(
    alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd"), whitelist_characters="_-/"),
    min_size=1,
    max_size=12,
)
nonneg = st.integers(min_value=0, max_value=2**53)
extra_value = st.one_of(
    st.integers(min_value=-(2**31), max_value=2**31),
    st.floats(allow_nan=False, allow_infinity=False, width=32),
    st.booleans(),
    st.text(max_size=20),
    st.none(),
)


@st.composite
def trace_events(draw):
    kind = draw(st.sampled_from(sorted(EVENT_KINDS)))
    payload = {}
    for name in EVENT_KINDS[kind]:
        if name == "in":
            payload[name] = draw(
                st.lists(
                    st.fixed_dictionaries({"pub": ident, "seq": nonneg}),
                    min_size=1,
                    max_size=4,
                )
            )
        elif name == "queue_depth":
            payload[name] = draw(st.integers(min_value=1, max_value=100))
        elif name in ("seq", "src_seq", "out_seq"):
            payload[name] = draw(nonneg)
        else:
            payload[name] = draw(ident)
    extras = draw(
        st.dictionaries(
            ident.filter(lambda s: s not in EVENT_KINDS[kind] and s not in ("t", "host", "pid", "tid", "kind")),
            extra_value,
            max_size=3,
        )
    )
    payload.update(extras)
    return TraceEvent(
        t=draw(nonneg),
        host=draw(ident),
        pid=draw(st.integers(min_value=0, max_value=1 << 20)),
        tid=draw(st.integers(min_value=0, max_value=1 << 20)),
        kind=kind,
        payload=payload,
    )


@settings(max_examples=200)
@given(trace_events())
def test_roundtrip_identity(event):
    line = encode_event(event)
    back = decode_event(line)
    assert back == event
    assert encode_event(back) == line


@settings(max_examples=100)
@given(trace_events())
def test_encode_deterministic_under_key_shuffle(event):
    # same fields in any dict insertion order must encode identically
    line = encode_event(event)
    obj = json.loads(line)
    for shuffled in (dict(reversed(list(obj.items()))), dict(sorted(obj.items()))):
        assert encode_event(decode_record(shuffled)) == line


def test_canonical_field_order():
    ev = TraceEvent(
        t=5,
        host="h",
        pid=1,
        tid=2,
        kind="sub_init",
        payload={"zz_extra": 1, "queue_depth": 3, "topic": "map", "node": "n", "sub": "s", "aa": 2},
    )
    line = encode_event(ev)
    keys = list(json.loads(line).keys())
    assert keys == ["t", "host", "pid", "tid", "kind", "sub", "node", "topic", "queue_depth", "aa", "zz_extra"]
    assert " " not in line  # compact separators


def test_extras_survive_roundtrip():
    line = '{"t":1,"host":"h","pid":1,"tid":1,"kind":"publish","pub":"p","seq":0,"note":"x","nested":{"a":[1,2]}}'
    ev = decode_event(line)
    assert ev["note"] == "x"
    assert ev["nested"] == {"a": [1, 2]}
    assert json.loads(encode_event(ev)) == json.loads(line)


@pytest.mark.parametrize(
    "line,fragment",
    [
        ("not json", "malformed JSON"),
        ("[1,2]", "must be a JSON object"),
        ('{"host":"h","pid":1,"tid":1,"kind":"publish","pub":"p","seq":0}', "missing field 't'"),
        ('{"t":-1,"host":"h","pid":1,"tid":1,"kind":"publish","pub":"p","seq":0}', "negative timestamp"),
        ('{"t":1,"host":"","pid":1,"tid":1,"kind":"publish","pub":"p","seq":0}', "host"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"nope","x":1}', "unknown kind"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"publish","pub":"p"}', "missing field 'seq'"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"publish","pub":"p","seq":-2}', "seq"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"publish","pub":"","seq":0}', "pub"),
        ('{"t":1.5,"host":"h","pid":1,"tid":1,"kind":"publish","pub":"p","seq":0}', "integer"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"sub_init","sub":"s","node":"n","topic":"x","queue_depth":0}', "queue_depth"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"link","out_pub":"p","out_seq":0,"in":[]}', "non-empty list"),
        ('{"t":1,"host":"h","pid":1,"tid":1,"kind":"link","out_pub":"p","out_seq":0,"in":[{"pub":"q"}]}', "link input"),
    ],
)
def test_grammar_rejection(line, fragment):
    with pytest.raises(TraceFormatError) as err:
        decode_event(line)
    assert fragment in str(err.value)


def test_bool_is_not_an_integer():
    with pytest.raises(TraceFormatError):
        decode_record({"t": True, "host": "h", "pid": 1, "tid": 1, "kind": "publish", "pub": "p", "seq": 0})
    with pytest.raises(TraceFormatError):
        decode_record({"t": 1, "host": "h", "pid": 1, "tid": 1, "kind": "publish", "pub": "p", "seq": False})


def test_decode_record_does_not_mutate_caller_dict():
    obj = {"t": 1, "host": "h", "pid": 1, "tid": 1, "kind": "cb_end", "sub": "s", "cb": "c"}
    before = dict(obj)
    decode_record(obj)
    assert obj == before


def test_message_key_parse_and_str():
    key = MessageKey.parse("cam:17")
    assert key == MessageKey("cam", 17)
    assert str(key) == "cam:17"
    # publisher ids may themselves contain colons
    assert MessageKey.parse("ns:cam:3") == MessageKey("ns:cam", 3)
    with pytest.raises(TraceFormatError):
        MessageKey.parse("nocolon")
    with pytest.raises(TraceFormatError):
        MessageKey.parse("cam:xyz")


def test_event_mapping_access():
    ev = decode_event('{"t":1,"host":"h","pid":1,"tid":1,"kind":"cb_end","sub":"s","cb":"c"}')
    assert ev["sub"] == "s"
    assert ev.get("missing") is None
    assert ev.get("missing", 7) == 7
