import pytest
from hypothesis import given, settings, strategies as st

from kclnet.errors import ArityError, DuplicateIdError, NetlistSyntaxError, UnitError
from kclnet.netlist import (
    DeviceKind,
    format_value,
    parse_netlist,
    parse_value,
    serialize_circuit,
    validate_circuit,
)
from kclnet.synthdata import NUM_CLASSES, gen_circuit


def test_single_resistor():
    c = parse_netlist("R1 a b 10k")
    (r,) = c.devices
    assert r.kind is DeviceKind.RESISTOR
    assert r.pins == [("n+", "a"), ("n-", "b")]
    assert r.params["r"] == 1.0e4
    assert {n.id for n in c.nets} == {"a", "b"}


def test_nmos_pin_roles():
    c = parse_netlist("M1 d g s b NMOS W=1u L=0.18u")
    (m,) = c.devices
    assert m.kind is DeviceKind.NMOS
    assert [r for r, _ in m.pins] == ["nd", "ng", "ns", "nb"]
    assert m.params == {"w": 1e-6, "l": 1.8e-7}


def test_bjt_line_order_maps_to_roles():
    (q,) = parse_netlist("Q1 c b e PNP").devices
    assert q.kind is DeviceKind.PNP
    assert q.net_of("nc") == "c" and q.net_of("nb") == "b" and q.net_of("ne") == "e"


def test_empty_text_is_syntax_error():
    with pytest.raises(NetlistSyntaxError, match="no devices"):
        parse_netlist("")


@pytest.mark.parametrize("kind,arity", [
    (DeviceKind.NMOS, 4), (DeviceKind.PMOS, 4), (DeviceKind.NPN, 3), (DeviceKind.PNP, 3),
    (DeviceKind.DIODE, 2), (DeviceKind.RESISTOR, 2), (DeviceKind.CAPACITOR, 2),
    (DeviceKind.INDUCTOR, 2), (DeviceKind.VSOURCE, 2), (DeviceKind.GROUND, 1),
])
def test_arity_table(kind, arity):
    assert kind.arity == arity


def test_pin_role_tags():
    assert DeviceKind.PMOS.pin_roles == ("pd", "pg", "ps", "pb")
    assert DeviceKind.NPN.pin_roles == ("nb", "nc", "ne")
    assert DeviceKind.CAPACITOR.pin_roles == ("n+", "n-")


@pytest.mark.parametrize("text,exc", [
    ("R1 a 10k", ArityError),
    ("M1 d g s NMOS", ArityError),
    ("R1 a b 10x", UnitError),
    ("R1 a b 1k\nr1 c d 2k", DuplicateIdError),
    ("X1 a b", NetlistSyntaxError),
    (".subckt foo", NetlistSyntaxError),
])
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_netlist(text)


def test_error_carries_position():
    with pytest.raises(UnitError) as info:
        parse_netlist("* header\nR1 a b 10q")
    assert info.value.line == 2
    assert info.value.column == 8


def test_comments_crlf_and_end():
    c = parse_netlist("* title\r\nV1 vdd 0 1\r\n\r\nR1 vdd 0 1k\r\n.end\r\nR2 x y 1\r\n")
    assert [d.id for d in c.devices] == ["V1", "R1"]


def test_unknown_params_preserved():
    (m,) = parse_netlist("M1 d g s b PMOS W=2u M=4 foo=bar").devices
    assert m.params == {"w": 2e-6}
    assert m.extra == {"m": "4", "foo": "bar"}


@pytest.mark.parametrize("token,value", [("10k", 1.0e4), ("0.18u", 1.8e-7), ("5meg", 5.0e6),
                                         ("1m", 1e-3), ("2g", 2e9), ("3f", 3e-15), ("4.7n", 4.7e-9),
                                         ("1e3", 1000.0), (".5p", 5e-13)])
def test_unit_suffixes(token, value):
    assert parse_value(token) == value


def test_canonical_rendering():
    assert format_value(1e4) == "1e4"
    assert format_value(1.8e-7) == "1.8e-7"
    assert format_value(5.0) == "5"
    assert format_value(0.0) == "0"


def test_serialize_canonical_and_idempotent():
    once = serialize_circuit(parse_netlist("R1 a b 10k"))
    assert "R1 a b 1e4" in once.splitlines()
    twice = serialize_circuit(parse_netlist(once))
    assert once == twice


def test_roundtrip_four_devices():
    c = parse_netlist("V1 vdd 0 1\nR1 vdd x 1k\nC1 x 0 1p\nM1 x vdd 0 0 NMOS W=1u L=1u")
    c2 = parse_netlist(serialize_circuit(c))
    assert len(c2.devices) == 4 and len(c2.nets) == len(c.nets)
    assert [(d.id, d.kind, d.pins, d.params) for d in c.devices] == \
        [(d.id, d.kind, d.pins, d.params) for d in c2.devices]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, NUM_CLASSES - 1), st.integers(0, 10_000))
def test_roundtrip_generated(cls, seed):
    c = gen_circuit(cls, seed=seed)
    c2 = parse_netlist(serialize_circuit(c), c.name)
    assert [(d.id, d.kind, d.pins, d.params) for d in c.devices] == \
        [(d.id, d.kind, d.pins, d.params) for d in c2.devices]
    for d in c2.devices:
        assert len(d.pins) == d.kind.arity


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-15, max_value=1e12, allow_nan=False))
def test_value_format_roundtrip(x):
    assert parse_value(format_value(x)) == x


def test_validate_series_ok(series):
    assert validate_circuit(series).ok


def test_validate_no_source():
    rep = validate_circuit(parse_netlist("R1 a 0 1k\nR2 a 0 1k"))
    assert not rep.ok and "NO_VSOURCE" in rep.codes()


def test_validate_floating_net():
    rep = validate_circuit(parse_netlist("V1 vdd 0 1\nR1 vdd 0 1k\nR2 vdd dangling 1k"))
    assert "FLOATING_NET" in rep.codes()


def test_validate_no_ground():
    rep = validate_circuit(parse_netlist("V1 a b 1\nR1 a b 1k"))
    assert {"NO_GROUND", "VSOURCE_NOT_GROUNDED"} <= rep.codes()


def test_validate_unconnected_device_is_warning():
    rep = validate_circuit(parse_netlist("V1 vdd 0 1\nR1 vdd 0 1k\nR2 x x 1k"))
    assert "UNCONNECTED_DEVICE" in rep.codes()
    # the self-looped net x has two pins, so nothing else is wrong
    assert rep.ok
