"""Parse, validate and serialize a small SPICE-like netlist dialect.

Supported statements, one per line::

    R<id> n+ n- <value>
    C<id> n+ n- <value>
    L<id> n+ n- <value>
    D<id> n+ n- [model]
    M<id> nd ng ns nb NMOS|PMOS [W=..] [L=..]
    Q<id> nc nb ne NPN|PNP
    V<id> n+ 0 <value>

``*`` starts a comment, blank lines are ignored and ``.end`` terminates the
deck. Device ids are case-insensitive and stored upper-case; net names are
stored lower-case. Net ``0`` is ground.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation

from .errors import ArityError, DuplicateIdError, NetlistSyntaxError, UnitError

GROUND_NET = "0"


class DeviceKind(enum.Enum):
    NMOS = ("nd", "ng", "ns", "nb")
    PMOS = ("pd", "pg", "ps", "pb")
    NPN = ("nb", "nc", "ne")
    PNP = ("nb", "nc", "ne")
    DIODE = ("n+", "n-")
    RESISTOR = ("n+", "n-")
    CAPACITOR = ("n+", "n-")
    INDUCTOR = ("n+", "n-")
    VSOURCE = ("n+", "n-")
    GROUND = ("gnd",)

    def __new__(cls, *roles):
        # identical role tuples would otherwise alias the members
        obj = object.__new__(cls)
        obj._value_ = len(cls.__members__)
        obj.pin_roles = tuple(roles)
        return obj

    @property
    def arity(self) -> int:
        return len(self.pin_roles)

    @property
    def is_two_terminal(self) -> bool:
        return self in TWO_TERMINAL


TWO_TERMINAL = frozenset(
    {DeviceKind.DIODE, DeviceKind.RESISTOR, DeviceKind.CAPACITOR, DeviceKind.INDUCTOR}
)

# order in which pins appear on a netlist line, by role
_LINE_ORDER = {
    DeviceKind.NMOS: ("nd", "ng", "ns", "nb"),
    DeviceKind.PMOS: ("pd", "pg", "ps", "pb"),
    DeviceKind.NPN: ("nc", "nb", "ne"),
    DeviceKind.PNP: ("nc", "nb", "ne"),
}

# the positional value of a two-terminal device / source
VALUE_PARAM = {
    DeviceKind.RESISTOR: "r",
    DeviceKind.CAPACITOR: "c",
    DeviceKind.INDUCTOR: "ind",
    DeviceKind.VSOURCE: "dc",
}

_PREFIX = {
    "R": DeviceKind.RESISTOR,
    "C": DeviceKind.CAPACITOR,
    "L": DeviceKind.INDUCTOR,
    "D": DeviceKind.DIODE,
    "M": DeviceKind.NMOS,  # refined by the model keyword
    "Q": DeviceKind.NPN,
    "V": DeviceKind.VSOURCE,
}
_LETTER = {
    DeviceKind.RESISTOR: "R",
    DeviceKind.CAPACITOR: "C",
    DeviceKind.INDUCTOR: "L",
    DeviceKind.DIODE: "D",
    DeviceKind.NMOS: "M",
    DeviceKind.PMOS: "M",
    DeviceKind.NPN: "Q",
    DeviceKind.PNP: "Q",
    DeviceKind.VSOURCE: "V",
}

SUFFIXES = {"f": -15, "p": -12, "n": -9, "u": -6, "m": -3, "k": 3, "meg": 6, "g": 9}
_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:e[+-]?\d+)?)([a-z]*)$")


def parse_value(token: str) -> float:
    """Convert a SPICE number such as ``10k`` or ``0.18u`` to a float.

    The scaling is done in decimal so that ``0.18u`` is exactly the double
    nearest to 1.8e-7.
    """
    m = _NUMBER.match(token.strip().lower())
    if not m:
        raise UnitError(f"cannot parse value {token!r}")
    number, suffix = m.groups()
    if suffix and suffix not in SUFFIXES:
        raise UnitError(f"unknown unit suffix {suffix!r} in {token!r}")
    try:
        value = Decimal(number).scaleb(SUFFIXES.get(suffix, 0))
    except InvalidOperation as exc:  # pragma: no cover - regex guards this
        raise UnitError(f"cannot parse value {token!r}") from exc
    return float(value)


def format_value(value: float) -> str:
    """Canonical rendering: shortest round-trip digits, scientific exponent.

    ``1e4`` for 10k, ``1.8e-7`` for 0.18u, ``5`` for 5.
    """
    if value == 0:
        return "0"
    d = Decimal(repr(float(value))).normalize()
    sign, digits, exp = d.as_tuple()
    mant = str(digits[0]) + ("." + "".join(map(str, digits[1:])) if len(digits) > 1 else "")
    e10 = exp + len(digits) - 1
    text = mant if e10 == 0 else f"{mant}e{e10}"
    return ("-" if sign else "") + text


@dataclass
class Device:
    id: str
    kind: DeviceKind
    pins: list[tuple[str, str]]  # (pin_role, net_id), in DeviceKind.pin_roles order
    params: dict[str, float] = field(default_factory=dict)
    extra: dict[str, str] = field(default_factory=dict)  # opaque unknown params / model names

    def net_of(self, role: str) -> str:
        for r, n in self.pins:
            if r == role:
                return n
        raise KeyError(role)

    @property
    def nets(self) -> list[str]:
        return [n for _, n in self.pins]


@dataclass
class Net:
    id: str
    connected_pins: list[tuple[str, str]]  # (device_id, pin_role)
    is_ground: bool = False


@dataclass
class Circuit:
    name: str
    devices: list[Device]
    nets: list[Net]
    vsource_ids: list[str]
    has_ground: bool

    @classmethod
    def from_devices(cls, name: str, devices: list[Device]) -> "Circuit":
        """Derive nets and markers from the device pin lists."""
        nets: dict[str, Net] = {}
        for dev in devices:
            for role, net in dev.pins:
                if net not in nets:
                    nets[net] = Net(net, [], is_ground=(net == GROUND_NET))
                nets[net].connected_pins.append((dev.id, role))
        vs = [d.id for d in devices if d.kind is DeviceKind.VSOURCE]
        return cls(name, list(devices), list(nets.values()), vs, GROUND_NET in nets)

    def device(self, device_id: str) -> Device:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    def net(self, net_id: str) -> Net:
        for n in self.nets:
            if n.id == net_id:
                return n
        raise KeyError(net_id)


def parse_netlist(text: str, name: str = "circuit") -> Circuit:
    devices: list[Device] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.replace("\r\n", "\n").split("\n"), start=1):
        line = raw.strip()
        if not line or line.startswith("*"):
            continue
        if line.lower() == ".end":
            break
        if line.startswith("."):
            raise NetlistSyntaxError(f"unsupported directive {line.split()[0]!r}", lineno, 1)
        dev = _parse_device_line(line, raw, lineno)
        if dev.id in seen:
            raise DuplicateIdError(f"duplicate device id {dev.id!r}", lineno, _col(raw, 0))
        seen.add(dev.id)
        devices.append(dev)
    if not devices:
        raise NetlistSyntaxError("no devices", 1, 1)
    return Circuit.from_devices(name, devices)


def _col(raw: str, token_index: int) -> int:
    """1-based column of the token_index-th whitespace-separated token."""
    spans = [m.start() + 1 for m in re.finditer(r"\S+", raw)]
    return spans[min(token_index, len(spans) - 1)] if spans else 1


def _parse_device_line(line: str, raw: str, lineno: int) -> Device:
    tokens = line.split()
    dev_id = tokens[0].upper()
    letter = dev_id[0]
    if letter not in _PREFIX or len(dev_id) < 2:
        raise NetlistSyntaxError(f"unknown device type {tokens[0]!r}", lineno, _col(raw, 0))
    kind = _PREFIX[letter]
    args = tokens[1:]

    def value_at(i: int) -> float:
        try:
            v = parse_value(args[i])
        except UnitError as exc:
            raise UnitError(str(exc).split(": ", 1)[-1], lineno, _col(raw, i + 1)) from None
        if not (v >= 0 and v != float("inf")):
            raise UnitError(f"value must be non-negative and finite: {args[i]!r}", lineno, _col(raw, i + 1))
        return v

    params: dict[str, float] = {}
    extra: dict[str, str] = {}
    if kind in (DeviceKind.RESISTOR, DeviceKind.CAPACITOR, DeviceKind.INDUCTOR, DeviceKind.VSOURCE):
        if len(args) != 3:
            raise ArityError(f"{kind.name} takes 2 nodes and a value, got {len(args)} fields", lineno, _col(raw, 0))
        params[VALUE_PARAM[kind]] = value_at(2)
        nets = args[:2]
    elif kind is DeviceKind.DIODE:
        if len(args) not in (2, 3):
            raise ArityError(f"DIODE takes 2 nodes and an optional model, got {len(args)} fields", lineno, _col(raw, 0))
        nets = args[:2]
        if len(args) == 3:
            extra["model"] = args[2]
    elif letter == "M":
        kw = [i for i, t in enumerate(args) if t.upper() in ("NMOS", "PMOS")]
        if not kw:
            raise NetlistSyntaxError("MOS device needs an NMOS or PMOS model", lineno, _col(raw, len(tokens) - 1))
        k = kw[0]
        if k != 4:
            raise ArityError(f"MOS device takes 4 nodes, got {k}", lineno, _col(raw, k + 1))
        kind = DeviceKind[args[k].upper()]
        nets = args[:4]
        for j, tok in enumerate(args[k + 1:], start=k + 1):
            _keyval(tok, j, params, extra, raw, lineno, numeric={"w", "l"})
    elif letter == "Q":
        if len(args) != 4 or args[3].upper() not in ("NPN", "PNP"):
            if len(args) >= 1 and args[-1].upper() in ("NPN", "PNP"):
                raise ArityError(f"BJT takes 3 nodes, got {len(args) - 1}", lineno, _col(raw, len(args)))
            raise NetlistSyntaxError("BJT needs an NPN or PNP model", lineno, _col(raw, len(tokens) - 1))
        kind = DeviceKind[args[3].upper()]
        nets = args[:3]
    else:  # pragma: no cover
        raise NetlistSyntaxError("unreachable", lineno, 1)

    nets = [n.lower() for n in nets]
    order = _LINE_ORDER.get(kind, kind.pin_roles)
    by_role = dict(zip(order, nets))
    pins = [(role, by_role[role]) for role in kind.pin_roles]
    return Device(dev_id, kind, pins, params, extra)


def _keyval(tok, j, params, extra, raw, lineno, numeric):
    if "=" not in tok:
        raise NetlistSyntaxError(f"expected key=value, got {tok!r}", lineno, _col(raw, j + 1))
    key, val = tok.split("=", 1)
    key = key.lower()
    if not key or not val:
        raise NetlistSyntaxError(f"malformed parameter {tok!r}", lineno, _col(raw, j + 1))
    if key in numeric:
        try:
            v = parse_value(val)
        except UnitError as exc:
            raise UnitError(str(exc).split(": ", 1)[-1], lineno, _col(raw, j + 1)) from None
        if v < 0 or v == float("inf"):
            raise UnitError(f"value must be non-negative and finite: {tok!r}", lineno, _col(raw, j + 1))
        params[key] = v
    else:
        extra[key] = val


def serialize_circuit(c: Circuit) -> str:
    """Render a circuit in canonical form (one device per line, ``.end``)."""
    lines = [f"* {c.name}"]
    for d in c.devices:
        order = _LINE_ORDER.get(d.kind, d.kind.pin_roles)
        nodes = " ".join(d.net_of(r) for r in order)
        if d.kind in VALUE_PARAM:
            lines.append(f"{d.id} {nodes} {format_value(d.params[VALUE_PARAM[d.kind]])}")
        elif d.kind is DeviceKind.DIODE:
            model = d.extra.get("model")
            lines.append(f"{d.id} {nodes}" + (f" {model}" if model else ""))
        elif d.kind in (DeviceKind.NMOS, DeviceKind.PMOS):
            parts = [f"{d.id} {nodes} {d.kind.name}"]
            parts += [f"{k.upper()}={format_value(d.params[k])}" for k in ("w", "l") if k in d.params]
            parts += [f"{k.upper()}={v}" for k, v in d.extra.items()]
            lines.append(" ".join(parts))
        else:
            lines.append(f"{d.id} {nodes} {d.kind.name}")
    lines.append(".end")
    return "\n".join(lines) + "\n"


def device_letter(kind: DeviceKind) -> str:
    return _LETTER[kind]


# -- validation ------------------------------------------------------------

class Severity(enum.Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


@dataclass(frozen=True)
class Issue:
    severity: Severity
    code: str
    message: str
    location: str


@dataclass
class ValidationReport:
    issues: list[Issue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not any(i.severity is Severity.ERROR for i in self.issues)

    @property
    def errors(self) -> list[Issue]:
        return [i for i in self.issues if i.severity is Severity.ERROR]

    def codes(self) -> set[str]:
        return {i.code for i in self.issues}


def validate_circuit(c: Circuit) -> ValidationReport:
    rep = ValidationReport()

    def err(code, msg, loc):
        rep.issues.append(Issue(Severity.ERROR, code, msg, loc))

    net_ids = {n.id for n in c.nets}
    if not any(d.kind is DeviceKind.VSOURCE for d in c.devices):
        err("NO_VSOURCE", "circuit has no voltage source", c.name)
    if GROUND_NET not in net_ids:
        err("NO_GROUND", "circuit has no ground net '0'", c.name)
    for d in c.devices:
        for role, net in d.pins:
            if net not in net_ids:
                err("MISSING_NET", f"pin {role} of {d.id} references unknown net {net!r}", d.id)
        if d.kind is DeviceKind.VSOURCE:
            pos, neg = d.net_of("n+"), d.net_of("n-")
            if neg != GROUND_NET:
                err("VSOURCE_NOT_GROUNDED", f"{d.id} negative terminal must be net 0, got {neg!r}", d.id)
            if pos == GROUND_NET:
                err("VSOURCE_SHORTED", f"{d.id} positive terminal is ground", d.id)
    for n in c.nets:
        if len(n.connected_pins) < 2:
            err("FLOATING_NET", f"net {n.id!r} has {len(n.connected_pins)} connected pin(s)", n.id)
    # cross-reference consistency
    incidence = {(d.id, r, n) for d in c.devices for r, n in d.pins}
    for n in c.nets:
        for dev_id, role in n.connected_pins:
            if (dev_id, role, n.id) not in incidence:
                err("MISSING_NET", f"net {n.id!r} lists pin {dev_id}.{role} that does not reference it", n.id)
    ids = [d.id for d in c.devices]
    if len(set(ids)) != len(ids):
        err("DUPLICATE_ID", "device ids are not unique", c.name)
    pins_on = {n.id: {dev for dev, _ in n.connected_pins} for n in c.nets}
    for d in c.devices:
        if all(pins_on.get(net, set()) <= {d.id} for net in d.nets):
            rep.issues.append(Issue(Severity.WARNING, "UNCONNECTED_DEVICE", f"{d.id} shares no net with another device", d.id))
    return rep


def read_netlist(path) -> Circuit:
    from pathlib import Path

    p = Path(path)
    return parse_netlist(p.read_text(encoding="utf-8"), name=p.stem)
