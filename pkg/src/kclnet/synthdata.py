"""Seeded synthetic circuits for classification, subcircuit detection and edit-count regression.

Every template family builds a *block* hanging between a ``top`` net and a
``bottom`` net. A full circuit is ``V1 top 0`` plus one block down to
ground; detection samples splice a second block between two nets of a host.
All generated devices are reachable from the source without passing through
ground, so compilation never drops a node.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cktgraph import compile_circuit
from .errors import (
    ExhaustedEdits,
    InvalidTemplateParams,
    KclNetError,
    NoSpliceSite,
    TooFewSamples,
)
from .netlist import GROUND_NET, Circuit, Device, DeviceKind, serialize_circuit, validate_circuit

K = DeviceKind
NUM_CLASSES = 12


class _Builder:
    """Accumulates devices with fresh ids and net names under a prefix."""

    def __init__(self, rng: np.random.Generator, dev_prefix: str = "", net_prefix: str = "n"):
        self.rng = rng
        self.devices: list[Device] = []
        self.counts: dict[str, int] = {}
        self.nets = 0
        self.dev_prefix = dev_prefix
        self.net_prefix = net_prefix

    def net(self) -> str:
        self.nets += 1
        return f"{self.net_prefix}{self.nets}"

    def _id(self, letter: str) -> str:
        self.counts[letter] = self.counts.get(letter, 0) + 1
        return f"{letter}{self.dev_prefix}{self.counts[letter]}"

    def _value(self, lo: float, hi: float) -> float:
        return float(f"{math.exp(self.rng.uniform(math.log(lo), math.log(hi))):.3g}")

    def two(self, kind: DeviceKind, a: str, b: str) -> None:
        letter = {K.RESISTOR: "R", K.CAPACITOR: "C", K.INDUCTOR: "L", K.DIODE: "D"}[kind]
        params = {}
        if kind is K.RESISTOR:
            params["r"] = self._value(1e2, 1e5)
        elif kind is K.CAPACITOR:
            params["c"] = self._value(1e-13, 1e-10)
        elif kind is K.INDUCTOR:
            params["ind"] = self._value(1e-9, 1e-6)
        self.devices.append(Device(self._id(letter), kind, [("n+", a), ("n-", b)], params))

    def r(self, a, b):
        self.two(K.RESISTOR, a, b)

    def c(self, a, b):
        self.two(K.CAPACITOR, a, b)

    def mos(self, kind: DeviceKind, d: str, g: str, s: str, b: str) -> None:
        roles = kind.pin_roles
        params = {"w": self._value(2e-7, 1e-5), "l": self._value(1.8e-7, 1e-6)}
        self.devices.append(Device(self._id("M"), kind, list(zip(roles, (d, g, s, b))), params))

    def bjt(self, kind: DeviceKind, c: str, b: str, e: str) -> None:
        self.devices.append(Device(self._id("Q"), kind, [("nb", b), ("nc", c), ("ne", e)], {}))


# -- template families ------------------------------------------------------
# each: (builder, top, bottom, size) -> None

def _divider(b: _Builder, top, bot, n):
    prev = top
    for _ in range(n - 1):
        nxt = b.net()
        b.r(prev, nxt)
        prev = nxt
    b.r(prev, bot)


def _bias(b: _Builder, top, bot) -> str:
    x = b.net()
    b.r(top, x)
    b.r(x, bot)
    return x


def _current_mirror(b: _Builder, top, bot, n):
    ref = b.net()
    b.r(top, ref)
    b.mos(K.NMOS, ref, ref, bot, bot)
    for _ in range(n):
        o = b.net()
        b.r(top, o)
        b.mos(K.NMOS, o, ref, bot, bot)


def _diff_pair(b: _Builder, top, bot, n):
    inp, inn = _bias(b, top, bot), _bias(b, top, bot)
    bias = _bias(b, top, bot)
    for _ in range(n):
        tail, o1, o2 = b.net(), b.net(), b.net()
        b.mos(K.NMOS, tail, bias, bot, bot)
        b.mos(K.NMOS, o1, inp, tail, bot)
        b.mos(K.NMOS, o2, inn, tail, bot)
        b.r(top, o1)
        b.r(top, o2)
        inp, inn = o1, o2


def _inverter(b: _Builder, top, bot, i) -> str:
    o = b.net()
    b.mos(K.PMOS, o, i, top, top)
    b.mos(K.NMOS, o, i, bot, bot)
    return o


def _inverter_stack(b: _Builder, top, bot, n):
    x = _bias(b, top, bot)
    for _ in range(n):
        x = _inverter(b, top, bot, x)
    b.c(x, bot)


def _rc_ladder(b: _Builder, top, bot, n):
    prev = top
    for _ in range(n):
        nxt = b.net()
        b.r(prev, nxt)
        b.c(nxt, bot)
        prev = nxt


def _buffer_chain(b: _Builder, top, bot, n):
    x = _bias(b, top, bot)
    for k in range(n):
        o = b.net()
        b.bjt(K.NPN if k % 2 == 0 else K.PNP, top, x, o)
        b.r(o, bot)
        x = o


def _mux_tree(b: _Builder, top, bot, n):
    sels = [_bias(b, top, bot) for _ in range(n)]
    root = b.net()
    b.r(top, root)
    frontier = [root]
    for s in sels:
        nxt = []
        for node in frontier:
            for _ in range(2):
                child = b.net()
                b.mos(K.NMOS, node, s, child, bot)
                nxt.append(child)
        frontier = nxt
    for leaf in frontier:
        b.r(leaf, bot)


def _reference_stack(b: _Builder, top, bot, n):
    a = b.net()
    b.r(top, a)
    b.c(a, bot)
    prev = a
    for _ in range(n - 1):
        nxt = b.net()
        b.two(K.DIODE, prev, nxt)
        prev = nxt
    b.two(K.DIODE, prev, bot)


def _decoder_fan(b: _Builder, top, bot, n):
    i = _bias(b, top, bot)
    for _ in range(n):
        o = b.net()
        b.r(top, o)
        b.mos(K.NMOS, o, i, bot, bot)


def _pad_buffer(b: _Builder, top, bot, n):
    p, q = b.net(), b.net()
    b.two(K.INDUCTOR, top, p)
    b.two(K.DIODE, p, top)
    b.two(K.DIODE, bot, p)
    b.r(p, q)
    x = q
    for _ in range(n):
        x = _inverter(b, top, bot, x)
    b.c(x, bot)


def _spare_row(b: _Builder, top, bot, n):
    g = top
    for _ in range(n):
        x = b.net()
        b.r(top, x)
        b.c(x, bot)
        b.mos(K.NMOS, x, g, bot, bot)
        g = x


def _sar_array(b: _Builder, top, bot, n):
    t = b.net()
    b.r(top, t)
    ctl = _bias(b, top, bot)
    for _ in range(n):
        k = b.net()
        b.c(t, k)
        b.mos(K.NMOS, k, ctl, bot, bot)
    _inverter(b, top, bot, t)
    b.c(t, bot)


@dataclass(frozen=True)
class CircuitTemplate:
    class_id: int
    name: str
    build: Callable
    size_range: tuple[int, int]  # inclusive stage/device-count parameter range

    def instantiate(self, b: _Builder, top: str, bot: str, size: int) -> None:
        lo, hi = self.size_range
        if not lo <= size <= hi:
            raise InvalidTemplateParams(f"{self.name}: size {size} outside [{lo}, {hi}]")
        self.build(b, top, bot, size)


TEMPLATES = (
    CircuitTemplate(0, "resistor_divider", _divider, (2, 12)),
    CircuitTemplate(1, "current_mirror", _current_mirror, (1, 6)),
    CircuitTemplate(2, "differential_pair", _diff_pair, (1, 4)),
    CircuitTemplate(3, "inverter_stack", _inverter_stack, (1, 6)),
    CircuitTemplate(4, "rc_ladder", _rc_ladder, (2, 8)),
    CircuitTemplate(5, "buffer_chain", _buffer_chain, (1, 6)),
    CircuitTemplate(6, "mux_tree", _mux_tree, (1, 3)),
    CircuitTemplate(7, "reference_stack", _reference_stack, (2, 7)),
    CircuitTemplate(8, "decoder_fan", _decoder_fan, (2, 8)),
    CircuitTemplate(9, "pad_buffer", _pad_buffer, (1, 4)),
    CircuitTemplate(10, "spare_cell_row", _spare_row, (1, 6)),
    CircuitTemplate(11, "sar_array", _sar_array, (2, 7)),
)


def template(class_id: int) -> CircuitTemplate:
    if not 0 <= class_id < NUM_CLASSES:
        raise InvalidTemplateParams(f"class_id {class_id} outside 0..{NUM_CLASSES - 1}")
    return TEMPLATES[class_id]


def _size(t: CircuitTemplate, size: int | None, rng: np.random.Generator) -> int:
    if size is None:
        return int(rng.integers(t.size_range[0], t.size_range[1] + 1))
    return size


def gen_circuit(class_id: int, size: int | None = None, seed: int = 0, name: str | None = None) -> Circuit:
    """One circuit of the given family; size is drawn from the template range when omitted."""
    t = template(class_id)
    rng = np.random.default_rng([class_id, seed])
    b = _Builder(rng)
    b.devices.append(Device("V1", K.VSOURCE, [("n+", "vdd"), ("n-", GROUND_NET)], {"dc": 1.8}))
    t.instantiate(b, "vdd", GROUND_NET, _size(t, size, rng))
    return Circuit.from_devices(name or f"{t.name}_{seed}", b.devices)


# -- detection: splice a labeled block into a host -------------------------

def inject_subcircuit(host: Circuit, block_class: int, seed: int = 0,
                      size: int | None = None) -> tuple[Circuit, dict[str, int]]:
    """Splice a block between two host nets; returns the circuit and 0/1 labels per DAG node."""
    t = template(block_class)
    rng = np.random.default_rng([block_class, seed, 7])
    tops = sorted(n.id for n in host.nets if n.id != GROUND_NET)
    nets = sorted(n.id for n in host.nets)
    if len(nets) < 2 or not tops:
        raise NoSpliceSite(f"{host.name}: needs at least two nets")
    top = tops[int(rng.integers(len(tops)))]
    bot = [n for n in nets if n != top][int(rng.integers(len(nets) - 1))]
    b = _Builder(rng, dev_prefix="X", net_prefix="x")
    t.instantiate(b, top, bot, _size(t, size, rng))
    block_ids = {d.id for d in b.devices}
    block_nets = {n for d in b.devices for n in d.nets} - {top, bot}
    circuit = Circuit.from_devices(f"{host.name}+{t.name}", list(host.devices) + b.devices)
    dag = compile_circuit(circuit)
    positive = block_ids | block_nets
    labels = {}
    for name, kind in zip(dag.names, dag.kinds):
        labels[name] = int(name in positive and kind in ("device", "net"))
    return circuit, labels


# -- edit-count pairs ------------------------------------------------------

SUBSTITUTES = {
    K.RESISTOR: (K.CAPACITOR, K.INDUCTOR, K.DIODE),
    K.CAPACITOR: (K.RESISTOR, K.INDUCTOR, K.DIODE),
    K.INDUCTOR: (K.RESISTOR, K.CAPACITOR, K.DIODE),
    K.DIODE: (K.RESISTOR, K.CAPACITOR, K.INDUCTOR),
    K.NMOS: (K.PMOS,),
    K.PMOS: (K.NMOS,),
    K.NPN: (K.PNP,),
    K.PNP: (K.NPN,),
}
EDIT_OPS = ("insert", "delete", "substitute")


def _fresh_id(devices: list[Device], letter: str) -> str:
    taken = {d.id for d in devices}
    k = 1
    while f"{letter}E{k}" in taken:
        k += 1
    return f"{letter}E{k}"


def _fresh_net(devices: list[Device]) -> str:
    taken = {n for d in devices for n in d.nets}
    k = 1
    while f"e{k}" in taken:
        k += 1
    return f"e{k}"


def _default_params(kind: DeviceKind, rng) -> dict[str, float]:
    b = _Builder(rng)
    if kind.is_two_terminal:
        b.two(kind, "a", "b")
    elif kind in (K.NMOS, K.PMOS):
        b.mos(kind, "a", "b", "c", "d")
    else:
        return {}
    return dict(b.devices[0].params)


def _insert(devices, rng):
    sites = [(i, j) for i, d in enumerate(devices) if d.kind is not K.VSOURCE for j in range(len(d.pins))]
    if not sites:
        return None
    i, j = sites[int(rng.integers(len(sites)))]
    d = devices[i]
    role, net = d.pins[j]
    mid = _fresh_net(devices)
    pins = list(d.pins)
    pins[j] = (role, mid)
    out = list(devices)
    out[i] = Device(d.id, d.kind, pins, dict(d.params), dict(d.extra))
    out.append(Device(_fresh_id(devices, "R"), K.RESISTOR, [("n+", mid), ("n-", net)],
                      _default_params(K.RESISTOR, rng)))
    return out


def _delete(devices, rng):
    vnets = {d.net_of("n+") for d in devices if d.kind is K.VSOURCE}
    cands = [i for i, d in enumerate(devices) if d.kind.is_two_terminal]
    if not cands:
        return None
    i = cands[int(rng.integers(len(cands)))]
    a, b = devices[i].nets
    if a == GROUND_NET:
        a, b = b, a
    if b == GROUND_NET and a in vnets:
        return None  # would short the source
    # merge net a into b
    out = []
    for k, d in enumerate(devices):
        if k == i:
            continue
        pins = [(r, b if n == a else n) for r, n in d.pins]
        out.append(Device(d.id, d.kind, pins, dict(d.params), dict(d.extra)))
    return out


def _substitute(devices, rng):
    cands = [i for i, d in enumerate(devices) if d.kind in SUBSTITUTES]
    if not cands:
        return None
    i = cands[int(rng.integers(len(cands)))]
    d = devices[i]
    options = SUBSTITUTES[d.kind]
    kind = options[int(rng.integers(len(options)))]
    letter = {K.RESISTOR: "R", K.CAPACITOR: "C", K.INDUCTOR: "L", K.DIODE: "D",
              K.NMOS: "M", K.PMOS: "M", K.NPN: "Q", K.PNP: "Q"}[kind]
    new_id = d.id if letter == d.id[0] else _fresh_id(devices, letter)
    pins = [(new_role, n) for new_role, (_, n) in zip(kind.pin_roles, d.pins)]
    out = list(devices)
    out[i] = Device(new_id, kind, pins, _default_params(kind, rng))
    return out


_OPS = {"insert": _insert, "delete": _delete, "substitute": _substitute}


def _usable(c: Circuit) -> bool:
    if not validate_circuit(c).ok:
        return False
    try:
        dag = compile_circuit(c)
    except KclNetError:
        return False
    return not dag.unreachable


def mutate(c: Circuit, n_edits: int, seed: int = 0, max_tries: int = 50) -> tuple[Circuit, int]:
    """Apply n_edits random edits; the label is the edit count (an upper bound on true GED)."""
    if n_edits < 0:
        raise ValueError("n_edits must be non-negative")
    rng = np.random.default_rng([seed, n_edits, 11])
    devices = list(c.devices)
    for _ in range(n_edits):
        for _attempt in range(max_tries):
            op = EDIT_OPS[int(rng.integers(len(EDIT_OPS)))]
            cand = _OPS[op](devices, rng)
            if cand is not None and _usable(Circuit.from_devices(c.name, cand)):
                devices = cand
                break
        else:
            raise ExhaustedEdits(f"{c.name}: no valid edit found after {max_tries} attempts")
    return Circuit.from_devices(f"{c.name}~{n_edits}", devices), n_edits


# -- splits ----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train: float
    val: float
    test: float
    seed: int = 0

    def __post_init__(self):
        if min(self.train, self.val, self.test) < 0 or abs(self.train + self.val + self.test - 1) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")


CLS_SPLIT = SplitSpec(360000 / 428400, 28800 / 428400, 39600 / 428400)
DET_SPLIT = SplitSpec(0.769, 0.077, 0.154)
GED_SPLIT = SplitSpec(0.70, 0.10, 0.20)
TASK_SPLITS = {"cls": CLS_SPLIT, "det": DET_SPLIT, "ged": GED_SPLIT}


def make_splits(strata, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Class-stratified disjoint train/val/test index arrays (sorted)."""
    strata = np.asarray(strata)
    rng = np.random.default_rng(spec.seed)
    parts: tuple[list, list, list] = ([], [], [])
    for cls in np.unique(strata):
        idx = np.flatnonzero(strata == cls)
        if len(idx) < 3:
            raise TooFewSamples(f"class {cls} has {len(idx)} samples, need at least 3")
        idx = idx[rng.permutation(len(idx))]
        n_val = max(1, int(round(spec.val * len(idx)))) if spec.val > 0 else 0
        n_test = max(1, int(round(spec.test * len(idx)))) if spec.test > 0 else 0
        n_train = len(idx) - n_val - n_test
        parts[0].extend(idx[:n_train])
        parts[1].extend(idx[n_train:n_train + n_val])
        parts[2].extend(idx[n_train + n_val:])
    return tuple(np.sort(np.array(p, dtype=np.int64)) for p in parts)


# -- datasets --------------------------------------------------------------

@dataclass
class LabeledSample:
    circuit: Circuit
    task: str
    label: object  # class id | (block class, node labels) | edit count
    pair: Circuit | None = None
    split: str = "train"

    @property
    def stratum(self) -> int:
        if self.task == "det":
            return self.label[0]
        return int(self.label)


@dataclass
class Dataset:
    task: str
    samples: list[LabeledSample] = field(default_factory=list)

    def split(self, name: str) -> list[LabeledSample]:
        return [s for s in self.samples if s.split == name]

    def circuits(self) -> list[Circuit]:
        out = []
        for s in self.samples:
            out.append(s.circuit)
            if s.pair is not None:
                out.append(s.pair)
        return out


MAX_EDITS = 5


def make_dataset(task: str, n: int, seed: int = 0) -> Dataset:
    """n samples of a task, split with the task's ratios.

    cls cycles through the 12 families; det injects block class i mod 12 into
    a host of a seeded random family; ged pairs a circuit with a copy carrying
    i mod (MAX_EDITS + 1) edits.
    """
    rng = np.random.default_rng([seed, 3])
    samples = []
    for i in range(n):
        s = int(rng.integers(1 << 31))
        if task == "cls":
            y = i % NUM_CLASSES
            samples.append(LabeledSample(gen_circuit(y, seed=s, name=f"cls{i:05d}"), task, y))
        elif task == "det":
            cls = i % NUM_CLASSES
            host = gen_circuit(int(rng.integers(NUM_CLASSES)), seed=s, name=f"det{i:05d}")
            circuit, labels = inject_subcircuit(host, cls, seed=s)
            samples.append(LabeledSample(circuit, task, (cls, labels)))
        elif task == "ged":
            base = gen_circuit(int(rng.integers(NUM_CLASSES)), seed=s, name=f"ged{i:05d}")
            mutated, d = mutate(base, i % (MAX_EDITS + 1), seed=s)
            samples.append(LabeledSample(base, task, d, pair=mutated))
        else:
            raise ValueError(f"unknown task {task!r}")
    tr, va, te = make_splits([x.stratum for x in samples], SplitSpec(*_fractions(task), seed=seed))
    for name, idx in (("train", tr), ("val", va), ("test", te)):
        for k in idx:
            samples[k].split = name
    return Dataset(task, samples)


def _fractions(task: str) -> tuple[float, float, float]:
    s = TASK_SPLITS[task]
    return s.train, s.val, s.test


# -- manifest --------------------------------------------------------------

def write_dataset(ds: Dataset, out: str | Path) -> Path:
    """Netlists as .cir files plus manifest.json with paths, labels and splits."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(ds.samples):
        path = f"{ds.task}_{i:05d}.cir"
        (out / path).write_text(serialize_circuit(s.circuit))
        entry = {"path": path, "task": ds.task, "split": s.split, "name": s.circuit.name}
        if ds.task == "cls":
            entry["label"] = int(s.label)
        elif ds.task == "det":
            cls, labels = s.label
            entry["label"] = {"block_class": cls, "positives": sorted(k for k, v in labels.items() if v)}
        else:
            pair = f"{ds.task}_{i:05d}_pair.cir"
            (out / pair).write_text(serialize_circuit(s.pair))
            entry["pair"] = pair
            entry["pair_name"] = s.pair.name
            entry["label"] = int(s.label)
        entries.append(entry)
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps(entries, indent=1))
    return manifest


def read_dataset(manifest: str | Path) -> Dataset:
    from .netlist import parse_netlist

    manifest = Path(manifest)
    root = manifest.parent
    entries = json.loads(manifest.read_text())
    if not entries:
        return Dataset("cls", [])
    task = entries[0]["task"]
    samples = []
    for e in entries:
        c = parse_netlist((root / e["path"]).read_text(), e.get("name", e["path"]))
        if task == "cls":
            samples.append(LabeledSample(c, task, int(e["label"]), split=e["split"]))
        elif task == "det":
            pos = set(e["label"]["positives"])
            dag = compile_circuit(c)
            labels = {n: int(n in pos) for n in dag.names}
            samples.append(LabeledSample(c, task, (int(e["label"]["block_class"]), labels), split=e["split"]))
        else:
            p = parse_netlist((root / e["pair"]).read_text(), e.get("pair_name", e["pair"]))
            samples.append(LabeledSample(c, task, int(e["label"]), pair=p, split=e["split"]))
    return Dataset(task, samples)

