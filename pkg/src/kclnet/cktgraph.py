"""Bipartite device/net graphs, source-to-ground DAG conversion and depth layers.

Node naming in the DAG: device nodes keep their (upper-case) device id, net
nodes keep their (lower-case) net name, and the virtual ground node is
``GND``. Device ids always start with one of ``RCLDMQV`` so neither can
collide with the other.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .errors import CycleDetected, Disconnected, InvalidCircuit, NoSource, UnknownNode
from .netlist import GROUND_NET, Circuit, DeviceKind, validate_circuit

GROUND_NODE = "GND"

# node kinds
DEVICE, NET, VSOURCE, GROUND = "device", "net", "vsource", "ground"


@dataclass(frozen=True)
class CircuitGraph:
    device_nodes: tuple[str, ...]
    net_nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, str], ...]  # (device_id, net_id, pin_role)
    circuit: Circuit

    def is_bipartite(self) -> bool:
        devs, nets = set(self.device_nodes), set(self.net_nodes)
        return all(d in devs and n in nets for d, n, _ in self.edges)


def build_bipartite(c: Circuit) -> CircuitGraph:
    report = validate_circuit(c)
    if not report.ok:
        raise InvalidCircuit(report)
    edges = tuple((d.id, net, role) for d in c.devices for role, net in d.pins)
    return CircuitGraph(
        tuple(d.id for d in c.devices), tuple(n.id for n in c.nets), edges, c
    )


@dataclass(frozen=True)
class Arc:
    src: str
    dst: str
    pin_role: str
    multiplicity: int = 1


@dataclass
class CircuitDag:
    names: list[str]
    kinds: list[str]  # DEVICE / NET / VSOURCE / GROUND
    labels: list[str]  # device kind name, or "net"/"ground"
    params: list[dict[str, float]]
    arcs: list[Arc]
    unreachable: list[str] = field(default_factory=list)
    name: str = "circuit"

    def __post_init__(self):
        self.index = {n: i for i, n in enumerate(self.names)}
        self.preds: list[list[int]] = [[] for _ in self.names]
        self.succs: list[list[int]] = [[] for _ in self.names]
        for a in self.arcs:
            s, d = self.index[a.src], self.index[a.dst]
            self.succs[s].append(d)
            self.preds[d].append(s)

    def __len__(self) -> int:
        return len(self.names)

    def node(self, name: str) -> int:
        try:
            return self.index[name]
        except KeyError:
            raise UnknownNode(name) from None

    @property
    def voltage_nodes(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == VSOURCE]

    @property
    def ground_node(self) -> int:
        return self.kinds.index(GROUND)

    def with_arcs(self, arcs: list[Arc]) -> "CircuitDag":
        return CircuitDag(list(self.names), list(self.kinds), list(self.labels),
                          list(self.params), list(arcs), list(self.unreachable), self.name)


def _h_layers(sources: list[str], adj: dict[str, list[str]]) -> dict[str, int]:
    """Multi-source BFS layering of the undirected graph H.

    The ground net is a terminal: it receives a layer but is not expanded,
    so nodes that reach a source only through ground count as unreachable.
    """
    layer = {s: 0 for s in sources}
    queue = deque(sources)
    while queue:
        u = queue.popleft()
        if u == GROUND_NET:
            continue
        for w in adj[u]:
            if w not in layer:
                layer[w] = layer[u] + 1
                queue.append(w)
    return layer


def to_dag(g: CircuitGraph) -> CircuitDag:
    c = g.circuit
    kind_of = {d.id: d.kind for d in c.devices}
    sources = [d for d in g.device_nodes if kind_of[d] is DeviceKind.VSOURCE]
    if not sources:
        raise NoSource("circuit has no voltage source")

    # collapse parallel pins (same device, same net) into one incidence
    incid: dict[tuple[str, str], list[str]] = {}
    for dev, net, role in g.edges:
        if kind_of[dev] is DeviceKind.VSOURCE and net == GROUND_NET:
            continue  # the source's return terminal is replaced by GND
        incid.setdefault((dev, net), []).append(role)

    adj: dict[str, list[str]] = {n: [] for n in (*g.device_nodes, *g.net_nodes)}
    for dev, net in incid:
        adj[dev].append(net)
        adj[net].append(dev)
    for v in adj.values():
        v.sort()

    layer = _h_layers(sorted(sources), adj)
    if GROUND_NET not in layer:
        raise Disconnected([GROUND_NET])

    def key(n):
        return (layer[n], n)

    arcs: list[Arc] = []
    for (dev, net), roles in incid.items():
        if dev not in layer or net not in layer:
            continue
        role, mult = "|".join(roles), len(roles)
        if net == GROUND_NET or kind_of[dev] is DeviceKind.VSOURCE:
            src, dst = (dev, net)
        else:
            # layers of adjacent H nodes differ by one; the name breaks any tie
            src, dst = (dev, net) if key(dev) < key(net) else (net, dev)
        arcs.append(Arc(src, dst, role, mult))
    arcs.append(Arc(GROUND_NET, GROUND_NODE, "gnd", 1))

    names, kinds, labels, params = [], [], [], []
    devmap = {d.id: d for d in c.devices}
    for dev in g.device_nodes:
        if dev in layer:
            d = devmap[dev]
            names.append(dev)
            kinds.append(VSOURCE if d.kind is DeviceKind.VSOURCE else DEVICE)
            labels.append(d.kind.name)
            params.append(dict(d.params))
    for net in g.net_nodes:
        if net in layer:
            names.append(net)
            kinds.append(NET)
            labels.append("net")
            params.append({})
    names.append(GROUND_NODE)
    kinds.append(GROUND)
    labels.append(DeviceKind.GROUND.name)
    params.append({})
    unreachable = [n for n in (*g.device_nodes, *g.net_nodes) if n not in layer]

    dag = CircuitDag(names, kinds, labels, params, arcs, unreachable, c.name)
    if topological_order(dag) is None:  # pragma: no cover - excluded by the layer order
        raise CycleDetected("orientation produced a directed cycle")
    return dag


def compile_circuit(c: Circuit) -> CircuitDag:
    return to_dag(build_bipartite(c))


def topological_order(dag: CircuitDag) -> list[int] | None:
    """Kahn's algorithm; None when the arcs contain a cycle."""
    indeg = [len(p) for p in dag.preds]
    queue = deque(i for i, d in enumerate(indeg) if d == 0)
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for w in dag.succs[u]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return order if len(order) == len(dag) else None


@dataclass
class DepthAssignment:
    depth: list[int]
    layers: list[list[int]]
    max_depth: int

    def of(self, dag: CircuitDag, name: str) -> int:
        return self.depth[dag.node(name)]


def assign_depths(dag: CircuitDag) -> DepthAssignment:
    """Longest-path depth from the sources; ground is the unique deepest node."""
    order = topological_order(dag)
    if order is None:
        raise CycleDetected("cannot assign depths to a cyclic graph")
    depth = [0] * len(dag)
    for u in order:
        for w in dag.succs[u]:
            depth[w] = max(depth[w], depth[u] + 1)
    gnd = dag.ground_node
    others = [d for i, d in enumerate(depth) if i != gnd]
    depth[gnd] = max(depth[gnd], max(others, default=-1) + 1)
    d = depth[gnd]
    layers: list[list[int]] = [[] for _ in range(d + 1)]
    for i, k in enumerate(depth):
        layers[k].append(i)
    return DepthAssignment(depth, layers, d)


def rank_check(dag: CircuitDag, da: DepthAssignment) -> bool:
    for a in dag.arcs:
        if not da.depth[dag.index[a.src]] < da.depth[dag.index[a.dst]]:
            return False
    if any(dag.preds[v] for v in dag.voltage_nodes):
        return False
    return not dag.succs[dag.ground_node]


def ancestors(dag: CircuitDag, n: str) -> set[str]:
    start = dag.node(n)
    seen: set[int] = set()
    stack = list(dag.preds[start])
    while stack:
        u = stack.pop()
        if u in seen:
            continue
        seen.add(u)
        stack.extend(dag.preds[u])
    seen.discard(start)
    return {dag.names[i] for i in seen}


# -- JSON interchange ------------------------------------------------------

def dag_to_json(dag: CircuitDag, da: DepthAssignment | None = None) -> str:
    da = da or assign_depths(dag)
    doc = {
        "name": dag.name,
        "nodes": [
            {"id": n, "kind": k, "depth": da.depth[i], "label": lab, "params": dag.params[i]}
            for i, (n, k, lab) in enumerate(zip(dag.names, dag.kinds, dag.labels))
        ],
        "arcs": [
            {"src": a.src, "dst": a.dst, "pin_role": a.pin_role, "multiplicity": a.multiplicity}
            for a in dag.arcs
        ],
        "max_depth": da.max_depth,
        "unreachable": dag.unreachable,
    }
    return json.dumps(doc, indent=1)


def dag_from_json(text: str) -> CircuitDag:
    doc = json.loads(text)
    nodes = doc["nodes"]
    return CircuitDag(
        [n["id"] for n in nodes],
        [n["kind"] for n in nodes],
        [n["label"] for n in nodes],
        [dict(n.get("params", {})) for n in nodes],
        [Arc(a["src"], a["dst"], a["pin_role"], a["multiplicity"]) for a in doc["arcs"]],
        list(doc.get("unreachable", [])),
        doc.get("name", "circuit"),
    )
