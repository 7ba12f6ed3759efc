"""Independent reference implementations used as test oracles."""

import math
from collections import deque

import numpy as np


def has_cycle_dfs(n, arcs):
    """Three-color DFS over an explicit arc list."""
    succ = [[] for _ in range(n)]
    for u, w in arcs:
        succ[u].append(w)
    color = [0] * n
    for root in range(n):
        if color[root]:
            continue
        stack = [(root, iter(succ[root]))]
        color[root] = 1
        while stack:
            u, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[u] = 2
                stack.pop()
            elif color[nxt] == 1:
                return True
            elif color[nxt] == 0:
                color[nxt] = 1
                stack.append((nxt, iter(succ[nxt])))
    return False


def dag_arcs(dag):
    return [(dag.index[a.src], dag.index[a.dst]) for a in dag.arcs]


def reverse_bfs(dag, start):
    seen = {start}
    q = deque([start])
    while q:
        u = q.popleft()
        for p in dag.preds[u]:
            if p not in seen:
                seen.add(p)
                q.append(p)
    seen.discard(start)
    return seen


def two_colorable(nodes, edges):
    adj = {v: [] for v in nodes}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    color = {}
    for s in nodes:
        if s in color:
            continue
        color[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            for w in adj[u]:
                if w not in color:
                    color[w] = 1 - color[u]
                    q.append(w)
                elif color[w] == color[u]:
                    return False
    return True


def naive_async(dag, depths, x, params):
    """Node-at-a-time forward pass in depth order, written from the update rule."""
    p = {k: v.value for k, v in params.items()}
    sweeps = sum(1 for k in p if k.endswith(".w_msg"))
    h0 = x @ p["w_in"] + p["b_in"]
    order = sorted(range(len(dag)), key=lambda i: depths.depth[i])
    prev = None
    for s in range(sweeps):
        h = np.zeros((len(dag), h0.shape[1]))
        for i in order:
            e = np.zeros(h0.shape[1])
            for u in dag.preds[i]:
                e += h[u] / np.sqrt((len(dag.preds[i]) + 1) * (len(dag.succs[u]) + 1))
            z = e @ p[f"s{s}.w_msg"] + h0[i] @ p[f"s{s}.w_init"] + p[f"s{s}.b"]
            if prev is not None:
                z = z + prev[i] @ p[f"s{s}.w_prev"]
            h[i] = np.maximum(z, 0.0)
        prev = h
    return prev


def loop_kcl_loss(currents, negatives, tau, literal=False):
    """Per-pair InfoNCE written out with math.exp over python lists."""
    def cos(a, b):
        na, nb = math.sqrt(sum(x * x for x in a)), math.sqrt(sum(x * x for x in b))
        if na < 1e-12 or nb < 1e-12:
            return 0.0
        return sum(x * y for x, y in zip(a, b)) / (na * nb)

    terms = []
    for i, a in enumerate(currents):
        neg = sum(math.exp(cos(a, n) / tau) for n in negatives)
        for j, b in enumerate(currents):
            if i == j:
                continue
            p = math.exp(cos(a, b) / tau)
            if literal:
                if negatives:
                    terms.append(-math.log(p / neg))
            else:
                terms.append(-math.log(p / (p + neg)))
    return sum(terms) / len(terms) if terms else 0.0
