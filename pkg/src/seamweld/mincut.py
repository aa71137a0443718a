"""
Exact minimization of the binary seam energy by s/t min-cut.

Two exact solvers share one residual network. ``"bk"`` is the
Boykov-Kolmogorov augmenting-path algorithm (two search trees reused between
augmentations, with orphan adoption). ``"push-relabel"`` is FIFO
push-relabel with periodic global relabeling, run on the reversed network so
that its natural cut is the one nearest the source. Both return the same
labeling: the set of nodes residual-reachable from the source is identical
for every maximum flow. Push-relabel is the default because BK degrades badly
on noisy overlaps whose flow spreads over the whole grid. Costs are scaled by
2**20 and rounded so that all flow arithmetic is exact int64.

Source side = label 0 (I0), sink side = label 1 (I1). The t-link s->p carries
D_p(1) and p->t carries D_p(0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .energy import CAPACITY_SCALE, EnergyModel, evaluate_energy
from .errors import InstanceTooLargeError, PenaltyTooSmallError

FREE = -1
TERMINAL = -2
ORPHAN = -3
_INF_D = 1 << 60

BRUTE_FORCE_LIMIT = 20
ALGORITHMS = ("push-relabel", "bk")
DEFAULT_ALGORITHM = "push-relabel"


@dataclass(frozen=True, eq=False)
class FlowGraph:
    """CSR residual network; arcs of every node listed up, down, left, right."""

    model: EnergyModel
    quantized: EnergyModel
    first: np.ndarray
    head: np.ndarray
    sister: np.ndarray
    cap: np.ndarray
    cap_source: np.ndarray
    cap_sink: np.ndarray
    scale: int

    @property
    def n_nodes(self) -> int:
        return int(self.cap_source.size)


@dataclass(frozen=True, eq=False)
class CutResult:
    labels: np.ndarray
    flow_value: float
    energy: float


def _arc_order_keys(model: EnergyModel, tails: np.ndarray, heads: np.ndarray) -> np.ndarray:
    region = model.region
    if region is None:
        return heads
    dr = region.rows[heads] - region.rows[tails]
    dc = region.cols[heads] - region.cols[tails]
    # up, down, left, right
    return np.select([dr < 0, dr > 0, dc < 0], [0, 1, 2], default=3)


def build_graph(model: EnergyModel, scale: int = CAPACITY_SCALE) -> FlowGraph:
    if model.is_quantized:
        scale = 1
    qm = model.quantized(scale)
    n = qm.size
    if qm.mu <= int(qm.smooth.sum()):
        raise PenaltyTooSmallError("integer penalty does not exceed the total integer cut cost")
    p = qm.edges[:, 0]
    q = qm.edges[:, 1]
    m = p.size
    # arc 2e: p->q, arc 2e+1: q->p
    tails = np.empty(2 * m, dtype=np.int64)
    heads = np.empty(2 * m, dtype=np.int64)
    tails[0::2], tails[1::2] = p, q
    heads[0::2], heads[1::2] = q, p
    caps = np.repeat(qm.smooth, 2)
    sister = np.arange(2 * m, dtype=np.int64) ^ 1

    order = np.lexsort((_arc_order_keys(model, tails, heads), tails))
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    first = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(tails, minlength=n), out=first[1:])
    return FlowGraph(
        model=model,
        quantized=qm,
        first=first,
        head=np.ascontiguousarray(heads[order]),
        sister=np.ascontiguousarray(inv[sister[order]]),
        cap=np.ascontiguousarray(caps[order]),
        cap_source=np.ascontiguousarray(qm.d1, dtype=np.int64),
        cap_sink=np.ascontiguousarray(qm.d0, dtype=np.int64),
        scale=scale,
    )


@numba.njit(cache=True, nogil=True)
def _bk_maxflow(first, head, sister, rcap, tr):
    """Boykov-Kolmogorov max-flow on a residual network; mutates rcap and tr.

    tr[i] > 0 is residual source->i capacity, tr[i] < 0 residual i->sink.
    Returns the flow pushed through paths (on top of the trivially cancelled
    terminal flow).
    """
    n = tr.size
    parent = np.full(n, FREE, dtype=np.int64)
    is_sink = np.zeros(n, dtype=np.uint8)
    ts = np.zeros(n, dtype=np.int64)
    dist = np.zeros(n, dtype=np.int64)
    active = np.zeros(n, dtype=np.uint8)
    queue = np.empty(n + 1, dtype=np.int64)
    q_head = 0
    q_tail = 0
    orphans = np.empty(n + 1, dtype=np.int64)
    o_head = 0
    o_tail = 0
    cap_q = n + 1

    for i in range(n):
        if tr[i] != 0:
            is_sink[i] = 1 if tr[i] < 0 else 0
            parent[i] = TERMINAL
            ts[i] = 0
            dist[i] = 1
            active[i] = 1
            queue[q_tail] = i
            q_tail = (q_tail + 1) % cap_q

    flow = 0
    time = 0
    current = -1
    while True:
        i = current
        if i != -1 and parent[i] == FREE:
            active[i] = 0
            i = -1
        if i == -1:
            while q_head != q_tail:
                k = queue[q_head]
                q_head = (q_head + 1) % cap_q
                active[k] = 0
                if parent[k] != FREE:
                    i = k
                    active[k] = 1
                    break
            if i == -1:
                break

        # grow
        found = -1
        u = -1
        v = -1
        if is_sink[i] == 0:
            for a in range(first[i], first[i + 1]):
                if rcap[a] > 0:
                    j = head[a]
                    if parent[j] == FREE:
                        is_sink[j] = 0
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if active[j] == 0:
                            active[j] = 1
                            queue[q_tail] = j
                            q_tail = (q_tail + 1) % cap_q
                    elif is_sink[j] == 1:
                        found = a
                        u = i
                        v = j
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
        else:
            for a in range(first[i], first[i + 1]):
                if rcap[sister[a]] > 0:
                    j = head[a]
                    if parent[j] == FREE:
                        is_sink[j] = 1
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1
                        if active[j] == 0:
                            active[j] = 1
                            queue[q_tail] = j
                            q_tail = (q_tail + 1) % cap_q
                    elif is_sink[j] == 0:
                        found = sister[a]
                        u = j
                        v = i
                        break
                    elif ts[j] <= ts[i] and dist[j] > dist[i]:
                        parent[j] = sister[a]
                        ts[j] = ts[i]
                        dist[j] = dist[i] + 1

        time += 1
        if found == -1:
            active[i] = 0
            current = -1
            continue
        current = i

        # augment along source root .. u -> v .. sink root
        bott = rcap[found]
        x = u
        while parent[x] != TERMINAL:
            b = parent[x]
            if rcap[sister[b]] < bott:
                bott = rcap[sister[b]]
            x = head[b]
        if tr[x] < bott:
            bott = tr[x]
        x = v
        while parent[x] != TERMINAL:
            b = parent[x]
            if rcap[b] < bott:
                bott = rcap[b]
            x = head[b]
        if -tr[x] < bott:
            bott = -tr[x]

        rcap[sister[found]] += bott
        rcap[found] -= bott
        x = u
        while True:
            b = parent[x]
            if b == TERMINAL:
                tr[x] -= bott
                if tr[x] == 0:
                    parent[x] = ORPHAN
                    o_head = o_head - 1 if o_head > 0 else cap_q - 1
                    orphans[o_head] = x
                break
            rcap[b] += bott
            rcap[sister[b]] -= bott
            nxt = head[b]
            if rcap[sister[b]] == 0:
                parent[x] = ORPHAN
                o_head = o_head - 1 if o_head > 0 else cap_q - 1
                orphans[o_head] = x
            x = nxt
        x = v
        while True:
            b = parent[x]
            if b == TERMINAL:
                tr[x] += bott
                if tr[x] == 0:
                    parent[x] = ORPHAN
                    o_head = o_head - 1 if o_head > 0 else cap_q - 1
                    orphans[o_head] = x
                break
            rcap[b] -= bott
            rcap[sister[b]] += bott
            nxt = head[b]
            if rcap[b] == 0:
                parent[x] = ORPHAN
                o_head = o_head - 1 if o_head > 0 else cap_q - 1
                orphans[o_head] = x
            x = nxt
        flow += bott

        # adopt orphans; those cut loose by the augmentation were pushed to the
        # front (root side first), freed subtrees go to the rear
        while o_head != o_tail:
            i2 = orphans[o_head]
            o_head = (o_head + 1) % cap_q
            side = is_sink[i2]
            d_min = _INF_D
            a_min = -1
            for a0 in range(first[i2], first[i2 + 1]):
                ok = rcap[sister[a0]] > 0 if side == 0 else rcap[a0] > 0
                if not ok:
                    continue
                j = head[a0]
                if is_sink[j] != side or parent[j] == FREE:
                    continue
                d = 0
                k = j
                while True:
                    if ts[k] == time:
                        d += dist[k]
                        break
                    b = parent[k]
                    d += 1
                    if b == TERMINAL:
                        ts[k] = time
                        dist[k] = 1
                        break
                    if b == ORPHAN:
                        d = _INF_D
                        break
                    k = head[b]
                if d < _INF_D:
                    if d < d_min:
                        a_min = a0
                        d_min = d
                    k = j
                    while ts[k] != time:
                        ts[k] = time
                        dist[k] = d
                        d -= 1
                        k = head[parent[k]]
            if a_min != -1:
                parent[i2] = a_min
                ts[i2] = time
                dist[i2] = d_min + 1
                continue
            for a0 in range(first[i2], first[i2 + 1]):
                j = head[a0]
                if is_sink[j] != side or parent[j] == FREE:
                    continue
                b = parent[j]
                ok = rcap[sister[a0]] > 0 if side == 0 else rcap[a0] > 0
                if ok and active[j] == 0:
                    active[j] = 1
                    queue[q_tail] = j
                    q_tail = (q_tail + 1) % cap_q
                if b != TERMINAL and b != ORPHAN and head[b] == i2:
                    parent[j] = ORPHAN
                    orphans[o_tail] = j
                    o_tail = (o_tail + 1) % cap_q
            parent[i2] = FREE
    return flow


@numba.njit(cache=True, nogil=True)
def _source_reachable(first, head, rcap, tr):
    n = tr.size
    seen = np.zeros(n, dtype=np.uint8)
    stack = np.empty(n, dtype=np.int64)
    top = 0
    for i in range(n):
        if tr[i] > 0:
            seen[i] = 1
            stack[top] = i
            top += 1
    while top > 0:
        top -= 1
        i = stack[top]
        for a in range(first[i], first[i + 1]):
            if rcap[a] > 0:
                j = head[a]
                if seen[j] == 0:
                    seen[j] = 1
                    stack[top] = j
                    top += 1
    return seen


@numba.njit(cache=True, nogil=True)
def _sink_distances(first, head, sister, rcap, rt, d):
    """Exact BFS distances to the sink in the residual graph; n + 1 where unreachable."""
    n = d.size
    top = n + 1
    d[:] = top
    queue = np.empty(n, dtype=np.int64)
    qh = 0
    qt = 0
    for i in range(n):
        if rt[i] > 0:
            d[i] = 1
            queue[qt] = i
            qt += 1
    while qh < qt:
        w = queue[qh]
        qh += 1
        for a in range(first[w], first[w + 1]):
            u = head[a]
            if d[u] == top and rcap[sister[a]] > 0:
                d[u] = d[w] + 1
                queue[qt] = u
                qt += 1


@numba.njit(cache=True, nogil=True)
def _pr_maxflow(first, head, sister, rcap, excess, rt, d):
    """Maximum preflow by FIFO push-relabel.

    ``excess`` starts as the saturated source links and ``rt`` holds the
    residual sink links; both are updated in place. On return ``d`` holds
    exact sink distances, so ``d <= n`` marks the minimal sink side.
    """
    n = excess.size
    top = n + 1
    cur = first[:-1].copy()
    flow = 0
    for i in range(n):
        delta = min(excess[i], rt[i])
        excess[i] -= delta
        rt[i] -= delta
        flow += delta
    _sink_distances(first, head, sister, rcap, rt, d)
    cap_q = n + 1
    queue = np.empty(cap_q, dtype=np.int64)
    queued = np.zeros(n, dtype=np.uint8)
    qh = 0
    qt = 0
    for i in range(n):
        if excess[i] > 0 and d[i] < top:
            queued[i] = 1
            queue[qt] = i
            qt += 1
    budget = 6 * n + head.size // 2
    work = 0
    while qh != qt:
        v = queue[qh]
        qh = (qh + 1) % cap_q
        queued[v] = 0
        while excess[v] > 0 and d[v] < top and work <= budget:
            if rt[v] > 0 and d[v] == 1:
                delta = min(excess[v], rt[v])
                excess[v] -= delta
                rt[v] -= delta
                flow += delta
                continue
            a = cur[v]
            end = first[v + 1]
            while a < end:
                if rcap[a] > 0:
                    w = head[a]
                    if d[v] == d[w] + 1:
                        delta = min(excess[v], rcap[a])
                        rcap[a] -= delta
                        rcap[sister[a]] += delta
                        excess[v] -= delta
                        excess[w] += delta
                        if queued[w] == 0 and d[w] < top:
                            queued[w] = 1
                            queue[qt] = w
                            qt = (qt + 1) % cap_q
                        if excess[v] == 0:
                            break
                a += 1
            cur[v] = a
            if excess[v] == 0:
                break
            # relabel
            dmin = top
            for b in range(first[v], end):
                if rcap[b] > 0 and d[head[b]] < dmin:
                    dmin = d[head[b]]
            d[v] = min(dmin + 1, top)
            cur[v] = first[v]
            work += 12 + end - first[v]
        if work > budget:
            work = 0
            _sink_distances(first, head, sister, rcap, rt, d)
            cur[:] = first[:-1]
            queued[:] = 0
            qh = 0
            qt = 0
            for i in range(n):
                if excess[i] > 0 and d[i] < top:
                    queued[i] = 1
                    queue[qt] = i
                    qt += 1
    _sink_distances(first, head, sister, rcap, rt, d)
    return flow


def _solve_bk(graph: FlowGraph):
    rcap = graph.cap.copy()
    tr = graph.cap_source - graph.cap_sink
    base = int(np.minimum(graph.cap_source, graph.cap_sink).sum())
    flow = base + int(_bk_maxflow(graph.first, graph.head, graph.sister, rcap, tr))
    return flow, 1 - _source_reachable(graph.first, graph.head, rcap, tr).astype(np.int8)


def _solve_push_relabel(graph: FlowGraph):
    # Neighbor capacities are symmetric, so reversing the network only swaps
    # the terminal links. The minimal sink side of the reversed network is
    # the minimal source side of the original one.
    base = np.minimum(graph.cap_source, graph.cap_sink)
    excess = graph.cap_sink - base
    rt = graph.cap_source - base
    d = np.empty(graph.n_nodes, dtype=np.int64)
    flow = int(base.sum()) + int(_pr_maxflow(graph.first, graph.head, graph.sister, graph.cap.copy(), excess, rt, d))
    return flow, (d > graph.n_nodes).astype(np.int8)


def max_flow(graph: FlowGraph, algorithm: str = DEFAULT_ALGORITHM) -> CutResult:
    """Max-flow / min-cut; nodes residual-reachable from the source get label 0."""
    if algorithm == "bk":
        flow_units, labels = _solve_bk(graph)
    elif algorithm == "push-relabel":
        flow_units, labels = _solve_push_relabel(graph)
    else:
        raise ValueError(f"unknown max-flow algorithm {algorithm!r}")

    q_energy = evaluate_energy(graph.quantized, labels)
    if q_energy != flow_units:
        raise AssertionError(f"min-cut value {flow_units} differs from cut energy {q_energy}")
    energy = evaluate_energy(graph.model, labels)
    flow_value = flow_units / graph.scale
    drift = (graph.n_nodes + len(graph.model.edges) + 1) / graph.scale
    if abs(flow_value - energy) > drift * max(1.0, 1e-12 * abs(energy)):
        raise AssertionError(f"quantized flow {flow_value} drifted from energy {energy}")
    return CutResult(labels, flow_value, energy)


def minimize(model: EnergyModel, algorithm: str = DEFAULT_ALGORITHM) -> CutResult:
    return max_flow(build_graph(model), algorithm)


def brute_force_min(model: EnergyModel, limit: int = BRUTE_FORCE_LIMIT) -> CutResult:
    """Exhaustive minimum over all 2**n labelings.

    Codes are enumerated in increasing order with pixel 0 as the most
    significant bit, so ties go to the smallest code.
    """
    n = model.size
    if n > limit:
        raise InstanceTooLargeError(f"{n} pixels exceeds the brute-force limit of {limit}")
    e0, e1 = model.edges[:, 0], model.edges[:, 1]
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    best_code, best_energy = 0, None
    chunk = 1 << 15
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.int64)
        bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(bool)
        energies = np.where(bits, model.d1, model.d0).sum(axis=1)
        if len(e0):
            energies = energies + (bits[:, e0] != bits[:, e1]) @ model.smooth
        k = int(np.argmin(energies))
        if best_energy is None or energies[k] < best_energy:
            best_code, best_energy = start + k, energies[k]
    labels = ((best_code >> shifts) & 1).astype(np.int8)
    energy = evaluate_energy(model, labels)
    return CutResult(labels, energy, energy)
