"""TNTP network / trip-table parsing and k-shortest path enumeration.

Format notes: metadata lines look like ``<KEY> value`` and end with
``<END OF METADATA>``; ``~`` starts a comment line; link rows and OD
pairs are terminated by ``;``.
"""
from __future__ import annotations

import heapq
import io
import math
import re
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .benchmarks import NetworkDesignInstance
from .errors import ConnectivityError, ParseError

_META_RE = re.compile(r"^\s*<([^>]+)>\s*(.*?)\s*$")
_PAIR_RE = re.compile(r"^\s*(\d+)\s*:\s*([-+0-9.eE]+)\s*$")
TOTAL_FLOW_RTOL = 1e-3


@dataclass(frozen=True)
class Link:
    init_node: int
    term_node: int
    capacity: float
    length: float
    free_flow_time: float
    bpr_b: float = 0.15
    bpr_power: float = 4.0
    speed_limit: float = 0.0
    toll: float = 0.0
    link_type: int = 1


@dataclass
class RawNetwork:
    n_nodes: int
    n_links: int
    links: list
    first_thru_node: int = 1
    n_zones: Optional[int] = None
    metadata: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, RawNetwork):
            return NotImplemented
        return (self.n_nodes, self.n_links, self.first_thru_node, self.n_zones, self.links, self.metadata) == (
            other.n_nodes, other.n_links, other.first_thru_node, other.n_zones, other.links, other.metadata)


@dataclass
class TripTable:
    entries: dict
    total_demand: float
    n_zones: Optional[int] = None
    header_total: Optional[float] = None
    metadata: dict = field(default_factory=dict)

    @property
    def header_mismatch(self):
        """Relative difference between the header's TOTAL OD FLOW and the parsed sum."""
        if self.header_total is None:
            return 0.0
        return abs(self.header_total - self.total_demand) / max(abs(self.header_total), 1e-12)


def _text_lines(text):
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8", errors="replace")
    elif hasattr(text, "read"):
        text = text.read()
        if isinstance(text, bytes):
            text = text.decode("utf-8", errors="replace")
    return text.splitlines()


def _split_metadata(lines):
    """Return (metadata dict, index of the first body line)."""
    meta = {}
    for i, raw in enumerate(lines):
        line = raw.strip()
        if not line or line.startswith("~"):
            continue
        m = _META_RE.match(line)
        if m is None:
            # body started without an explicit END marker
            return meta, i
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            return meta, i + 1
        meta[key] = m.group(2)
    return meta, len(lines)


def _meta_int(meta, key, lineno=None, required=False):
    if key not in meta:
        if required:
            raise ParseError(f"missing <{key}>", line=lineno)
        return None
    try:
        return int(float(meta[key]))
    except ValueError:
        raise ParseError(f"<{key}> is not a number: {meta[key]!r}", line=lineno) from None


_KNOWN_NET_KEYS = {"NUMBER OF NODES", "NUMBER OF LINKS", "FIRST THRU NODE", "NUMBER OF ZONES"}


def parse_net(text) -> RawNetwork:
    lines = _text_lines(text)
    meta, start = _split_metadata(lines)
    n_nodes = _meta_int(meta, "NUMBER OF NODES", 1, required=True)
    first_thru = _meta_int(meta, "FIRST THRU NODE") or 1
    n_zones = _meta_int(meta, "NUMBER OF ZONES")
    declared_links = _meta_int(meta, "NUMBER OF LINKS")
    links = []
    for lineno in range(start + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith("~"):
            continue
        body = line.split(";")[0].split()
        if len(body) < 5:
            raise ParseError(f"link row needs at least 5 fields, got {len(body)}", line=lineno)
        try:
            vals = [float(v) for v in body]
        except ValueError:
            raise ParseError(f"non-numeric field in link row: {line!r}", line=lineno) from None
        init, term = int(vals[0]), int(vals[1])
        if not (1 <= init <= n_nodes and 1 <= term <= n_nodes) or vals[0] != init or vals[1] != term:
            raise ParseError(f"node index out of range in link {init}->{term}", line=lineno)
        if vals[2] <= 0:
            raise ParseError(f"capacity must be positive, got {vals[2]}", line=lineno)
        extra = vals[5:] + [None] * 5
        links.append(Link(
            init, term, vals[2], vals[3], vals[4],
            bpr_b=0.15 if extra[0] is None else extra[0],
            bpr_power=4.0 if extra[1] is None else extra[1],
            speed_limit=0.0 if extra[2] is None else extra[2],
            toll=0.0 if extra[3] is None else extra[3],
            link_type=1 if extra[4] is None else int(extra[4]),
        ))
    if not links:
        raise ParseError("network has no links", line=len(lines))
    if declared_links is not None and declared_links != len(links):
        warnings.warn(f"<NUMBER OF LINKS> says {declared_links} but {len(links)} rows were read")
    other = {k: v for k, v in meta.items() if k not in _KNOWN_NET_KEYS}
    return RawNetwork(n_nodes, len(links), links, first_thru, n_zones, other)


def parse_trips(text) -> TripTable:
    lines = _text_lines(text)
    meta, start = _split_metadata(lines)
    entries = {}
    origin = None
    for lineno in range(start + 1, len(lines) + 1):
        line = lines[lineno - 1].strip()
        if not line or line.startswith("~"):
            continue
        if line.lower().startswith("origin"):
            parts = line.split()
            if len(parts) != 2 or not parts[1].isdigit():
                raise ParseError(f"malformed origin line {line!r}", line=lineno)
            origin = int(parts[1])
            continue
        if origin is None:
            raise ParseError("destination pairs before any 'Origin' line", line=lineno)
        for piece in line.split(";"):
            if not piece.strip():
                continue
            m = _PAIR_RE.match(piece)
            if m is None:
                raise ParseError(f"malformed 'dest : flow' pair {piece.strip()!r}", line=lineno)
            dest, flow = int(m.group(1)), float(m.group(2))
            if flow < 0 or not math.isfinite(flow):
                raise ParseError(f"demand must be finite and >= 0, got {flow}", line=lineno)
            if flow > 0:
                entries[(origin, dest)] = entries.get((origin, dest), 0.0) + flow
    total = math.fsum(entries.values())
    header = None
    if "TOTAL OD FLOW" in meta:
        try:
            header = float(meta["TOTAL OD FLOW"])
        except ValueError:
            raise ParseError(f"<TOTAL OD FLOW> is not a number: {meta['TOTAL OD FLOW']!r}", line=1) from None
    table = TripTable(entries, total, _meta_int(meta, "NUMBER OF ZONES"), header,
                      {k: v for k, v in meta.items() if k not in ("TOTAL OD FLOW", "NUMBER OF ZONES")})
    if table.header_mismatch > TOTAL_FLOW_RTOL:
        warnings.warn(f"<TOTAL OD FLOW> {header} differs from parsed total {total} "
                      f"by {table.header_mismatch:.3g} (relative)")
    return table


def _num(v):
    return repr(float(v))


def serialize_net(net: RawNetwork) -> str:
    out = io.StringIO()
    if net.n_zones is not None:
        out.write(f"<NUMBER OF ZONES> {net.n_zones}\n")
    out.write(f"<NUMBER OF NODES> {net.n_nodes}\n")
    out.write(f"<FIRST THRU NODE> {net.first_thru_node}\n")
    out.write(f"<NUMBER OF LINKS> {net.n_links}\n")
    for k, v in net.metadata.items():
        out.write(f"<{k}> {v}\n")
    out.write("<END OF METADATA>\n\n")
    out.write("~\tinit\tterm\tcapacity\tlength\tfft\tb\tpower\tspeed\ttoll\ttype\t;\n")
    for ln in net.links:
        vals = [str(ln.init_node), str(ln.term_node), _num(ln.capacity), _num(ln.length), _num(ln.free_flow_time),
                _num(ln.bpr_b), _num(ln.bpr_power), _num(ln.speed_limit), _num(ln.toll), str(ln.link_type)]
        out.write("\t" + "\t".join(vals) + "\t;\n")
    return out.getvalue()


def serialize_trips(trips: TripTable) -> str:
    out = io.StringIO()
    if trips.n_zones is not None:
        out.write(f"<NUMBER OF ZONES> {trips.n_zones}\n")
    total = trips.header_total if trips.header_total is not None else trips.total_demand
    out.write(f"<TOTAL OD FLOW> {_num(total)}\n")
    for k, v in trips.metadata.items():
        out.write(f"<{k}> {v}\n")
    out.write("<END OF METADATA>\n\n")
    by_origin = {}
    for (o, d), q in sorted(trips.entries.items()):
        by_origin.setdefault(o, []).append((d, q))
    for o, pairs in by_origin.items():
        out.write(f"Origin {o}\n")
        out.write("".join(f"    {d} : {_num(q)};" for d, q in pairs) + "\n\n")
    return out.getvalue()


# ---------------------------------------------------------------- paths

def _adjacency(net: RawNetwork):
    adj = {}
    for idx, ln in enumerate(net.links):
        adj.setdefault(ln.init_node, []).append(idx)
    return adj


def _path_cost(net, arcs):
    return math.fsum(net.links[a].free_flow_time for a in arcs)


def _dijkstra(net, adj, source, target, banned_arcs=frozenset(), banned_nodes=frozenset()):
    """Cheapest simple path by free-flow time; ties go to the lexicographically smaller arc list."""
    heap = [(0.0, (), source)]
    done = set()
    while heap:
        cost, arcs, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == target:
            return arcs
        if node != source and node < net.first_thru_node:
            # zone centroids are not used as through nodes
            continue
        for a in adj.get(node, ()):
            head = net.links[a].term_node
            if a in banned_arcs or head in banned_nodes or head in done:
                continue
            heapq.heappush(heap, (cost + net.links[a].free_flow_time, arcs + (a,), head))
    return None


def _nodes_of(net, source, arcs):
    return [source] + [net.links[a].term_node for a in arcs]


def k_shortest_paths(net: RawNetwork, source, target, k):
    """Yen's algorithm; returns up to k loopless paths as tuples of 0-based arc indices."""
    if k < 1:
        raise ValueError("k must be >= 1")
    adj = _adjacency(net)
    first = _dijkstra(net, adj, source, target)
    if first is None:
        return []
    found = [first]
    candidates = []
    seen = {first}
    while len(found) < k:
        last = found[-1]
        last_nodes = _nodes_of(net, source, last)
        for i in range(len(last)):
            spur = last_nodes[i]
            root = last[:i]
            banned_arcs = {p[i] for p in found if p[:i] == root and len(p) > i}
            banned_nodes = frozenset(last_nodes[:i])
            tail = _dijkstra(net, adj, spur, target, frozenset(banned_arcs), banned_nodes)
            if tail is None:
                continue
            cand = root + tail
            if cand not in seen:
                seen.add(cand)
                heapq.heappush(candidates, (_path_cost(net, cand), cand))
        if not candidates:
            break
        found.append(heapq.heappop(candidates)[1])
    return found


def enumerate_paths(network: RawNetwork, trips: TripTable, k_per_od=5, expandable: Optional[Iterable[int]] = None,
                    b_cost=None, gamma_weight=1.0, per_link_bpr=False, name="tntp") -> NetworkDesignInstance:
    """Build a path-based design instance from parsed TNTP data.

    ``expandable`` lists 0-based arc indices that may receive capacity
    (default: all arcs); ``b_cost`` is a scalar or per-arc sequence
    (default 1).  BPR coefficients are 0.15 and 4 unless
    ``per_link_bpr`` is set.
    """
    if k_per_od < 1:
        raise ValueError("k_per_od must be >= 1")
    n_arcs = network.n_links
    paths, path_od, demand, od_pairs = [], [], [], []
    for (o, d), q in sorted(trips.entries.items()):
        if o == d:
            continue
        for node in (o, d):
            if not 1 <= node <= network.n_nodes:
                raise ConnectivityError(o, d, f"OD pair ({o}, {d}) references a node outside 1..{network.n_nodes}")
        found = k_shortest_paths(network, o, d, k_per_od)
        if not found:
            raise ConnectivityError(o, d)
        w = len(od_pairs)
        od_pairs.append((o, d))
        demand.append(q)
        paths.extend(found)
        path_od.extend([w] * len(found))
    if not od_pairs:
        raise ValueError("trip table has no OD pairs with positive demand")
    exp = np.ones(n_arcs, dtype=bool)
    if expandable is not None:
        exp[:] = False
        exp[list(expandable)] = True
    if b_cost is None:
        b_cost = 1.0
    b_cost = np.broadcast_to(np.asarray(b_cost, dtype=float), (n_arcs,)).copy()
    links = network.links
    return NetworkDesignInstance(
        u0=[ln.free_flow_time for ln in links],
        s=[ln.capacity for ln in links],
        b_cost=b_cost,
        expandable=exp,
        paths=paths,
        path_od=path_od,
        demand=demand,
        od_pairs=od_pairs,
        gamma_weight=gamma_weight,
        bpr_b=[ln.bpr_b for ln in links] if per_link_bpr else None,
        bpr_power=[ln.bpr_power for ln in links] if per_link_bpr else None,
        arc_nodes=[(ln.init_node, ln.term_node) for ln in links],
        name=name,
    )


def load_instance(net_path, trips_path, **kwargs) -> NetworkDesignInstance:
    with open(net_path, "rb") as fh:
        net = parse_net(fh.read())
    with open(trips_path, "rb") as fh:
        trips = parse_trips(fh.read())
    return enumerate_paths(net, trips, **kwargs)
