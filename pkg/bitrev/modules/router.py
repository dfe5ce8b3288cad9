"""Negotiated-congestion router over the public wire graph.

Every net driven by a slice output pin and loading slice input pins gets a
tree of PIPs. Sink wires are the routing resources: each may carry one net.
Nets are first routed independently, then repeatedly ripped up and rerouted
with rising present-congestion and accumulated history costs until no sink
wire is shared.
"""

from __future__ import annotations

import heapq
import logging
from collections import defaultdict
from itertools import count

from bitrev.exceptions import FabricError, RoutingError
from bitrev.modules.fabric import Fabric
from bitrev.modules.netlist import Net, Netlist, SiteKind

logger = logging.getLogger("bitrev.route")

Node = tuple[tuple[int, int], str]

MAX_ITERATIONS = 50
PRESENT_FACTOR_START = 0.5
PRESENT_FACTOR_GROWTH = 1.6
HISTORY_INCREMENT = 1.0


class RoutingGraph:
    """Adjacency over (coordinate, wire) nodes. Default PIPs are left out."""

    def __init__(self, fabric: Fabric):
        self.fabric = fabric
        self.pin_sinks = {f"S{p}" for p in range(len(fabric.input_pins))}
        self.edges: dict[Node, list[tuple[Node, tuple[str, str, str] | None]]] = defaultdict(list)
        for coord in fabric.coordinates():
            sm_type = fabric.sm_type_at(coord)
            tile = fabric.tile_name(coord)
            for pip in sm_type.pips:
                if pip.is_default:
                    continue
                self.edges[(coord, pip.source_wire)].append(
                    ((coord, pip.sink_wire), (tile, pip.source_wire, pip.sink_wire))
                )
            for sink in sm_type.sinks:
                target = fabric.wire_target(coord, sink)
                if target is not None:
                    self.edges[(coord, sink)].append((target, None))

    def is_pin_sink(self, node: Node) -> bool:
        return node[1] in self.pin_sinks


class _NetJob:
    def __init__(self, net: Net, source: Node, targets: list[Node]):
        self.net = net
        self.source = source
        self.targets = targets
        self.nodes: set[Node] = set()
        self.pips: list[tuple[str, str, str]] = []


def _pin_node(fabric: Fabric, netlist_instances, inst_name: str, pin: str, output: bool) -> Node | None:
    inst = netlist_instances[inst_name]
    if inst.site_kind is not SiteKind.SLICE or inst.placement is None:
        return None
    coord, s = fabric.parse_site(inst.placement.tile, inst.placement.site)
    wire = fabric.source_wire_of_pin(s, pin) if output else fabric.sink_wire_of_pin(s, pin)
    if wire is None:
        raise RoutingError(f"{inst_name} has no {'output' if output else 'input'} pin {pin}")
    return coord, wire


def _route_net(graph: RoutingGraph, job: _NetJob, occupancy, history, present_factor: float) -> None:
    """Route one net as a Steiner tree, one target at a time (nearest first by Dijkstra)."""
    tree: set[Node] = {job.source}
    pips: list[tuple[str, str, str]] = []
    pending = set(job.targets)
    tie = count()
    while pending:
        dist = {n: 0.0 for n in tree}
        prev: dict[Node, tuple[Node, tuple | None]] = {}
        heap = [(0.0, next(tie), n) for n in tree]
        heapq.heapify(heap)
        reached = None
        while heap:
            cost, _, node = heapq.heappop(heap)
            if cost > dist.get(node, float("inf")):
                continue
            if node in pending:
                reached = node
                break
            if graph.is_pin_sink(node):
                continue
            for nxt, pip in graph.edges.get(node, ()):
                if nxt in tree:
                    continue
                if graph.is_pin_sink(nxt) and nxt not in pending:
                    continue
                step = 0.0
                if pip is not None:
                    step = (1.0 + history[nxt]) * (1.0 + present_factor * occupancy[nxt])
                new_cost = cost + step
                if new_cost < dist.get(nxt, float("inf")):
                    dist[nxt] = new_cost
                    prev[nxt] = (node, pip)
                    heapq.heappush(heap, (new_cost, next(tie), nxt))
        if reached is None:
            raise RoutingError(f"net {job.net.name}: no path to {sorted(pending)[0]}")
        node = reached
        while node not in tree:
            parent, pip = prev[node]
            tree.add(node)
            if pip is not None:
                pips.append(pip)
            node = parent
        pending.discard(reached)
    job.nodes = {n for n in tree if n[1].startswith("S")}
    job.pips = sorted(pips)


def route_design(fabric: Fabric, netlist: Netlist, max_iterations: int = MAX_ITERATIONS) -> Netlist:
    """Return a copy of the netlist with PIPs on every net between slice pins.

    Nets that touch IOB or BLACKBOX instances only get their slice pins routed
    when a slice output drives them; their shell side lies outside the frames.
    """
    graph = RoutingGraph(fabric)
    instances = netlist.instance_map()
    jobs: list[_NetJob] = []
    try:
        for net in netlist.nets:
            if net.outpin is None:
                continue
            source = _pin_node(fabric, instances, *net.outpin, output=True)
            if source is None:
                continue
            targets = [t for inst, pin in net.inpins if (t := _pin_node(fabric, instances, inst, pin, output=False))]
            if targets:
                jobs.append(_NetJob(net, source, targets))
    except FabricError as e:
        raise RoutingError(str(e)) from e

    occupancy: dict[Node, int] = defaultdict(int)
    history: dict[Node, float] = defaultdict(float)
    present_factor = PRESENT_FACTOR_START
    to_route = list(jobs)
    for iteration in range(1, max_iterations + 1):
        for job in to_route:
            for node in job.nodes:
                occupancy[node] -= 1
            _route_net(graph, job, occupancy, history, present_factor)
            for node in job.nodes:
                occupancy[node] += 1
        overused = {n for n, c in occupancy.items() if c > 1}
        logger.debug(f"iteration {iteration}: {len(overused)} shared sink wires")
        if not overused:
            logger.info(f"routed {len(jobs)} nets in {iteration} iteration(s)")
            break
        for node in overused:
            history[node] += HISTORY_INCREMENT
        present_factor *= PRESENT_FACTOR_GROWTH
        to_route = [job for job in jobs if job.nodes & overused]
    else:
        raise RoutingError(f"congestion unresolved after {max_iterations} iterations")

    routed = {job.net.name: job.pips for job in jobs}
    nets = [n.model_copy(update={"pips": routed[n.name]}) if n.name in routed else n for n in netlist.nets]
    return netlist.model_copy(update={"nets": nets})
