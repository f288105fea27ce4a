'''
Beam routing over the LoS graphs of a scene.

Single-user routing is a shortest path problem once the end-to-end
power gain of a pure-LoS path is log-transformed into a sum of edge
weights. Multi-user routing searches the candidate paths of every user
for the max-min assignment that keeps the paths separated.
'''

import itertools
import logging
import math

import networkx as nx
import numpy as np

from irsim.beamforming import (bs_mrt_to_first_irs, linear_to_db,
                               multi_hop_phases)
from irsim.channel import PhaseConfig, effective_channel
from irsim.errors import ConfigError, Infeasible, NoFeasiblePath
from irsim.scene import build_los_graph, iter_paths, los_indicator

logger = logging.getLogger(__name__)


class ReflectionPath():
    def __init__(self, irs_sequence, user, gain):
        self.irs_sequence = tuple(irs_sequence)
        self.user = user
        self.gain = gain

    @property
    def hops(self):
        return len(self.irs_sequence)

    @property
    def gain_db(self):
        return linear_to_db(self.gain) if self.gain > 0 else float('-inf')

    def sort_key(self):
        # best gain first, then fewer hops, then lexicographic
        return (-self.gain, self.hops, self.irs_sequence)

    def __eq__(self, other):
        return (isinstance(other, ReflectionPath) and self.user == other.user and
                self.irs_sequence == other.irs_sequence)

    def __hash__(self):
        return hash((self.user, self.irs_sequence))

    def __repr__(self):
        return "ReflectionPath(user %d, %s, %.2f dB)" % (self.user, list(self.irs_sequence), self.gain_db)


class RoutingSolution():
    def __init__(self, paths, separation_ok):
        self.paths = paths
        self.separation_ok = separation_ok

    @property
    def objective(self):
        if not self.paths:
            return 0.0
        return min(p.gain for p in self.paths.values())

    def __getitem__(self, k):
        return self.paths[k]

    def sequences(self):
        return {k: p.irs_sequence for k, p in self.paths.items()}


def _element_count(scene, node, M):
    return M if M is not None else scene.element_count(node)


def edge_weight(distance, beta, M=None):
    """Additive weight of one hop; M is the element count of the IRS it enters."""
    weight = 2.0 * math.log(distance) - math.log(beta)
    if M is not None:
        weight -= 2.0 * math.log(M)
    return weight


def _hop_weight(scene, i, j, M=None):
    entered = _element_count(scene, j, M) if scene.is_irs(j) else None
    return edge_weight(scene.distance(i, j), scene.constants.beta, entered)


def path_weight(scene, path, k, M=None):
    nodes = [0] + list(path) + [scene.user_node(k)]
    return sum(_hop_weight(scene, i, j, M) for i, j in zip(nodes, nodes[1:]))


def path_gain(scene, path, k, M=None):
    """Closed-form end-to-end gain of a pure-LoS path with cooperative beamforming."""
    return scene.bs_array.size * math.exp(-path_weight(scene, path, k, M))


def weighted_graph(scene, los_graph, M=None):
    graph = nx.DiGraph()
    graph.add_nodes_from(los_graph.graph.nodes)
    for i, j in los_graph.edges:
        graph.add_edge(i, j, weight=_hop_weight(scene, i, j, M))
    return graph


def optimal_single_route(scene, los_graph, M=None):
    """Bellman-Ford over the weighted LoS graph of one user."""
    k = los_graph.user
    graph = weighted_graph(scene, los_graph, M)
    try:
        shortest = list(nx.all_shortest_paths(graph, 0, los_graph.target, weight='weight',
                                              method='bellman-ford'))
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        raise NoFeasiblePath(k)
    # drop the BS and the user from each vertex list
    candidates = [tuple(nodes[1:-1]) for nodes in shortest if len(nodes) > 2]
    if not candidates:
        raise NoFeasiblePath(k)
    best = min(candidates, key=lambda p: (len(p), p))
    logger.debug("user %d: optimal route %s over %d edges" % (k, list(best), graph.number_of_edges()))
    return ReflectionPath(best, k, path_gain(scene, best, k, M))


def enumerate_routes(scene, los_graph, max_paths=None, M=None):
    k = los_graph.user
    return [ReflectionPath(p, k, path_gain(scene, p, k, M))
            for p in itertools.islice(iter_paths(los_graph), max_paths)]


def optimal_single_route_with_direct(channels, k, M=None):
    """Traverse every LoS path and keep the best coherent combination with the direct link.

    Without any reflection path the user is served over the direct link
    alone, which is returned as an empty IRS sequence.
    """
    scene = channels.scene
    f = channels.direct(k)
    direct_gain = float(np.vdot(f, f).real)
    N_B = scene.bs_array.size

    candidates = []
    for route in enumerate_routes(scene, channels.graph(k, los_only=True), M=M):
        reflected = route.gain
        bs_response = channels.link(0, route.irs_sequence[0]).tx
        cross = 2.0 * math.sqrt(reflected / N_B) * abs(np.vdot(bs_response, f))
        candidates.append(ReflectionPath(route.irs_sequence, k, direct_gain + reflected + cross))

    if not candidates:
        if direct_gain == 0:
            raise NoFeasiblePath(k)
        return ReflectionPath((), k, direct_gain)
    return min(candidates, key=ReflectionPath.sort_key)


def _path_nodes(scene, k, sequence):
    return list(sequence) + [scene.user_node(k)]


def paths_separated(scene, k, first, other, second):
    """True when two users' paths share no IRS and no LoS hop joins them."""
    if set(first) & set(second):
        return False
    for a in _path_nodes(scene, k, first):
        for b in _path_nodes(scene, other, second):
            if los_indicator(scene, a, b) or los_indicator(scene, b, a):
                return False
    return True


def check_path_separation(scene, paths):
    """paths maps each user to its IRS sequence; the BS is the only shared node."""
    users = sorted(paths)
    for k, other in itertools.combinations(users, 2):
        if not paths_separated(scene, k, paths[k], other, paths[other]):
            return False
    return True


def unconstrained_multi_route(scene, users=None, M=None, graphs=None):
    users = users or list(range(1, scene.num_users + 1))
    graphs = graphs or {}
    chosen = {}
    for k in users:
        graph = graphs.get(k)
        if graph is None:
            graph = build_los_graph(scene, k)
        chosen[k] = optimal_single_route(scene, graph, M)
    separated = check_path_separation(scene, {k: p.irs_sequence for k, p in chosen.items()})
    return RoutingSolution(chosen, separated)


def select_separated(scene, candidates, budget=None):
    """Max-min choice of one candidate path per user under path separation.

    candidates maps each user to its ReflectionPath candidates. Users are
    visited in descending order of their best gain and each keeps at most
    budget candidates (all of them when budget is None, which makes the
    search exact). Branches whose next candidate cannot beat the
    incumbent are cut.
    """
    if budget is not None and budget < 1:
        raise ConfigError("routing budget must be at least 1, got %s" % budget)
    users = sorted(candidates)
    ranked = {}
    for k in users:
        routes = sorted(candidates[k], key=ReflectionPath.sort_key)
        ranked[k] = routes[:budget] if budget is not None else routes

    diagnostics = {k: {'candidates': len(ranked[k]), 'reason': None} for k in users}
    empty = [k for k in users if not ranked[k]]
    if empty:
        for k in empty:
            diagnostics[k]['reason'] = 'no reflection path'
        raise Infeasible("users %s have no reflection path" % empty, diagnostics)

    order = sorted(users, key=lambda k: (ranked[k][0].sort_key(), k))
    best = {'objective': -1.0, 'paths': None}

    def assign(level, chosen, floor):
        if level == len(order):
            if floor > best['objective']:
                best['objective'] = floor
                best['paths'] = dict(chosen)
            return
        k = order[level]
        for route in ranked[k]:
            if min(floor, route.gain) <= best['objective']:
                # candidates are sorted, nothing further down can help
                break
            if all(paths_separated(scene, k, route.irs_sequence, other, p.irs_sequence)
                   for other, p in chosen.items()):
                chosen[k] = route
                assign(level + 1, chosen, min(floor, route.gain))
                del chosen[k]

    assign(0, {}, float('inf'))

    if best['paths'] is None:
        for k in users:
            diagnostics[k]['reason'] = 'no candidate separated from the other users'
        raise Infeasible("no separated assignment of %d users (budget %s)" % (len(users), budget),
                         diagnostics)
    return RoutingSolution(best['paths'], True)


def optimal_multi_route(scene, users=None, budget=None, M=None, graphs=None):
    """Max-min routing of several users over their LoS graphs under path separation."""
    users = users or list(range(1, scene.num_users + 1))
    graphs = graphs or {}
    candidates = {k: enumerate_routes(scene, graphs.get(k) or build_los_graph(scene, k), M=M)
                  for k in users}
    solution = select_separated(scene, candidates, budget)
    logger.info("multi-user routing: %s, min gain %.2f dB" % (
        {k: list(p.irs_sequence) for k, p in sorted(solution.paths.items())},
        linear_to_db(solution.objective)))
    return solution


def routing_phases(channels, solution):
    """Cooperative phases of every routed path.

    An IRS used by several paths takes the phase of the sum of the
    per-path optimal phase vectors.
    """
    sums = {}
    for k, route in solution.paths.items():
        if not route.irs_sequence:
            continue
        for irs, theta in multi_hop_phases(channels, route.irs_sequence, k).items():
            sums[irs] = sums.get(irs, 0) + theta
    return PhaseConfig(channels.scene, {irs: np.exp(1j * np.angle(total)) for irs, total in sums.items()})


def routing_beams(channels, solution):
    beams = {}
    for k, route in solution.paths.items():
        if route.irs_sequence:
            beams[k] = bs_mrt_to_first_irs(channels.link(0, route.irs_sequence[0]).tx)
        else:
            f = channels.direct(k)
            beams[k] = bs_mrt_to_first_irs(f)
    return beams


def interference_audit(channels, solution, power=None, noise=None):
    """Received interference of each routed user on the full channel, scattered paths included."""
    scene = channels.scene
    power = scene.constants.tx_power if power is None else power
    noise = scene.constants.noise_power if noise is None else noise
    phases = routing_phases(channels, solution)
    beams = routing_beams(channels, solution)

    report = {}
    for k in sorted(solution.paths):
        h = effective_channel(channels, k, phases)
        signal = power * abs(h @ beams[k]) ** 2
        interference = sum(power * abs(h @ beams[j]) ** 2 for j in beams if j != k)
        report[k] = {
            'signal': float(signal),
            'interference': float(interference),
            'interference_to_noise_db': linear_to_db(interference / noise) if interference > 0 else float('-inf'),
            'sinr': float(signal / (interference + noise)),
        }
    return report


def routes_to_json(solution):
    return {
        'separation_ok': solution.separation_ok,
        'objective_db': linear_to_db(solution.objective) if solution.objective > 0 else None,
        'users': {str(k): {'irs': list(p.irs_sequence), 'gain_db': p.gain_db}
                  for k, p in sorted(solution.paths.items())},
    }


def routes_from_json(doc):
    try:
        paths = {int(k): ReflectionPath(entry['irs'], int(k), 10.0 ** (entry['gain_db'] / 10.0))
                 for k, entry in doc['users'].items()}
        return RoutingSolution(paths, bool(doc['separation_ok']))
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError("malformed routing document: %s" % e)
