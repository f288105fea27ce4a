'''
Codebook-based beam training.

Centralized training searches the BS and IRS codebooks directly on the
channel, either over every combination or one node at a time. The
distributed protocol instead has every node measure received signal
strength (RSS) for its beams and report a beam training table (BTT) to
the BS, which then routes and picks beams from the merged tables.
'''

import itertools
import json
import logging
import math
from collections import namedtuple

import numpy as np

from irsim.beamforming import BeamSolution
from irsim.channel import PhaseConfig, affine_in_irs, effective_channel, path_loss
from irsim.errors import (CombinationLimitError, ConfigError, DimensionError,
                          Infeasible, NotTrainable, ProtocolError)
from irsim.routing import ReflectionPath, RoutingSolution, select_separated
from irsim.scene import build_los_graph, iter_paths

logger = logging.getLogger(__name__)

MAX_COMBINATIONS = 10 ** 7

DEFAULT_REALIZATIONS = 10

KINDS = ('active', 'passive', 'passive-horizontal', 'passive-vertical')


class Codebook():
    def __init__(self, beams, kind):
        beams = np.atleast_2d(np.asarray(beams, dtype=complex))
        if kind not in KINDS:
            raise ConfigError("unknown codebook kind %r" % kind)
        if beams.shape[0] < 1:
            raise ConfigError("a codebook needs at least one beam")
        if kind == 'active':
            if not np.allclose(np.linalg.norm(beams, axis=1), 1.0, atol=1e-9):
                raise ConfigError("active beams must have unit norm")
        elif not np.allclose(np.abs(beams), 1.0, atol=1e-9):
            raise ConfigError("passive beams must have unit-modulus entries")
        self.beams = beams
        self.kind = kind

    @property
    def D(self):
        return self.beams.shape[0]

    @property
    def dimension(self):
        return self.beams.shape[1]

    def __getitem__(self, index):
        return self.beams[index]

    def __len__(self):
        return self.D

    def __repr__(self):
        return "Codebook(%s, D=%d, dimension=%d)" % (self.kind, self.D, self.dimension)


def dft_codebook(D, dimension, kind='active'):
    if D < dimension:
        raise ConfigError("a %d-point DFT codebook cannot steer %d elements" % (D, dimension))
    grid = np.exp(-2j * math.pi * np.outer(np.arange(D), np.arange(dimension)) / D)
    if kind == 'active':
        grid = grid / math.sqrt(dimension)
    return Codebook(grid, kind)


def planar_codebook(shape, D):
    """3D passive beams, horizontal beam (x) vertical beam for every pair."""
    Mh, Mv = shape
    horizontal = dft_codebook(D, Mh, 'passive-horizontal').beams if Mh > 1 else np.ones((1, 1))
    vertical = dft_codebook(D, Mv, 'passive-vertical').beams if Mv > 1 else np.ones((1, 1))
    beams = np.array([np.kron(h, v) for h in horizontal for v in vertical])
    return Codebook(beams, 'passive')


def scene_codebooks(scene, D=32, irs_ids=None):
    """BS codebook under 'bs' plus one planar codebook per IRS."""
    irs_ids = irs_ids if irs_ids is not None else range(1, scene.num_irs + 1)
    books = {'bs': dft_codebook(max(D, scene.bs_array.size), scene.bs_array.size)}
    for j in irs_ids:
        books[j] = planar_codebook(scene.irs(j).array.shape, D)
    return books


class SearchResult():
    """Beam indices picked by a training scheme.

    IRSs missing from irs_indices keep phase 0 on every element.
    """

    def __init__(self, bs_indices, irs_indices, objective, evaluations=0, sweeps=0,
                 history=None, converged=True):
        self.bs_indices = dict(bs_indices)
        self.irs_indices = dict(irs_indices)
        self.objective = objective
        self.evaluations = evaluations
        self.sweeps = sweeps
        self.history = history or []
        self.converged = converged

    def phases(self, scene, codebooks):
        return PhaseConfig(scene, {j: codebooks[j][d] for j, d in self.irs_indices.items()})

    def bs_beams(self, codebooks):
        return {k: codebooks['bs'][d] for k, d in self.bs_indices.items()}

    def to_solution(self, channels, codebooks, paths=None):
        scene = channels.scene
        phases = self.phases(scene, codebooks)
        beams = self.bs_beams(codebooks)
        users = sorted(beams)
        min_sinr, sinrs, gains = evaluate_beams(channels, users, phases, beams, paths)
        return BeamSolution(phases, beams, gains, sinrs, converged=self.converged,
                            iterations=self.sweeps, history=self.history)


def _user_paths(channels, users, paths, los_only):
    if paths is None:
        return {k: channels.paths(k, los_only) for k in users}
    return paths


def _gain_matrix(channels, users, phases, bs_codebook, paths):
    """|h_k w_d|^2 for every user k and BS beam d."""
    H = np.array([effective_channel(channels, k, phases, paths=paths.get(k)) for k in users])
    return np.abs(H @ bs_codebook.beams.T) ** 2


def _min_sinr(G, choice, power, noise):
    K = G.shape[0]
    worst = math.inf
    for k in range(K):
        signal = power * G[k, choice[k]]
        leak = power * sum(G[k, choice[j]] for j in range(K) if j != k)
        worst = min(worst, signal / (leak + noise))
    return worst


def evaluate_beams(channels, users, phases, beams, paths=None, los_only=False):
    """(min SINR, SINR per user, gain |h_k w_k|^2 per user) of one beam assignment."""
    scene = channels.scene
    power, noise = scene.constants.tx_power, scene.constants.noise_power
    paths = _user_paths(channels, users, paths, los_only)
    rows = {k: effective_channel(channels, k, phases, paths=paths.get(k)) for k in users}
    gains, sinrs = {}, {}
    for k in users:
        gains[k] = float(abs(rows[k] @ beams[k]) ** 2)
        leak = sum(power * abs(rows[k] @ beams[j]) ** 2 for j in users if j != k)
        sinrs[k] = float(power * gains[k] / (leak + noise))
    return min(sinrs.values()), sinrs, gains


def _irs_ids(codebooks):
    return sorted(j for j in codebooks if j != 'bs')


def combination_count(codebooks, K):
    count = codebooks['bs'].D ** K
    for j in _irs_ids(codebooks):
        count *= codebooks[j].D
    return count


def exhaustive_search(channels, codebooks, users=None, paths=None, los_only=False,
                      limit=MAX_COMBINATIONS):
    """Try every combination of BS beams (one per user) and IRS beams."""
    scene = channels.scene
    users = users or list(range(1, scene.num_users + 1))
    count = combination_count(codebooks, len(users))
    if count > limit:
        raise CombinationLimitError(count, limit)
    paths = _user_paths(channels, users, paths, los_only)
    power, noise = scene.constants.tx_power, scene.constants.noise_power
    irs_ids = _irs_ids(codebooks)
    D_B = codebooks['bs'].D

    best_value, best = -math.inf, None
    evaluations = 0
    for irs_choice in itertools.product(*(range(codebooks[j].D) for j in irs_ids)):
        phases = PhaseConfig(scene, {j: codebooks[j][d] for j, d in zip(irs_ids, irs_choice)})
        G = _gain_matrix(channels, users, phases, codebooks['bs'], paths)
        for bs_choice in itertools.product(range(D_B), repeat=len(users)):
            evaluations += 1
            value = _min_sinr(G, bs_choice, power, noise)
            if value > best_value:
                best_value, best = value, (bs_choice, irs_choice)

    logger.debug("exhaustive search over %d combinations, best min SINR %g" % (evaluations, best_value))
    bs_choice, irs_choice = best
    return SearchResult(dict(zip(users, bs_choice)), dict(zip(irs_ids, irs_choice)), best_value,
                        evaluations=evaluations)


def sequential_search(channels, codebooks, users=None, max_sweeps=20, init=None, paths=None,
                      los_only=False):
    """Cyclic per-node search: each user's BS beam, then each IRS beam.

    A beam only changes when it strictly improves the min-user SINR, so
    the objective never decreases. Every sweep costs K * D_B + sum(D_j)
    evaluations. init is a SearchResult to warm-start from.
    """
    scene = channels.scene
    users = users or list(range(1, scene.num_users + 1))
    paths = _user_paths(channels, users, paths, los_only)
    power, noise = scene.constants.tx_power, scene.constants.noise_power
    irs_ids = _irs_ids(codebooks)
    D_B = codebooks['bs'].D

    bs = {k: 0 for k in users}
    irs = {j: 0 for j in irs_ids}
    if init is not None:
        bs.update({k: d for k, d in init.bs_indices.items() if k in bs})
        irs.update({j: d for j, d in init.irs_indices.items() if j in irs})

    def gains_for(irs_state):
        phases = PhaseConfig(scene, {j: codebooks[j][d] for j, d in irs_state.items()})
        return _gain_matrix(channels, users, phases, codebooks['bs'], paths)

    G = gains_for(irs)
    current = _min_sinr(G, [bs[k] for k in users], power, noise)
    history = [current]
    evaluations = 0
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        changed = False
        for k in users:
            for d in range(D_B):
                evaluations += 1
                choice = [bs[u] if u != k else d for u in users]
                value = _min_sinr(G, choice, power, noise)
                if value > current:
                    current, bs[k], changed = value, d, True
        for j in irs_ids:
            phases = PhaseConfig(scene, {i: codebooks[i][d] for i, d in irs.items()})
            # h = theta_j @ C + b, so every beam of IRS j is scored at once
            sweep_G = []
            for k in users:
                C, b = affine_in_irs(channels, k, phases, j, paths=paths.get(k))
                sweep_G.append(np.abs((codebooks[j].beams @ C + b) @ codebooks['bs'].beams.T) ** 2)
            sweep_G = np.array(sweep_G)
            choice = [bs[k] for k in users]
            for d in range(codebooks[j].D):
                evaluations += 1
                value = _min_sinr(sweep_G[:, d, :], choice, power, noise)
                if value > current:
                    current, irs[j], changed = value, d, True
            G = sweep_G[:, irs[j], :]
        history.append(current)
        if not changed:
            converged = True
            break

    logger.debug("sequential search: %d sweeps, %d evaluations, min SINR %g" % (sweeps, evaluations, current))
    return SearchResult(bs, irs, current, evaluations=evaluations, sweeps=sweeps,
                        history=history, converged=converged)


BTTRow = namedtuple('BTTRow', ['previous', 'beam', 'next', 'rss', 'online'])


class BeamTrainingTable():
    """RSS reports of one node, keyed by (previous node, beam, next node).

    The BS table has previous = None. Only rows at or above threshold are
    kept; measurements counts every slot spent, stored or not.
    """

    def __init__(self, owner, threshold, rows=None):
        self.owner = owner
        self.threshold = threshold
        self.rows = {}
        self.measurements = {'offline': 0, 'online': 0}
        for row in rows or []:
            self.add(row)

    def add(self, row):
        key = (row.previous, row.beam, row.next)
        if key in self.rows:
            raise ProtocolError("duplicate row %s in the table of node %d" % (key, self.owner))
        if row.rss < self.threshold:
            raise ProtocolError("row %s of node %d is below the report threshold" % (key, self.owner))
        self.rows[key] = row

    def record(self, previous, beam, next_node, rss, online=False):
        self.measurements['online' if online else 'offline'] += 1
        if rss >= self.threshold:
            self.add(BTTRow(previous, beam, next_node, float(rss), online))

    def lookup(self, previous, beam, next_node):
        row = self.rows.get((previous, beam, next_node))
        return None if row is None else row.rss

    def best(self, previous, next_node):
        """(beam, rss) with the largest RSS for a hop, or None."""
        found = [(row.rss, -row.beam) for row in self.rows.values()
                 if row.previous == previous and row.next == next_node]
        if not found:
            return None
        rss, beam = max(found)
        return -beam, rss

    def __len__(self):
        return len(self.rows)

    def to_dict(self):
        return {
            'owner': self.owner,
            'threshold': self.threshold,
            'measurements': dict(self.measurements),
            'rows': [list(row) for _, row in sorted(self.rows.items(), key=lambda item: _row_key(item[0]))],
        }

    @classmethod
    def from_dict(cls, doc):
        table = cls(int(doc['owner']), float(doc['threshold']),
                    [BTTRow(r[0], int(r[1]), int(r[2]), float(r[3]), bool(r[4])) for r in doc['rows']])
        table.measurements.update(doc.get('measurements', {}))
        return table

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _row_key(key):
    previous, beam, next_node = key
    return (-1 if previous is None else previous, beam, next_node)


def _neighbors(channels, users):
    """Union of the LoS graph edges of the given users."""
    edges = set()
    for k in users:
        edges.update(channels.graph(k, los_only=True).edges)
    return edges


def _averaged_rss(beams, responses):
    """Mean over realizations of |beams @ response|^2 for every beam."""
    return np.mean([np.abs(beams @ response) ** 2 for response in responses], axis=0)


def build_bs_btt(channels, codebook, threshold=None, realizations=DEFAULT_REALIZATIONS, users=None):
    """BS sweeps its active beams; each next IRS controller reports RSS."""
    scene = channels.scene
    users = users or list(range(1, scene.num_users + 1))
    threshold = scene.constants.noise_power if threshold is None else threshold
    table = BeamTrainingTable(0, threshold)
    next_nodes = sorted({j for i, j in _neighbors(channels, users) if i == 0})
    for j in next_nodes:
        responses = [channels.redraw(0, j, channels.realization + r).matrix[0]
                  for r in range(realizations)]
        rss = _averaged_rss(codebook.beams, responses)
        for d in range(codebook.D):
            table.record(None, d, j, rss[d])
    logger.debug("BS table: %d of %d rows kept" % (len(table), codebook.D * len(next_nodes)))
    return table


def build_irs_btt(channels, j, codebook, threshold=None, realizations=DEFAULT_REALIZATIONS, users=None):
    """IRS j sweeps its passive beams for every (previous, next) pair of nodes.

    The previous node transmits from its reference element and the next
    node's controller measures. Rows towards IRSs can be trained offline;
    rows towards users exist only for the users passed in.
    """
    scene = channels.scene
    all_users = list(range(1, scene.num_users + 1))
    users = all_users if users is None else users
    threshold = scene.constants.noise_power if threshold is None else threshold
    if codebook.dimension != scene.element_count(j):
        raise DimensionError("codebook of IRS %d" % j, (scene.element_count(j),), (codebook.dimension,))

    edges = _neighbors(channels, all_users)
    previous = sorted({a for a, b in edges if b == j})
    online_targets = {scene.user_node(k) for k in users}
    following = sorted({b for a, b in edges if a == j and (scene.is_irs(b) or b in online_targets)})

    table = BeamTrainingTable(j, threshold)
    span = range(channels.realization, channels.realization + realizations)
    # the previous node sends from its reference element, the next node's controller listens
    incoming = {p: [channels.redraw(p, j, r).matrix[:, 0] for r in span] for p in previous}
    outgoing = {n: [channels.redraw(j, n, r).matrix[0] for r in span] for n in following}
    for p in previous:
        for n in following:
            responses = [out * inc for out, inc in zip(outgoing[n], incoming[p])]
            rss = _averaged_rss(codebook.beams, responses)
            online = scene.is_user(n)
            for d in range(codebook.D):
                table.record(p, d, n, rss[d], online=online)
    return table


class GlobalBTT():
    def __init__(self, bs_table, irs_tables):
        self.bs = bs_table
        self.irs = irs_tables

    def table(self, node):
        return self.bs if node == 0 else self.irs.get(node)

    def __len__(self):
        return len(self.bs) + sum(len(t) for t in self.irs.values())

    def to_dict(self):
        return {'bs': self.bs.to_dict(),
                'irs': [t.to_dict() for _, t in sorted(self.irs.items())]}

    @classmethod
    def from_dict(cls, doc):
        return assemble_global_btt(BeamTrainingTable.from_dict(doc['bs']),
                                   [BeamTrainingTable.from_dict(t) for t in doc['irs']])


def assemble_global_btt(bs_table, irs_tables):
    """Merge the reported tables; repeated reports must agree."""
    if bs_table.owner != 0:
        raise ProtocolError("BS table reported by node %d" % bs_table.owner)
    merged = {}
    for table in irs_tables:
        if table.owner == 0:
            raise ProtocolError("IRS table reported by the BS")
        if table.owner not in merged:
            merged[table.owner] = BeamTrainingTable(table.owner, table.threshold)
        target = merged[table.owner]
        for key, row in table.rows.items():
            known = target.rows.get(key)
            if known is None:
                target.add(row)
            elif known != row:
                raise ProtocolError("conflicting reports %s and %s from node %d" % (known, row, table.owner))
        for phase, count in table.measurements.items():
            target.measurements[phase] = max(target.measurements[phase], count)
    return GlobalBTT(bs_table, merged)


def nominal_path_loss(scene, i, j):
    return path_loss(scene.distance(i, j), scene.constants.alpha[scene.link_class(i, j)],
                     scene.constants.beta)


def approx_gain(global_btt, scene, path, k, bs_beam, irs_beams):
    """End-to-end gain estimate of a path from the reported RSS values.

    Each IRS row contains the path loss of the hop that enters it, which
    the BS row (or the previous IRS row) has already counted, so those
    hops are divided out once.
    """
    nodes = [0] + list(path) + [scene.user_node(k)]
    gain = global_btt.bs.lookup(None, bs_beam, nodes[1])
    if gain is None:
        raise NotTrainable(path, (0, nodes[1]))
    for n in range(1, len(nodes) - 1):
        table = global_btt.table(nodes[n])
        rss = None if table is None else table.lookup(nodes[n - 1], irs_beams[nodes[n]], nodes[n + 1])
        if rss is None:
            raise NotTrainable(path, (nodes[n - 1], nodes[n], nodes[n + 1]))
        gain *= rss / nominal_path_loss(scene, nodes[n - 1], nodes[n])
    return gain


def best_beams_for_path(global_btt, scene, path, k):
    """Beams maximizing approx_gain along one path: (bs beam, irs beams, gain)."""
    nodes = [0] + list(path) + [scene.user_node(k)]
    found = global_btt.bs.best(None, nodes[1])
    if found is None:
        raise NotTrainable(path, (0, nodes[1]))
    bs_beam = found[0]
    irs_beams = {}
    for n in range(1, len(nodes) - 1):
        table = global_btt.table(nodes[n])
        found = None if table is None else table.best(nodes[n - 1], nodes[n + 1])
        if found is None:
            raise NotTrainable(path, (nodes[n - 1], nodes[n], nodes[n + 1]))
        irs_beams[nodes[n]] = found[0]
    return bs_beam, irs_beams, approx_gain(global_btt, scene, path, k, bs_beam, irs_beams)


def distributed_route_and_beams(global_btt, scene, users=None, budget=None):
    """Route and pick beams from the global BTT alone.

    Returns the routing solution (with approximate gains) and the beam
    indices the BS distributes to the IRS controllers.
    """
    users = users or list(range(1, scene.num_users + 1))
    candidates, beams = {}, {}
    for k in users:
        candidates[k] = []
        for path in iter_paths(build_los_graph(scene, k)):
            try:
                bs_beam, irs_beams, gain = best_beams_for_path(global_btt, scene, path, k)
            except NotTrainable as e:
                logger.debug("user %d: %s" % (k, e.msg))
                continue
            candidates[k].append(ReflectionPath(path, k, gain))
            beams[(k, path)] = (bs_beam, irs_beams)

    untrainable = [k for k in users if not candidates[k]]
    if untrainable:
        diagnostics = {k: {'candidates': len(candidates[k]),
                           'reason': 'no trainable path' if k in untrainable else None} for k in users}
        raise Infeasible("users %s have no trainable path" % untrainable, diagnostics)

    if len(users) == 1:
        k = users[0]
        chosen = min(candidates[k], key=ReflectionPath.sort_key)
        solution = RoutingSolution({k: chosen}, True)
    else:
        solution = select_separated(scene, candidates, budget)

    bs_indices, irs_indices = {}, {}
    for k, route in solution.paths.items():
        bs_beam, irs_beams = beams[(k, route.irs_sequence)]
        bs_indices[k] = bs_beam
        irs_indices.update(irs_beams)
    logger.info("distributed training: routes %s" % {k: list(p.irs_sequence) for k, p in sorted(solution.paths.items())})
    return solution, SearchResult(bs_indices, irs_indices, solution.objective)


def train_distributed(channels, codebooks, users=None, threshold=None,
                      realizations=DEFAULT_REALIZATIONS, budget=None):
    """Run the whole protocol: local tables, global table, route and beams."""
    scene = channels.scene
    users = users or list(range(1, scene.num_users + 1))
    bs_table = build_bs_btt(channels, codebooks['bs'], threshold, realizations, users)
    tables = [build_irs_btt(channels, j, codebooks[j], threshold, realizations, users)
              for j in _irs_ids(codebooks)]
    global_btt = assemble_global_btt(bs_table, tables)
    solution, result = distributed_route_and_beams(global_btt, scene, users, budget)
    return global_btt, solution, result


def training_cost(global_btt):
    """Measurement slots spent, split into offline and online phases."""
    cost = dict(global_btt.bs.measurements)
    for table in global_btt.irs.values():
        for phase, count in table.measurements.items():
            cost[phase] += count
    cost['total'] = cost['offline'] + cost['online']
    return cost
