# vim: tabstop=4 shiftwidth=4 softtabstop=4

""" Unit tests for beam routing"""

import itertools
import math
import unittest

import networkx as nx
import numpy as np

from irsim import routing as rt
from irsim.beamforming import closed_form_path_gain, multi_hop_phases
from irsim.channel import synthesize_channels
from irsim.errors import ConfigError, Infeasible, NoFeasiblePath
from irsim.scene import (LoSGraph, build_los_graph, build_scene, load_scene,
                         shipped_scene_path, with_irs_elements)


def chain_config():
    return {
        'bs': {'position': [0, 0, 0], 'antennas': 4},
        'irs': [
            {'position': [10, 5, 0], 'pointing_normal': [0, -1, 0], 'M0': 2},
            {'position': [20, -5, 0], 'pointing_normal': [0, 1, 0], 'M0': 2},
        ],
        'users': [[30, 0, 0]],
        'obstacles': [{'min': [24, -0.5, -1], 'max': [26, 0.5, 1]}],
        'constants': {'blocked_links': 'cut'},
    }


def two_wing_config():
    # each user has its own IRS, nothing links the two sides
    s = 1 / math.sqrt(2)
    return {
        'bs': {'position': [0, 0, 0], 'antennas': 4},
        'irs': [
            {'position': [10, 8, 0], 'pointing_normal': [-s, s, 0], 'M0': 2},
            {'position': [10, -8, 0], 'pointing_normal': [-s, -s, 0], 'M0': 2},
        ],
        'users': [[20, 20, 0], [20, -20, 0]],
        'effective_regions': {'1': [1], '2': [2]},
        'constants': {'blocked_links': 'cut'},
    }


def random_scene(rng, num_irs, num_users=1):
    irs = []
    for _ in range(num_irs):
        angle = rng.uniform(0, 2 * math.pi)
        irs.append({'position': [rng.uniform(1, 49), rng.uniform(-20, 20), 0],
                    'pointing_normal': [math.cos(angle), math.sin(angle), 0], 'M0': 2})
    users = [[rng.uniform(50, 60), rng.uniform(-20, 20), 0] for _ in range(num_users)]
    return build_scene({'bs': {'position': [0, 0, 0], 'antennas': 4}, 'irs': irs, 'users': users})


def random_dag(scene, k, rng, density=0.5):
    """Random LoS graph over the scene's nodes respecting the distance ordering."""
    target = scene.user_node(k)
    irs = list(range(1, scene.num_irs + 1))
    graph = nx.DiGraph()
    graph.add_nodes_from([0] + irs + [target])
    for j in irs:
        if rng.random() < density:
            graph.add_edge(0, j)
        if rng.random() < density:
            graph.add_edge(j, target)
        for i in irs:
            if scene.distance(0, j) > scene.distance(0, i) and rng.random() < density:
                graph.add_edge(i, j)
    return LoSGraph(graph, k, target)


class WeightTestCase(unittest.TestCase):
    def test_edge_weight(self):
        self.assertAlmostEqual(rt.edge_weight(10.0, 1e-3), 2 * math.log(10) - math.log(1e-3))
        self.assertAlmostEqual(rt.edge_weight(10.0, 1e-3, 100),
                               2 * math.log(10) - math.log(1e-3) - 2 * math.log(100))

    def test_path_gain_is_closed_form(self):
        scene = build_scene(chain_config())
        for path in [(1,), (1, 2), (2,)]:
            nodes = [0] + list(path) + [3]
            distances = [scene.distance(i, j) for i, j in zip(nodes, nodes[1:])]
            expected = closed_form_path_gain(len(path), 4, 4, scene.constants.beta, distances)
            self.assertAlmostEqual(rt.path_gain(scene, path, 1) / expected, 1.0, places=9)

    def test_gain_db(self):
        path = rt.ReflectionPath((1,), 1, 1e-9)
        self.assertAlmostEqual(path.gain_db, -90.0)
        self.assertEqual(path.hops, 1)
        self.assertEqual(rt.ReflectionPath((), 1, 0.0).gain_db, float('-inf'))


class SingleRouteTestCase(unittest.TestCase):
    def test_chain(self):
        scene = build_scene(chain_config())
        routes = rt.enumerate_routes(scene, build_los_graph(scene, 1))
        best = rt.optimal_single_route(scene, build_los_graph(scene, 1))
        # (1,) and (2,) mirror each other, so only the gain is pinned down
        self.assertAlmostEqual(best.gain / max(r.gain for r in routes), 1.0, places=9)
        self.assertEqual(best.hops, 1)
        self.assertEqual([r.irs_sequence for r in routes], [(1,), (1, 2), (2,)])

    def test_large_surfaces_prefer_more_hops(self):
        scene = build_scene(chain_config())
        graph = build_los_graph(scene, 1)
        self.assertEqual(rt.optimal_single_route(scene, graph, M=4).hops, 1)
        self.assertEqual(rt.optimal_single_route(scene, graph, M=10 ** 4).irs_sequence, (1, 2))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(7)
        checked = 0
        for trial in range(200):
            scene = random_scene(rng, int(rng.integers(1, 11)))
            graph = random_dag(scene, 1, rng)
            M = None if trial % 2 else 100
            routes = rt.enumerate_routes(scene, graph, M=M)
            if not routes:
                self.assertRaises(NoFeasiblePath, rt.optimal_single_route, scene, graph, M)
                continue
            expected = min(routes, key=rt.ReflectionPath.sort_key)
            found = rt.optimal_single_route(scene, graph, M)
            self.assertEqual(found.irs_sequence, expected.irs_sequence)
            self.assertAlmostEqual(found.gain / expected.gain, 1.0, places=9)
            checked += 1
        self.assertGreater(checked, 100)

    def test_no_path(self):
        scene = build_scene(chain_config())
        graph = nx.DiGraph()
        graph.add_nodes_from([0, 1, 2, 3])
        graph.add_edge(0, 1)
        with self.assertRaises(NoFeasiblePath) as cm:
            rt.optimal_single_route(scene, LoSGraph(graph, 1, 3))
        self.assertEqual(cm.exception.user, 1)
        self.assertEqual(cm.exception.exit_code, 3)


class DirectLinkRouteTestCase(unittest.TestCase):
    def test_direct_only(self):
        config = chain_config()
        config['obstacles'] = []
        config['effective_regions'] = {'1': []}
        channels = synthesize_channels(build_scene(config))
        route = rt.optimal_single_route_with_direct(channels, 1)
        self.assertEqual(route.irs_sequence, ())
        self.assertGreater(route.gain, 0)

    def test_nothing_at_all(self):
        config = chain_config()
        config['effective_regions'] = {'1': []}
        channels = synthesize_channels(build_scene(config))
        self.assertRaises(NoFeasiblePath, rt.optimal_single_route_with_direct, channels, 1)

    def test_direct_link_adds_gain(self):
        config = chain_config()
        config['obstacles'] = []
        channels = synthesize_channels(build_scene(config))
        scene = channels.scene
        route = rt.optimal_single_route_with_direct(channels, 1)
        self.assertGreater(route.gain, rt.path_gain(scene, route.irs_sequence, 1))


class SeparationTestCase(unittest.TestCase):
    def test_two_wings(self):
        scene = build_scene(two_wing_config())
        self.assertTrue(rt.paths_separated(scene, 1, (1,), 2, (2,)))
        self.assertTrue(rt.check_path_separation(scene, {1: (1,), 2: (2,)}))
        solution = rt.unconstrained_multi_route(scene)
        self.assertTrue(solution.separation_ok)
        self.assertEqual(solution.sequences(), {1: (1,), 2: (2,)})

    def test_shared_irs(self):
        scene = build_scene(two_wing_config())
        self.assertFalse(rt.paths_separated(scene, 1, (1,), 2, (1,)))

    def test_cross_los(self):
        config = chain_config()
        config['users'].append([31, 1, 0])
        scene = build_scene(config)
        # IRS 2 reaches the other user's IRS 1 path through the 1 -> 2 hop
        self.assertFalse(rt.paths_separated(scene, 1, (2,), 2, (1,)))


class MultiRouteTestCase(unittest.TestCase):
    def test_matches_brute_force(self):
        rng = np.random.default_rng(11)
        compared = 0
        for _ in range(50):
            scene = random_scene(rng, int(rng.integers(2, 9)), num_users=2)
            candidates = {k: rt.enumerate_routes(scene, random_dag(scene, k, rng, 0.6)) for k in (1, 2)}
            best = None
            for first, second in itertools.product(candidates[1], candidates[2]):
                if rt.paths_separated(scene, 1, first.irs_sequence, 2, second.irs_sequence):
                    value = min(first.gain, second.gain)
                    best = value if best is None else max(best, value)
            if best is None:
                self.assertRaises(Infeasible, rt.select_separated, scene, candidates)
                continue
            solution = rt.select_separated(scene, candidates)
            self.assertAlmostEqual(solution.objective / best, 1.0, places=12)
            self.assertTrue(rt.check_path_separation(scene, solution.sequences()))
            compared += 1
        self.assertGreater(compared, 10)

    def test_budget(self):
        scene = build_scene(two_wing_config())
        candidates = {k: rt.enumerate_routes(scene, build_los_graph(scene, k)) for k in (1, 2)}
        self.assertEqual(rt.select_separated(scene, candidates, budget=1).sequences(), {1: (1,), 2: (2,)})
        self.assertRaises(ConfigError, rt.select_separated, scene, candidates, 0)

    def test_infeasible_diagnostics(self):
        scene = build_scene(two_wing_config())
        with self.assertRaises(Infeasible) as cm:
            rt.select_separated(scene, {1: [rt.ReflectionPath((1,), 1, 1.0)], 2: []})
        self.assertEqual(cm.exception.diagnostics[2]['reason'], 'no reflection path')
        self.assertEqual(cm.exception.exit_code, 3)

        shared = {1: [rt.ReflectionPath((1,), 1, 1.0)], 2: [rt.ReflectionPath((1,), 2, 1.0)]}
        with self.assertRaises(Infeasible) as cm:
            rt.select_separated(scene, shared)
        self.assertEqual(cm.exception.diagnostics[1]['candidates'], 1)


class IndoorSceneTestCase(unittest.TestCase):
    def setUp(self):
        self.scene = load_scene(shipped_scene_path('indoor8'))

    def test_hop_count_grows_with_surface_size(self):
        hops = []
        for m0 in (12, 16, 20, 24, 28, 32):
            scene = with_irs_elements(self.scene, m0)
            hops.append(rt.optimal_single_route(scene, build_los_graph(scene, 1)).hops)
        self.assertEqual(hops, sorted(hops))
        self.assertEqual(hops[3] - hops[2], 1)

    def test_routes(self):
        scene = with_irs_elements(self.scene, 20)
        self.assertEqual(rt.optimal_single_route(scene, build_los_graph(scene, 1)).irs_sequence, (1, 3))
        scene = with_irs_elements(self.scene, 24)
        self.assertEqual(rt.optimal_single_route(scene, build_los_graph(scene, 1)).irs_sequence, (1, 2, 3))

    def test_separation_changes_routes(self):
        scene = with_irs_elements(self.scene, 20)
        free = rt.unconstrained_multi_route(scene)
        separated = rt.optimal_multi_route(scene)
        self.assertFalse(free.separation_ok)
        self.assertEqual(free.sequences(), {1: (1, 3), 2: (1, 4)})
        self.assertEqual(separated.sequences(), {1: (1, 3), 2: (5,)})
        self.assertLessEqual(separated.objective, free.objective)

    def test_audit(self):
        scene = with_irs_elements(self.scene, 8)
        channels = synthesize_channels(scene, seed=1)
        free = rt.unconstrained_multi_route(scene)
        report = rt.interference_audit(channels, free)
        self.assertEqual(sorted(report), [1, 2])
        for entry in report.values():
            self.assertGreater(entry['signal'], 0)
            self.assertGreaterEqual(entry['interference'], 0)
            self.assertAlmostEqual(entry['sinr'], entry['signal'] /
                                   (entry['interference'] + scene.constants.noise_power))


class PhasesTestCase(unittest.TestCase):
    def test_shared_irs_takes_phase_of_sum(self):
        config = chain_config()
        config['users'].append([31, 1, 0])
        scene = build_scene(config)
        channels = synthesize_channels(scene)
        solution = rt.RoutingSolution({1: rt.ReflectionPath((1,), 1, 1.0),
                                       2: rt.ReflectionPath((1,), 2, 1.0)}, False)
        phases = rt.routing_phases(channels, solution)
        total = multi_hop_phases(channels, (1,), 1)[1] + multi_hop_phases(channels, (1,), 2)[1]
        np.testing.assert_allclose(phases[1], np.exp(1j * np.angle(total)))
        np.testing.assert_array_equal(phases[2], np.ones(4))

    def test_json(self):
        scene = build_scene(two_wing_config())
        solution = rt.unconstrained_multi_route(scene)
        doc = rt.routes_to_json(solution)
        self.assertEqual(doc['users']['1']['irs'], [1])
        again = rt.routes_from_json(doc)
        self.assertEqual(again.sequences(), solution.sequences())
        self.assertAlmostEqual(again.objective / solution.objective, 1.0)
        self.assertRaises(ConfigError, rt.routes_from_json, {'users': {'1': {}}})
