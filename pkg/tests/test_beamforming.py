# vim: tabstop=4 shiftwidth=4 softtabstop=4

""" Unit tests for passive and active beamforming"""

import math
import unittest

import numpy as np

from irsim import beamforming as bf
from irsim.channel import (PhaseConfig, cascaded_path_channel,
                           effective_channel, synthesize_channels)
from irsim.errors import DimensionError, SimulationError
from irsim.scene import build_scene


def chain_config(constants=None):
    return {
        'bs': {'position': [0, 0, 0], 'antennas': 4},
        'irs': [
            {'position': [10, 5, 0], 'pointing_normal': [0, -1, 0], 'M0': 2},
            {'position': [20, -5, 0], 'pointing_normal': [0, 1, 0], 'M0': 2},
        ],
        'users': [[30, 0, 0]],
        'obstacles': [{'min': [24, -0.5, -1], 'max': [26, 0.5, 1]}],
        'constants': constants or {'blocked_links': 'cut'},
    }


def random_geometry(rng):
    """A three-IRS chain with random offsets that keeps every hop in LoS."""
    jitter = lambda: rng.uniform(-1.0, 1.0)  # noqa: E731
    return {
        'bs': {'position': [0, 0, 0], 'antennas': int(rng.integers(1, 9))},
        'irs': [
            {'position': [10 + jitter(), 6 + jitter(), 0], 'pointing_normal': [0, -1, 0],
             'shape': [int(rng.integers(1, 4)), int(rng.integers(1, 4))]},
            {'position': [20 + jitter(), -6 + jitter(), 0], 'pointing_normal': [0, 1, 0],
             'shape': [int(rng.integers(1, 4)), int(rng.integers(1, 4))]},
            {'position': [30 + jitter(), 6 + jitter(), 0], 'pointing_normal': [0, -1, 0],
             'shape': [int(rng.integers(1, 4)), int(rng.integers(1, 4))]},
        ],
        'users': [[40 + jitter(), 0, 0]],
        'constants': {'blocked_links': 'cut'},
    }


class UnitsTestCase(unittest.TestCase):
    def test_conversions(self):
        self.assertAlmostEqual(bf.db_to_linear(-30), 1e-3)
        self.assertAlmostEqual(bf.linear_to_db(100.0), 20.0)
        self.assertAlmostEqual(bf.dbm_to_watts(0), 1e-3)
        self.assertAlmostEqual(bf.dbm_to_watts(-90), 1e-12)

    def test_rate(self):
        self.assertAlmostEqual(bf.achievable_rate(3.0), 2.0)
        self.assertEqual(bf.achievable_rate(0.0), 0.0)


class OptimalPhaseTestCase(unittest.TestCase):
    def test_aligns_coefficients(self):
        rng = np.random.default_rng(0)
        c = rng.standard_normal(6) + 1j * rng.standard_normal(6)
        theta = bf.optimal_phase(c)
        np.testing.assert_allclose(np.abs(theta), 1.0)
        self.assertAlmostEqual(abs(c @ theta), np.sum(np.abs(c)))

    def test_zero_entries_get_phase_zero(self):
        theta = bf.optimal_phase([0, 1j])
        self.assertEqual(theta[0], 1.0)
        self.assertAlmostEqual(theta[1], -1j)

    def test_double_reflection_beats_random(self):
        rng = np.random.default_rng(1)
        v1 = rng.standard_normal(5) + 1j * rng.standard_normal(5)
        v2 = rng.standard_normal(4) + 1j * rng.standard_normal(4)
        phi1, phi2 = bf.optimal_double_reflection_phases(v1, v2)
        best = bf.double_reflection_gain(0.5, v1, v2, phi1, phi2)
        self.assertAlmostEqual(best, 0.25 * np.sum(np.abs(v1)) ** 2 * np.sum(np.abs(v2)) ** 2)
        for _ in range(100):
            r1 = np.exp(2j * math.pi * rng.random(5))
            r2 = np.exp(2j * math.pi * rng.random(4))
            self.assertLessEqual(bf.double_reflection_gain(0.5, v1, v2, r1, r2), best * (1 + 1e-12))


class ClosedFormTestCase(unittest.TestCase):
    def test_realized_gain_matches_closed_form(self):
        scene = build_scene(chain_config())
        channels = synthesize_channels(scene)
        beta = scene.constants.beta
        for path in [(1,), (1, 2), (2,)]:
            nodes = [0] + list(path) + [3]
            distances = [scene.distance(i, j) for i, j in zip(nodes, nodes[1:])]
            solution = bf.realize_path(channels, path, 1)
            expected = bf.closed_form_path_gain(len(path), 4, 4, beta, distances)
            self.assertAlmostEqual(solution.achieved_gains[1] / expected, 1.0, places=9)

    def test_random_geometries(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            scene = build_scene(random_geometry(rng))
            channels = synthesize_channels(scene)
            n = int(rng.integers(1, 4))
            path = tuple(range(1, n + 1))
            nodes = [0] + list(path) + [scene.user_node(1)]
            distances = [scene.distance(i, j) for i, j in zip(nodes, nodes[1:])]
            counts = [scene.element_count(j) for j in path]
            expected = bf.closed_form_path_gain(n, counts, scene.bs_array.size,
                                                scene.constants.beta, distances)
            gain = bf.realize_path(channels, path, 1).achieved_gains[1]
            self.assertLess(abs(gain - expected) / expected, 1e-9)

    def test_scaling_law(self):
        # doubling M per IRS adds 6 dB per reflection
        beta = 1e-3
        one = bf.closed_form_path_gain(2, 100, 4, beta, [10, 20, 5])
        two = bf.closed_form_path_gain(2, 200, 4, beta, [10, 20, 5])
        self.assertAlmostEqual(two / one, 16.0)

    def test_distance_count(self):
        self.assertRaises(ValueError, bf.closed_form_path_gain, 2, 4, 4, 1e-3, [1.0, 2.0])

    def test_shared_beam_is_unit_norm(self):
        scene = build_scene(chain_config())
        channels = synthesize_channels(scene)
        w = bf.bs_mrt_to_first_irs(channels.link(0, 1).tx)
        self.assertAlmostEqual(np.linalg.norm(w), 1.0)
        self.assertRaises(ValueError, bf.bs_mrt_to_first_irs, np.zeros(4))

    def test_multi_hop_needs_los(self):
        scene = build_scene(chain_config({'kappa_db': 5}))
        channels = synthesize_channels(scene)
        config = chain_config()
        config['constants'] = {}
        blocked = synthesize_channels(build_scene(dict(config, obstacles=[
            {'min': [24, -0.5, -1], 'max': [26, 0.5, 1]},
            {'min': [14, -1, -1], 'max': [16, 1, 1]}])))
        self.assertEqual(set(bf.multi_hop_phases(channels, (1, 2), 1)), {1, 2})
        self.assertRaises(SimulationError, bf.multi_hop_phases, blocked, (1, 2), 1)


class DirectLinkTestCase(unittest.TestCase):
    def setUp(self):
        config = chain_config()
        config['obstacles'] = []
        config['constants'] = {}
        self.scene = build_scene(config)
        self.channels = synthesize_channels(self.scene)

    def test_numeric_matches_closed_form(self):
        scene = self.scene
        f = self.channels.direct(1)
        distances = [scene.distance(0, 1), scene.distance(1, 3)]
        expected = bf.path_gain_with_direct(1, 4, 4, scene.constants.beta, distances, f,
                                            self.channels.link(0, 1).tx)
        solution = bf.realize_path_with_direct(self.channels, (1,), 1)
        self.assertAlmostEqual(solution.achieved_gains[1] / expected, 1.0, places=9)
        self.assertTrue(solution.phases.is_unit_modulus())

    def test_direct_link_helps(self):
        alone = bf.realize_path(self.channels, (1,), 1).achieved_gains[1]
        combined = bf.realize_path_with_direct(self.channels, (1,), 1).achieved_gains[1]
        self.assertGreaterEqual(combined, alone)

    def test_common_phase(self):
        a_d = 2.0 * np.exp(0.3j)
        a_s = 1.5 * np.exp(1.1j)
        theta = bf.common_phase_combine(a_s, a_d)
        self.assertAlmostEqual(np.angle(np.exp(1j * theta) * a_s), np.angle(np.exp(2j * theta) * a_d))
        self.assertEqual(bf.common_phase_combine(a_s, 0), 0.0)


class AlternatingOptimizationTestCase(unittest.TestCase):
    def setUp(self):
        self.scene = build_scene(chain_config({'kappa_db': 0, 'blocked_links': 'cut'}))
        self.channels = synthesize_channels(self.scene, seed=9)

    def test_monotone(self):
        solution = bf.ao_joint_beamforming(self.channels, 1, init='random',
                                           rng=np.random.default_rng(3))
        history = solution.history
        for before, after in zip(history, history[1:]):
            self.assertGreaterEqual(after, before * (1 - 1e-12))
        self.assertTrue(solution.phases.is_unit_modulus())

    def test_gain_is_achieved(self):
        solution = bf.ao_joint_beamforming(self.channels, 1)
        h = effective_channel(self.channels, 1, solution.phases)
        w = solution.bs_beams[1]
        self.assertAlmostEqual(abs(h @ w) ** 2 / solution.achieved_gains[1], 1.0, places=9)

    def test_beats_random_phases_on_average(self):
        solution = bf.ao_joint_beamforming(self.channels, 1)
        rng = np.random.default_rng(4)
        gains = []
        for _ in range(50):
            phases = PhaseConfig(self.scene, {j: np.exp(2j * math.pi * rng.random(4)) for j in (1, 2)})
            h = effective_channel(self.channels, 1, phases)
            gains.append(float(np.vdot(h, h).real))
        self.assertGreater(solution.achieved_gains[1], np.mean(gains))

    def test_matches_closed_form_on_los_path(self):
        channels = synthesize_channels(build_scene(chain_config()))
        closed = bf.realize_path(channels, (1, 2), 1).achieved_gains[1]
        solution = bf.ao_joint_beamforming(channels, 1, paths=[(1, 2)])
        self.assertAlmostEqual(solution.achieved_gains[1] / closed, 1.0, places=6)

    def test_no_single_irs_change_helps(self):
        # one element per IRS: every coordinate can be scanned on a grid
        config = chain_config({'kappa_db': 0, 'blocked_links': 'cut'})
        for entry in config['irs']:
            entry['M0'] = 1
        scene = build_scene(config)
        channels = synthesize_channels(scene, seed=2)
        solution = bf.ao_joint_beamforming(channels, 1, max_iters=200)
        for j in (1, 2):
            for t in np.exp(2j * math.pi * np.arange(64) / 64):
                phases = solution.phases.copy()
                phases[j] = [t]
                h = effective_channel(channels, 1, phases)
                self.assertLessEqual(float(np.vdot(h, h).real), solution.achieved_gains[1] * (1 + 1e-3))


class ReceiverTestCase(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(6)
        self.H = (rng.standard_normal((6, 3)) + 1j * rng.standard_normal((6, 3))) / math.sqrt(2)

    def test_zf_nulls_interference(self):
        result = bf.linear_receivers(self.H, 1e-3, kind='zf')
        response = result.beams.conj() @ self.H
        np.testing.assert_allclose(response, np.eye(3), atol=1e-9)
        self.assertFalse(result.rank_deficient)
        self.assertEqual(result.rank, 3)

    def test_mmse_at_least_zf(self):
        zf = bf.linear_receivers(self.H, 0.5, kind='zf')
        mmse = bf.linear_receivers(self.H, 0.5, kind='mmse')
        self.assertTrue(np.all(mmse.sinrs >= zf.sinrs * (1 - 1e-9)))

    def test_rank_deficient(self):
        H = np.outer(np.arange(1, 7), np.ones(3)).astype(complex)
        zf = bf.linear_receivers(H, 1.0, kind='zf')
        mmse = bf.linear_receivers(H, 1.0, kind='mmse')
        self.assertTrue(zf.rank_deficient)
        self.assertEqual(zf.rank, 1)
        self.assertGreaterEqual(mmse.min_rate, zf.min_rate - 1e-9)

    def test_mrt(self):
        result = bf.linear_receivers(self.H, 1.0, kind='mrt')
        np.testing.assert_allclose(np.linalg.norm(result.beams, axis=1), 1.0)

    def test_bad_input(self):
        self.assertRaises(DimensionError, bf.linear_receivers, np.ones(3), 1.0)
        self.assertRaises(ValueError, bf.linear_receivers, self.H, 1.0, 1.0, 'svd')

    def test_rank_check(self):
        G2 = np.ones((3, 4))
        Q = np.ones((4, 6))
        report = bf.channel_rank_gain_check(G2, Q, np.ones((6, 3)), self.H)
        self.assertEqual(report['rank_single'], 1)
        self.assertEqual(report['rank_double'], 3)
        self.assertEqual(report['gain'], 2)
        self.assertEqual(report['bound'], 1)
        self.assertTrue(report['holds'])


class DownlinkTestCase(unittest.TestCase):
    def test_single_user_sinr(self):
        scene = build_scene(chain_config())
        channels = synthesize_channels(scene)
        solution = bf.realize_path(channels, (1, 2), 1)
        sinrs = bf.downlink_sinrs(channels, [1], solution.phases, solution.bs_beams, 1e-3, 1e-12,
                                  los_only=True)
        h = effective_channel(channels, 1, solution.phases, los_only=True)
        self.assertAlmostEqual(sinrs[1] / (1e-3 * abs(h @ solution.bs_beams[1]) ** 2 / 1e-12), 1.0)

    def test_cascaded_row_length(self):
        scene = build_scene(chain_config())
        channels = synthesize_channels(scene)
        row = cascaded_path_channel(channels, (2,), PhaseConfig(scene), 1)
        self.assertEqual(row.shape, (4,))
