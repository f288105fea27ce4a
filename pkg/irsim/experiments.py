'''
Scenario runners producing the CSV result tables.

Every scenario is a function of an ExperimentConfig. Monte-Carlo trials
are independent tasks mapped over a worker pool; each trial draws its
channels from its own seed substream, so results do not depend on the
number of workers.
'''

import csv
import io
import logging
import math
import multiprocessing
import os
from collections import namedtuple

import numpy as np

from irsim.beamforming import (achievable_rate, channel_rank_gain_check,
                               common_phase_combine, dbm_to_watts,
                               linear_receivers, linear_to_db, mrt,
                               multi_hop_phases, realize_path,
                               ao_joint_beamforming)
from irsim.channel import (PhaseConfig, cascaded_path_channel,
                           effective_channel, synthesize_channels)
from irsim.errors import ConfigError, Infeasible
from irsim.estimation import (ls_estimate_cascaded_siso, nmse,
                              overhead_benchmark_siso_general,
                              overhead_double_irs_single_user,
                              overhead_multi_user_extra,
                              simulate_siso_observations,
                              siso_cascaded_channel, siso_training_design)
from irsim.routing import (RoutingSolution, interference_audit,
                           optimal_multi_route, optimal_single_route,
                           routes_to_json, unconstrained_multi_route)
from irsim.scene import (build_los_graph, load_scene, shipped_scene_path,
                         with_irs_elements, with_updates)
from irsim.training import (evaluate_beams, scene_codebooks,
                            sequential_search, train_distributed,
                            training_cost)

logger = logging.getLogger(__name__)

SCENARIOS = ('fig6', 'fig7', 'fig8', 'fig9', 'fig11', 'fig13', 'nmse', 'custom')

# M0 above this only runs with full_scale
DESK_M0_CAP = 24

DEFAULT_TRIALS = 100
# trial counts used unless full_scale or an explicit count is given
DESK_TRIALS = {'fig13': 20}

FIG7_M0 = 20
FIG13_M0 = 24

DEFAULT_SCENES = {
    'fig6': 'double_irs',
    'fig7': 'double_irs',
    'fig9': 'indoor8',
    'fig11': 'indoor8',
    'fig13': 'indoor8',
    'nmse': 'double_irs',
}


class ExperimentConfig():
    def __init__(self, scenario, scene=None, sweep=None, trials=None, seed=0, out=None,
                 full_scale=False, workers=None):
        if scenario not in SCENARIOS:
            raise ConfigError("unknown scenario %r, expected one of %s" % (scenario, ', '.join(SCENARIOS)))
        if trials is None:
            trials = DEFAULT_TRIALS if full_scale else DESK_TRIALS.get(scenario, DEFAULT_TRIALS)
        if trials < 1:
            raise ConfigError("trials must be at least 1, got %d" % trials)
        if sweep is not None and len(sweep) == 0:
            raise ConfigError("the sweep range of %s is empty" % scenario)
        if seed < 0:
            raise ConfigError("seed must be non-negative, got %d" % seed)
        self.scenario = scenario
        self.scene = scene
        self.sweep = list(sweep) if sweep is not None else None
        self.trials = trials
        self.seed = seed
        self.out = out
        self.full_scale = full_scale
        self.workers = workers

    def load_scene(self):
        """The configured scene, or the one shipped for the scenario."""
        if self.scene is None:
            if self.scenario not in DEFAULT_SCENES:
                raise ConfigError("scenario %s needs a scene" % self.scenario)
            return load_scene(shipped_scene_path(DEFAULT_SCENES[self.scenario]))
        if isinstance(self.scene, (str, os.PathLike)):
            return load_scene(self.scene)
        return self.scene

    def sweep_or(self, default):
        return self.sweep if self.sweep is not None else list(default)


ResultRow = namedtuple('ResultRow', ['scenario', 'sweep_name', 'sweep_value', 'metric',
                                     'mean', 'stderr', 'trials', 'seed'])

CSV_FIELDS = ResultRow._fields


def _number(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return '%.12g' % value


class ResultTable():
    """Aggregated metrics; rows are written sorted so that output is stable."""

    def __init__(self, scenario, seed):
        self.scenario = scenario
        self.seed = seed
        self.rows = []
        self.artifacts = {}

    def add(self, sweep_name, sweep_value, metric, samples):
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            return
        mean = float(np.mean(samples))
        stderr = float(np.std(samples, ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else 0.0
        self.rows.append(ResultRow(self.scenario, sweep_name, sweep_value, metric,
                                   mean, stderr, int(samples.size), self.seed))

    def sorted_rows(self):
        return sorted(self.rows, key=lambda r: (r.scenario, r.sweep_name, r.metric, float(r.sweep_value)))

    def mean(self, metric, sweep_value):
        for row in self.rows:
            if row.metric == metric and row.sweep_value == sweep_value:
                return row.mean
        raise KeyError((metric, sweep_value))

    def series(self, metric):
        return [(r.sweep_value, r.mean) for r in self.sorted_rows() if r.metric == metric]

    def metrics(self):
        return sorted({r.metric for r in self.rows})

    def to_csv(self, target=None):
        """Write the table to a path (or return it as a string)."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator='\n')
        writer.writerow(CSV_FIELDS)
        for row in self.sorted_rows():
            writer.writerow([row.scenario, row.sweep_name, _number(row.sweep_value), row.metric,
                             _number(row.mean), _number(row.stderr), row.trials, row.seed])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, 'w', newline='') as f:
            f.write(text)
        return text


def worker_count(requested=None):
    """Worker processes to use, capped by IRS_SIM_THREADS."""
    count = requested or os.cpu_count() or 1
    cap = os.environ.get('IRS_SIM_THREADS')
    if cap is not None:
        try:
            cap = int(cap)
        except ValueError:
            raise ConfigError("IRS_SIM_THREADS must be an integer, got %r" % cap)
        if cap < 1:
            raise ConfigError("IRS_SIM_THREADS must be at least 1, got %d" % cap)
        count = min(count, cap)
    return max(1, count)


class ExperimentRunner():
    log_prefix = "irsim"

    def __init__(self, config):
        self.config = config
        self.workers = worker_count(config.workers)
        self.logger = self.get_logger()

        self.msg("irsim settings:")
        self.msg("  - Scenario %s", config.scenario)
        self.msg("  - Scene %s", config.scene if config.scene is not None
                 else DEFAULT_SCENES.get(config.scenario, 'none'))
        self.msg("  - %d trials, seed %d", config.trials, config.seed)
        if config.sweep is not None:
            self.msg("  - Sweep %s", config.sweep)
        if config.full_scale:
            self.msg("  - Full-scale parameters")
        self.msg("  - %d worker(s)", self.workers)

    @staticmethod
    def get_logger():
        return logging.getLogger("%s.%s" % (
            ExperimentRunner.log_prefix,
            ExperimentRunner.__name__))

    def msg(self, *args, **kwargs):
        """ Output message as info """
        self.logger.log(logging.INFO, *args, **kwargs)

    def vmsg(self, *args, **kwargs):
        """ Same as msg() but as debug. """
        self.logger.log(logging.DEBUG, *args, **kwargs)

    def warn(self, *args, **kwargs):
        """ Same as msg() but as warning. """
        self.logger.log(logging.WARNING, *args, **kwargs)

    def map(self, func, tasks):
        """Ordered map over a process pool (in-process for one worker)."""
        tasks = list(tasks)
        if self.workers <= 1 or len(tasks) <= 1:
            return [func(task) for task in tasks]
        with multiprocessing.Pool(min(self.workers, len(tasks))) as pool:
            return pool.map(func, tasks)

    def run(self):
        table = RUNNERS[self.config.scenario](self.config, self)
        if self.config.out:
            table.to_csv(self.config.out)
            self.msg("Wrote %d rows to %s", len(table.rows), self.config.out)
        return table


def _trial_rng(seed, trial, tag):
    return np.random.default_rng(np.random.SeedSequence([seed, trial, tag]))


def surface_shape(M):
    """Most square (Mh, Mv) grid holding M elements, Mh >= Mv."""
    Mv = max(d for d in range(1, int(math.isqrt(M)) + 1) if M % d == 0)
    return [M // Mv, Mv]


def _rate(scene, gain):
    return achievable_rate(scene.constants.tx_power * gain / scene.constants.noise_power)


def _single_pair_gain(channels, k=1):
    """Two single-reflection links, each with its own closed-form phases, combined coherently."""
    thetas = {}
    for irs in (1, 2):
        thetas.update(multi_hop_phases(channels, (irs,), k))
    phases = PhaseConfig(channels.scene, thetas)
    rows = [cascaded_path_channel(channels, (irs,), phases, k) for irs in (1, 2)]
    rotation = np.exp(1j * np.angle(np.vdot(rows[1], rows[0])))
    h = rows[0] + rotation * rows[1]
    return float(np.vdot(h, h).real)


def _combined_gain(channels, k=1):
    """Double-reflection design plus a common phase on both IRSs aligning the single links."""
    phases = PhaseConfig(channels.scene, multi_hop_phases(channels, (1, 2), k))
    w = mrt(cascaded_path_channel(channels, (1, 2), phases, k))
    a_d = cascaded_path_channel(channels, (1, 2), phases, k) @ w
    a_s = sum(cascaded_path_channel(channels, (irs,), phases, k) @ w for irs in (1, 2))
    theta = common_phase_combine(a_s, a_d)
    return float(abs(np.exp(1j * theta) * a_s + np.exp(2j * theta) * a_d) ** 2)


RAYLEIGH_INTER_IRS = {(1, 2): {'kappa_db': -math.inf, 'alpha': 2.5}}


def _fig6_rayleigh_trial(task):
    scene, seed, trial = task
    channels = synthesize_channels(scene, seed=seed, realization=trial, overrides=RAYLEIGH_INTER_IRS)
    solution = ao_joint_beamforming(channels, 1, irs_ids=[1, 2], paths=[(1, 2)], max_iters=50)
    return _rate(scene, solution.achieved_gains[1])


def run_fig6(config, runner=None):
    """Rate of the double-reflection link against two single-reflection links."""
    runner = runner or ExperimentRunner(config)
    base = config.load_scene()
    table = ResultTable('fig6', config.seed)
    totals = config.sweep_or([100, 200, 400, 800, 1600] if config.full_scale else [100, 200, 400, 800])
    for total in totals:
        scene = with_irs_elements(base, surface_shape(int(total) // 2))
        channels = synthesize_channels(scene, seed=config.seed)
        double = realize_path(channels, (1, 2), 1).achieved_gains[1]
        table.add('total_elements', total, 'rate_double_los', [_rate(scene, double)])
        table.add('total_elements', total, 'rate_single_los', [_rate(scene, _single_pair_gain(channels))])
        table.add('total_elements', total, 'rate_combined_los', [_rate(scene, _combined_gain(channels))])
        rates = runner.map(_fig6_rayleigh_trial, [(scene, config.seed, t) for t in range(config.trials)])
        table.add('total_elements', total, 'rate_double_rayleigh', rates)
        runner.vmsg("fig6: %d elements done", total)
    return table


def fig7_overrides(scene):
    """Scattered BS-IRS 1 side, LoS BS-IRS 2 side."""
    overrides = {(0, 1): {'kappa_db': -math.inf}, (1, 2): {'kappa_db': -math.inf}}
    for k in range(1, scene.num_users + 1):
        overrides[(1, scene.user_node(k))] = {'kappa_db': -math.inf}
    return overrides


FIG7_PATHS = [(1,), (2,), (1, 2)]


def fig7_phases(channels, k=1):
    """IRS 2 aligned on its LoS link to user k, then AO over both surfaces."""
    init = PhaseConfig(channels.scene, multi_hop_phases(channels, (2,), k))
    solution = ao_joint_beamforming(channels, k, irs_ids=[1, 2], init=init, tol=1e-4,
                                    max_iters=20, paths=FIG7_PATHS)
    return solution.phases


def _fig7_trial(task):
    scene, seed, trial, powers_dbm = task
    channels = synthesize_channels(scene, seed=seed, realization=trial, overrides=fig7_overrides(scene))
    phases = fig7_phases(channels)
    users = range(1, scene.num_users + 1)
    H_double = np.array([effective_channel(channels, k, phases, paths=FIG7_PATHS) for k in users]).T
    H_single = np.array([effective_channel(channels, k, phases, paths=[(2,)]) for k in users]).T
    G2 = np.array([channels.matrix(2, scene.user_node(k))[0] for k in users])
    ranks = channel_rank_gain_check(G2, channels.matrix(0, 2), H_single, H_double)

    noise = scene.constants.noise_power
    result = {'rank_double': ranks['rank_double'], 'rank_single': ranks['rank_single']}
    for p in powers_dbm:
        power = dbm_to_watts(p)
        result[p] = {
            'min_rate_double_zf': linear_receivers(H_double, noise, power, 'zf').min_rate,
            'min_rate_double_mmse': linear_receivers(H_double, noise, power, 'mmse').min_rate,
            'min_rate_single_zf': linear_receivers(H_single, noise, power, 'zf').min_rate,
            'min_rate_single_mmse': linear_receivers(H_single, noise, power, 'mmse').min_rate,
        }
    return result


def run_fig7(config, runner=None):
    """Uplink max-min rate versus user power, double-IRS against the user-side IRS 2 alone."""
    runner = runner or ExperimentRunner(config)
    scene = with_irs_elements(config.load_scene(), FIG7_M0)
    powers = config.sweep_or([-10, -5, 0, 5, 10, 15, 20, 25, 30])
    results = runner.map(_fig7_trial, [(scene, config.seed, t, powers) for t in range(config.trials)])
    table = ResultTable('fig7', config.seed)
    for p in powers:
        for metric in ('min_rate_double_zf', 'min_rate_double_mmse', 'min_rate_single_zf', 'min_rate_single_mmse'):
            table.add('power_dbm', p, metric, [r[p][metric] for r in results])
        table.add('power_dbm', p, 'rank_double', [r['rank_double'] for r in results])
        table.add('power_dbm', p, 'rank_single', [r['rank_single'] for r in results])
    return table


def run_fig8(config, runner=None):
    """Training overhead versus BS antennas."""
    M, K = 400, 5
    table = ResultTable('fig8', config.seed)
    for n_b in config.sweep_or([10, 20, 40, 80, 160, 320, 400, 600, 800, 1000]):
        n_b = int(n_b)
        single = overhead_double_irs_single_user(M, n_b)
        table.add('bs_antennas', n_b, 'overhead_proposed_single_user', [single])
        table.add('bs_antennas', n_b, 'overhead_proposed_multi_user',
                  [single + overhead_multi_user_extra(M, n_b, K)])
        table.add('bs_antennas', n_b, 'overhead_benchmark_single_user', [overhead_benchmark_siso_general(M)])
        table.add('bs_antennas', n_b, 'overhead_benchmark_multi_user', [K * overhead_benchmark_siso_general(M)])
    return table


def _audit_trial(task):
    scene, seed, trial, sequences = task
    channels = synthesize_channels(scene, seed=seed, realization=trial)
    report = interference_audit(channels, sequences)
    worst = max(entry['interference'] for entry in report.values())
    return linear_to_db(max(worst, 1e-30) / scene.constants.noise_power)


def _m0_values(config, default):
    values = [int(v) for v in config.sweep_or(default)]
    if not config.full_scale:
        capped = [v for v in values if v <= DESK_M0_CAP]
        if len(capped) < len(values):
            logger.warning("dropping M0 above %d, use full scale to run them" % DESK_M0_CAP)
        values = capped
    if not values:
        raise ConfigError("no M0 value left to run")
    return values


def run_fig9_11(config, runner=None):
    """Single-user routes over M0 and joint routes with and without path separation."""
    runner = runner or ExperimentRunner(config)
    base = config.load_scene()
    table = ResultTable(config.scenario if config.scenario in ('fig9', 'fig11') else 'fig9', config.seed)
    routes = table.artifacts.setdefault('routes', {})

    for m0 in _m0_values(config, [12, 16, 20, 24, 28, 32]):
        scene = with_irs_elements(base, m0)
        route = optimal_single_route(scene, build_los_graph(scene, 1))
        routes['user1_M0_%d' % m0] = routes_to_json(RoutingSolution({1: route}, True))
        table.add('M0', m0, 'user1_hops', [route.hops])
        table.add('M0', m0, 'user1_gain_db', [route.gain_db])
        runner.msg("M0=%d: user 1 routed over %s", m0, list(route.irs_sequence))

    if base.num_users < 2:
        return table

    m0 = 20
    scene = with_irs_elements(base, m0)
    free = unconstrained_multi_route(scene)
    routes['joint_unconstrained'] = routes_to_json(free)
    table.add('M0', m0, 'unconstrained_min_gain_db', [linear_to_db(free.objective)])
    table.add('M0', m0, 'unconstrained_separation_ok', [int(free.separation_ok)])
    try:
        separated = optimal_multi_route(scene)
    except Infeasible as e:
        runner.warn("separated routing infeasible: %s", e.msg)
        return table
    routes['joint_separated'] = routes_to_json(separated)
    table.add('M0', m0, 'separated_min_gain_db', [linear_to_db(separated.objective)])

    for name, solution in (('unconstrained', free), ('separated', separated)):
        tasks = [(scene, config.seed, t, solution) for t in range(config.trials)]
        table.add('M0', m0, '%s_interference_db' % name, runner.map(_audit_trial, tasks))
    return table


def _fig13_trial(task):
    scene, seed, trial, k = task
    channels = synthesize_channels(scene, seed=seed, realization=trial)
    codebooks = scene_codebooks(scene, D=32, irs_ids=sorted(scene.region(k)))
    global_btt, solution, distributed = train_distributed(channels, codebooks, users=[k])
    route = solution.paths[k].irs_sequence
    # both schemes are scored on the routed path alone
    paths = {k: [route]}
    route_books = dict({j: codebooks[j] for j in route}, bs=codebooks['bs'])
    _, _, gains = evaluate_beams(channels, [k], distributed.phases(scene, codebooks),
                                 distributed.bs_beams(codebooks), paths=paths)
    sequential = sequential_search(channels, route_books, users=[k], init=distributed, paths=paths)
    _, _, seq_gains = evaluate_beams(channels, [k], sequential.phases(scene, route_books),
                                     sequential.bs_beams(route_books), paths=paths)
    cost = training_cost(global_btt)
    return {
        'distributed_gain_db': linear_to_db(gains[k]),
        'sequential_gain_db': linear_to_db(seq_gains[k]),
        'online_measurements': cost['online'],
        'offline_measurements': cost['offline'],
        'sequential_evaluations': sequential.evaluations,
        'hops': len(route),
    }


def run_fig13(config, runner=None):
    """Distributed BTT training against sequential search over the Rician factor.

    Sequential search starts from the distributed beams and sweeps the
    nodes of the distributed route only.
    """
    runner = runner or ExperimentRunner(config)
    base = with_irs_elements(config.load_scene(), FIG13_M0)
    table = ResultTable('fig13', config.seed)
    for kappa_db in config.sweep_or([0, 5, 10, 15, 20, math.inf]):
        scene = with_updates(base, constants={'kappa_db': None if kappa_db == math.inf else kappa_db})
        results = runner.map(_fig13_trial, [(scene, config.seed, t, 1) for t in range(config.trials)])
        for metric in ('distributed_gain_db', 'sequential_gain_db', 'online_measurements',
                       'offline_measurements', 'sequential_evaluations', 'hops'):
            table.add('kappa_db', kappa_db, metric, [r[metric] for r in results])
        table.add('kappa_db', kappa_db, 'gap_db',
                  [r['sequential_gain_db'] - r['distributed_gain_db'] for r in results])
        runner.vmsg("fig13: kappa %s dB done", kappa_db)
    return table


def _nmse_trial(task):
    cascaded, patterns, noise, seed, trial = task
    rng = _trial_rng(seed, trial, 13)
    observations = simulate_siso_observations(cascaded, patterns, noise, rng)
    return nmse(ls_estimate_cascaded_siso(patterns, observations), cascaded)


def run_nmse(config, runner=None):
    """NMSE of the least-squares SISO cascaded estimate versus pilot noise power."""
    runner = runner or ExperimentRunner(config)
    scene = with_updates(with_irs_elements(config.load_scene(), [4, 2]), bs_antennas=1)
    channels = synthesize_channels(scene, seed=config.seed)
    cascaded = siso_cascaded_channel(channels.matrix(0, 1)[:, 0], channels.matrix(1, 2),
                                     channels.matrix(2, scene.user_node(1))[0])
    patterns = siso_training_design(scene.element_count(1), scene.element_count(2))
    signal = np.mean(np.abs(cascaded) ** 2)
    table = ResultTable('nmse', config.seed)
    for snr_db in config.sweep_or([0, 10, 20, 30]):
        noise = signal / 10 ** (snr_db / 10.0)
        tasks = [(cascaded, patterns, noise, config.seed, t) for t in range(config.trials)]
        table.add('pilot_snr_db', snr_db, 'nmse', runner.map(_nmse_trial, tasks))
    table.add('pilot_snr_db', 0, 'pilots', [len(patterns)])
    return table


def run_custom(config, runner=None):
    """Routing summary of an arbitrary scene: every user alone, then jointly."""
    runner = runner or ExperimentRunner(config)
    if config.scene is None:
        raise ConfigError("the custom scenario needs --config")
    scene = config.load_scene()
    table = ResultTable('custom', config.seed)
    for k in range(1, scene.num_users + 1):
        route = optimal_single_route(scene, build_los_graph(scene, k))
        table.add('user', k, 'hops', [route.hops])
        table.add('user', k, 'gain_db', [route.gain_db])
    if scene.num_users > 1:
        try:
            joint = optimal_multi_route(scene)
            table.add('user', 0, 'separated_min_gain_db', [linear_to_db(joint.objective)])
            table.artifacts['routes'] = routes_to_json(joint)
        except Infeasible as e:
            runner.warn("separated routing infeasible: %s", e.msg)
    return table


RUNNERS = {
    'fig6': run_fig6,
    'fig7': run_fig7,
    'fig8': run_fig8,
    'fig9': run_fig9_11,
    'fig11': run_fig9_11,
    'fig13': run_fig13,
    'nmse': run_nmse,
    'custom': run_custom,
}


def run_scenario(config):
    return ExperimentRunner(config).run()
