'''
Passive and active beamforming for multi-IRS links.

Closed forms cover pure-LoS reflection paths, the alternating
optimization covers arbitrary double-IRS channels, and the linear
receivers cover the multi-user uplink.
'''

import logging
import math

import numpy as np

from irsim.channel import (PhaseConfig, affine_in_irs, cascaded_path_channel,
                           effective_channel)
from irsim.errors import DimensionError, SimulationError

logger = logging.getLogger(__name__)

# singular values below RANK_TOL * largest count as zero
RANK_TOL = 1e-9


def db_to_linear(db):
    return 10.0 ** (db / 10.0)


def linear_to_db(value):
    return 10.0 * math.log10(value)


def dbm_to_watts(dbm):
    return 10.0 ** ((dbm - 30.0) / 10.0)


def achievable_rate(snr):
    return float(np.log2(1.0 + snr))


def optimal_phase(coefficients):
    """Unit-modulus vector maximizing |coefficients @ theta|; zero entries get phase 0."""
    coefficients = np.asarray(coefficients, dtype=complex)
    theta = np.ones(coefficients.shape, dtype=complex)
    nonzero = coefficients != 0
    theta[nonzero] = np.exp(-1j * np.angle(coefficients[nonzero]))
    return theta


class BeamSolution():
    def __init__(self, phases, bs_beams=None, achieved_gains=None, sinrs=None,
                 converged=True, iterations=0, history=None):
        self.phases = phases
        self.bs_beams = bs_beams or {}
        self.achieved_gains = achieved_gains or {}
        self.sinrs = sinrs or {}
        self.converged = converged
        self.iterations = iterations
        self.history = history or []

    def to_dict(self):
        return {
            'phases': self.phases.to_dict(),
            'bs_beams': {str(k): [[float(v.real), float(v.imag)] for v in w]
                         for k, w in sorted(self.bs_beams.items())},
            'achieved_gains': {str(k): float(g) for k, g in sorted(self.achieved_gains.items())},
            'sinrs': {str(k): float(s) for k, s in sorted(self.sinrs.items())},
            'converged': self.converged,
        }


def optimal_double_reflection_phases(v1, v2):
    return optimal_phase(v1), optimal_phase(v2)


def double_reflection_gain(rho, v1, v2, phi1, phi2):
    return float(abs(rho * (np.dot(v1, phi1)) * (np.dot(v2, phi2))) ** 2)


def multi_hop_phases(channels, path, k):
    """Cooperative phases aligning every hop of a pure-LoS path.

    Each IRS multiplies its arrival response from the previous node by
    its departure response towards the next one; the conjugate of that
    product brings every element to the same phase.
    """
    scene = channels.scene
    nodes = [0] + list(path) + [scene.user_node(k)]
    thetas = {}
    for n, irs in enumerate(path, 1):
        incoming = channels.link(nodes[n - 1], irs)
        outgoing = channels.link(irs, nodes[n + 1])
        if not (incoming.has_los and outgoing.has_los):
            raise SimulationError("path %s has no LoS decomposition around IRS %d" % (list(path), irs))
        thetas[irs] = optimal_phase(incoming.rx * outgoing.tx)
    return thetas


def bs_mrt_to_first_irs(response):
    response = np.asarray(response, dtype=complex)
    norm = np.linalg.norm(response)
    if norm == 0:
        raise ValueError("MRT needs a nonzero array response")
    return np.conj(response) / norm


def mrt(h):
    norm = np.linalg.norm(h)
    if norm == 0:
        return np.ones(h.shape, dtype=complex) / math.sqrt(h.shape[0])
    return np.conj(h) / norm


def _reflection_amplitude(n, M):
    """Product of the element counts along the path; M is a count or one per IRS."""
    counts = np.broadcast_to(np.asarray(M, dtype=float), (n,))
    return float(np.prod(counts))


def closed_form_path_gain(n, M, N_B, beta, distances):
    distances = list(distances)
    if len(distances) != n + 1:
        raise ValueError("an %d-reflection path has %d hops, got %d distances" % (n, n + 1, len(distances)))
    return float(_reflection_amplitude(n, M) ** 2 * N_B * beta ** (n + 1) *
                 np.prod(np.asarray(distances, dtype=float) ** -2.0))


def path_gain_with_direct(n, M, N_B, beta, distances, f, bs_response):
    """Coherent combination of one LoS reflection path with the direct link."""
    f = np.asarray(f, dtype=complex)
    distances = np.asarray(list(distances), dtype=float)
    cross = (2.0 * _reflection_amplitude(n, M) * beta ** ((n + 1) / 2.0) * np.prod(1.0 / distances) *
             abs(np.vdot(bs_response, f)))
    return float(np.vdot(f, f).real + closed_form_path_gain(n, M, N_B, beta, distances) + cross)


def realize_path(channels, path, k):
    """Closed-form phases plus MRT towards the first IRS, no direct link."""
    thetas = multi_hop_phases(channels, path, k)
    phases = PhaseConfig(channels.scene, thetas)
    w = bs_mrt_to_first_irs(channels.link(0, path[0]).tx)
    h = cascaded_path_channel(channels, path, phases, k)
    return BeamSolution(phases, {k: w}, {k: float(abs(h @ w) ** 2)})


def realize_path_with_direct(channels, path, k):
    """Numeric counterpart of path_gain_with_direct.

    The first IRS gets an extra common phase that lines the reflected
    signal up with the direct one, then the BS applies MRT.
    """
    thetas = multi_hop_phases(channels, path, k)
    phases = PhaseConfig(channels.scene, thetas)
    f = channels.direct(k)
    reflected = cascaded_path_channel(channels, path, phases, k)
    rotation = np.exp(1j * np.angle(np.vdot(reflected, f)))
    phases[path[0]] = phases[path[0]] * rotation
    h = f + rotation * reflected
    w = mrt(h)
    return BeamSolution(phases, {k: w}, {k: float(abs(h @ w) ** 2)})


def common_phase_combine(a_s, a_d):
    if a_d == 0:
        return 0.0
    return float(np.angle(a_s / a_d))


def _coordinate_ascent(theta, c, offset):
    """Per-element phase ascent of |offset + c @ theta|."""
    theta = theta.copy()
    total = offset + np.dot(c, theta)
    for m in range(theta.shape[0]):
        if c[m] == 0:
            continue
        rest = total - c[m] * theta[m]
        if rest == 0:
            new = np.exp(-1j * np.angle(c[m]))
        else:
            new = np.exp(1j * (np.angle(rest) - np.angle(c[m])))
        theta[m] = new
        total = rest + c[m] * new
    return theta


def ao_joint_beamforming(channels, k=1, irs_ids=None, init='ones', tol=1e-8,
                         max_iters=100, rng=None, paths=None, los_only=False):
    """Alternating optimization of the BS beam and the IRS phases of one user.

    Every iteration sets the BS beam by MRT and then runs a per-element
    coordinate ascent on each IRS in turn. The objective |h|^2 after the
    MRT step never decreases.
    """
    scene = channels.scene
    if paths is None:
        paths = channels.paths(k, los_only)
    if irs_ids is None:
        irs_ids = sorted({irs for path in paths for irs in path})

    if isinstance(init, PhaseConfig):
        phases = init.copy()
    elif init == 'random':
        rng = rng if rng is not None else np.random.default_rng(0)
        phases = PhaseConfig(scene, {j: np.exp(2j * math.pi * rng.random(scene.element_count(j)))
                                     for j in irs_ids})
    else:
        phases = PhaseConfig(scene)

    h = effective_channel(channels, k, phases, paths=paths)
    history = [float(np.vdot(h, h).real)]
    converged = False
    iterations = 0
    for iterations in range(1, max_iters + 1):
        w = mrt(h)
        for j in irs_ids:
            C, b = affine_in_irs(channels, k, phases, j, paths=paths)
            phases[j] = _coordinate_ascent(phases[j], C @ w, b @ w)
        h = effective_channel(channels, k, phases, paths=paths)
        history.append(float(np.vdot(h, h).real))
        previous = history[-2]
        if previous > 0 and (history[-1] - previous) / previous < tol:
            converged = True
            break

    if not converged:
        logger.warning("AO did not converge within %d iterations (last gain %g)" % (max_iters, history[-1]))
    else:
        logger.debug("AO converged after %d iterations, gain %g" % (iterations, history[-1]))

    w = mrt(h)
    return BeamSolution(phases, {k: w}, {k: history[-1]}, converged=converged,
                        iterations=iterations, history=history)


def numerical_rank(matrix):
    matrix = np.atleast_2d(matrix)
    if matrix.size == 0:
        return 0
    singular = np.linalg.svd(matrix, compute_uv=False)
    if singular[0] == 0:
        return 0
    return int(np.sum(singular > RANK_TOL * singular[0]))


class ReceiverResult():
    def __init__(self, kind, beams, sinrs, rank, rank_deficient):
        self.kind = kind
        self.beams = beams
        self.sinrs = sinrs
        self.rank = rank
        self.rank_deficient = rank_deficient

    @property
    def min_rate(self):
        return float(np.min(np.log2(1.0 + self.sinrs)))


def linear_receivers(H, noise, power=1.0, kind='zf'):
    """Uplink receive beams for the columns of H (N_B x K).

    beams[k] is applied as beams[k].conj() @ y. ZF on a rank-deficient H
    falls back to a lightly regularized inverse and flags the result.
    """
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2:
        raise DimensionError("multi-user channel", ('N_B', 'K'), H.shape)
    N_B, K = H.shape
    rank = numerical_rank(H)
    deficient = rank < K

    if kind == 'zf':
        if deficient:
            largest = np.linalg.svd(H, compute_uv=False)[0] if H.any() else 1.0
            gram = H.conj().T @ H + RANK_TOL * largest ** 2 * np.eye(K)
            rows = np.linalg.solve(gram, H.conj().T)
        else:
            rows = np.linalg.pinv(H)
        beams = rows.conj()
    elif kind == 'mmse':
        covariance = power * (H @ H.conj().T) + noise * np.eye(N_B)
        beams = np.linalg.solve(covariance, H).T
    elif kind == 'mrt':
        norms = np.linalg.norm(H, axis=0)
        norms[norms == 0] = 1.0
        beams = (H / norms).T
    else:
        raise ValueError("unknown receiver %r" % kind)

    # response[k, j] = beams[k]^H h_j
    response = beams.conj() @ H
    signal = power * np.abs(np.diag(response)) ** 2
    interference = power * (np.sum(np.abs(response) ** 2, axis=1) - np.abs(np.diag(response)) ** 2)
    noise_out = noise * np.sum(np.abs(beams) ** 2, axis=1)
    sinrs = signal / np.maximum(interference + noise_out, np.finfo(float).tiny)
    return ReceiverResult(kind, beams, sinrs, rank, deficient)


def channel_rank_gain_check(G2, Q02, H_single, H_double):
    """Compare the multi-user channel rank of double- and single-IRS systems."""
    report = {
        'rank_g2': numerical_rank(G2),
        'rank_q02': numerical_rank(Q02),
        'rank_single': numerical_rank(H_single),
        'rank_double': numerical_rank(H_double),
    }
    report['bound'] = min(report['rank_g2'], report['rank_q02'])
    report['gain'] = report['rank_double'] - report['rank_single']
    report['holds'] = report['gain'] >= report['bound']
    return report


def downlink_sinrs(channels, users, phases, beams, power, noise, los_only=False):
    """SINR of each user when user k is served with beams[k]."""
    rows = {k: effective_channel(channels, k, phases, los_only=los_only) for k in users}
    sinrs = {}
    for k in users:
        signal = power * abs(rows[k] @ beams[k]) ** 2
        leak = sum(power * abs(rows[k] @ beams[j]) ** 2 for j in users if j != k)
        sinrs[k] = float(signal / (leak + noise))
    return sinrs
