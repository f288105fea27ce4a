'''
Training overhead and least-squares estimation of double-IRS channels.

The SISO estimators work on the cascaded BS-IRS 1-IRS 2-user channel
S, arranged so that the received pilot for reflection patterns
(phi1, phi2) is phi1 @ S @ phi2.
'''

import logging
import math
from collections import namedtuple

import numpy as np

from irsim.beamforming import numerical_rank
from irsim.errors import DimensionError, EstimationError

logger = logging.getLogger(__name__)

# |g_1| entries below this are flagged when forming the scaled channels
NEAR_ZERO = 1e-12


def _positive(name, value):
    if value < 1:
        raise ValueError("%s must be at least 1, got %s" % (name, value))


def overhead_double_irs_single_user(M, N_B):
    _positive('M', M)
    _positive('N_B', N_B)
    return 2 * M + max(M, -(-M * M // N_B))


def overhead_multi_user_extra(M, N_B, K):
    _positive('M', M)
    _positive('N_B', N_B)
    _positive('K', K)
    return max(K - 1, -(-2 * (K - 1) * M // N_B))


def overhead_benchmark_siso_general(M):
    _positive('M', M)
    return M * M


def dft_training_patterns(M, T=None):
    """T x M matrix of DFT rows, unit modulus and orthogonal for T <= M."""
    T = M if T is None else T
    rows = np.arange(T)[:, None] % M
    return np.exp(-2j * math.pi * rows * np.arange(M)[None, :] / M)


def siso_training_design(M1, M2):
    """Every pairing of DFT rows of both surfaces, M1 * M2 pilots."""
    P1 = dft_training_patterns(M1)
    P2 = dft_training_patterns(M2)
    return [(P1[a], P2[b]) for b in range(M2) for a in range(M1)]


def siso_cascaded_channel(q1, S, g2):
    """S[m1, m2] = q1[m1] * S_12[m2, m1] * g2[m2] from the three link channels."""
    q1 = np.asarray(q1, dtype=complex).ravel()
    g2 = np.asarray(g2, dtype=complex).ravel()
    S = np.asarray(S, dtype=complex)
    if S.shape != (g2.shape[0], q1.shape[0]):
        raise DimensionError("inter-IRS channel", (g2.shape[0], q1.shape[0]), S.shape)
    return q1[:, None] * S.T * g2[None, :]


def complex_noise(rng, shape, power):
    return math.sqrt(power / 2.0) * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def simulate_siso_observations(cascaded, patterns, noise, rng):
    clean = np.array([phi1 @ cascaded @ phi2 for phi1, phi2 in patterns])
    if noise > 0:
        clean = clean + complex_noise(rng, clean.shape, noise)
    return clean


def ls_estimate_cascaded_siso(patterns, observations):
    """Least-squares estimate of the SISO cascaded channel.

    Row t of the regressor is kron(phi2, phi1), which multiplies the
    column-major vectorization of the channel.
    """
    if not patterns:
        raise EstimationError("no training patterns given")
    M1, M2 = patterns[0][0].shape[0], patterns[0][1].shape[0]
    observations = np.asarray(observations, dtype=complex)
    if observations.shape != (len(patterns),):
        raise DimensionError("observations", (len(patterns),), observations.shape)

    A = np.array([np.kron(phi2, phi1) for phi1, phi2 in patterns])
    rank = numerical_rank(A)
    if rank < M1 * M2:
        raise EstimationError("training matrix has rank %d, %d unknowns need %d "
                              "independent reflection patterns" % (rank, M1 * M2, M1 * M2))
    solution, _, _, _ = np.linalg.lstsq(A, observations, rcond=None)
    return solution.reshape((M1, M2), order='F')


class DecoupledTraining(namedtuple('DecoupledTraining', [
        'patterns1', 'patterns2', 'reference1', 'reference2',
        'observations1', 'observations2', 'checks'])):
    __slots__ = ()

    @property
    def pilots(self):
        """Pilot slots spent, check pilots included."""
        return len(self.observations1) + len(self.observations2) + len(self.checks)


def simulate_decoupled_training(cascaded, noise, rng, check_pilots=4):
    """Pilots of the decoupled scheme: one surface fixed, the other swept.

    The estimate itself needs M1 + M2 pilots. The check_pilots extra
    slots carry random phases and only validate the rank-one model, so
    the total overhead is M1 + M2 + check_pilots; pass 0 to spend the
    minimum and skip the validation.
    """
    M1, M2 = cascaded.shape
    P1 = dft_training_patterns(M1)
    P2 = dft_training_patterns(M2)
    ref1, ref2 = P1[0], P2[0]
    obs1 = simulate_siso_observations(cascaded, [(p, ref2) for p in P1], noise, rng)
    obs2 = simulate_siso_observations(cascaded, [(ref1, p) for p in P2], noise, rng)
    pairs = [(np.exp(2j * math.pi * rng.random(M1)), np.exp(2j * math.pi * rng.random(M2)))
             for _ in range(check_pilots)]
    ys = simulate_siso_observations(cascaded, pairs, noise, rng) if pairs else []
    checks = [(phi1, phi2, y) for (phi1, phi2), y in zip(pairs, ys)]
    return DecoupledTraining(P1, P2, ref1, ref2, obs1, obs2, checks)


def ls_estimate_los_decoupled(training, tol=1e-6):
    """Estimate (v1, v2) of a rank-one cascaded channel v1 v2^T from 2M pilots.

    The pair is only defined up to a complex scale; v1[0] is returned with
    phase zero. Raises EstimationError when the check pilots disagree with
    the rank-one reconstruction by more than tol (relative). Without check
    pilots the rank-one model is taken on trust.
    """
    u1 = np.linalg.solve(training.patterns1, training.observations1)
    u2 = np.linalg.solve(training.patterns2, training.observations2)
    common = u1 @ training.reference1
    if common == 0:
        raise EstimationError("reference pilot carries no energy, cannot fix the scale")
    rotation = np.exp(-1j * np.angle(u1[0])) if u1[0] != 0 else 1.0
    v1 = u1 * rotation
    v2 = u2 / common / rotation

    if training.checks:
        predicted = np.array([(v1 @ phi1) * (v2 @ phi2) for phi1, phi2, _ in training.checks])
        measured = np.array([y for _, _, y in training.checks])
        residual = np.sum(np.abs(measured - predicted) ** 2) / max(np.sum(np.abs(measured) ** 2),
                                                                   np.finfo(float).tiny)
        logger.debug("decoupled LoS estimate residual %g" % residual)
        if residual > tol:
            raise EstimationError("rank-one model residual %.3g exceeds %.3g, inter-IRS "
                                  "channel is not LoS" % (residual, tol))
    return v1, v2


def reconstruct_siso(v1, v2, phi1, phi2):
    return complex((v1 @ phi1) * (v2 @ phi2))


def nmse(estimate, truth):
    truth = np.asarray(truth)
    return float(np.sum(np.abs(np.asarray(estimate) - truth) ** 2) / np.sum(np.abs(truth) ** 2))


def single_reflection_channel(Q, g):
    """R = Q^T diag(g) (N_B x M) for BS-IRS channel Q (M x N_B) and IRS-user row g."""
    g = np.asarray(g, dtype=complex).ravel()
    return (Q * g[:, None]).T


class CascadedChannel():
    """Cascaded double-IRS channels of one user in their scaled form.

    single1 is R_1 (N_B x M1), scaled holds one N_B x M1 matrix per
    element of IRS 2 and scaling one row a_m per element, so that
    scaled[m] equals single1 @ diag(scaling[m]).
    """

    def __init__(self, single1, scaled, scaling, near_zero):
        self.single1 = single1
        self.scaled = scaled
        self.scaling = scaling
        self.near_zero = near_zero

    def reconstruct(self, m):
        return self.single1 * self.scaling[m][None, :]

    def max_reconstruction_error(self):
        errors = [np.linalg.norm(self.reconstruct(m) - self.scaled[m]) / np.linalg.norm(self.scaled[m])
                  for m in range(self.scaled.shape[0]) if np.linalg.norm(self.scaled[m]) > 0]
        return max(errors) if errors else 0.0


def scaled_double_reflection_channels(Q1, S, g1, g2):
    """Express every per-element double-reflection channel as a scaled R_1.

    Q1 is BS-IRS 1 (M1 x N_B), S is IRS 1-IRS 2 (M2 x M1), g1 and g2 the
    IRS-user rows. Entries of g1 below NEAR_ZERO are flagged and give a
    zero scaling coefficient.
    """
    g1 = np.asarray(g1, dtype=complex).ravel()
    g2 = np.asarray(g2, dtype=complex).ravel()
    if S.shape != (g2.shape[0], g1.shape[0]):
        raise DimensionError("inter-IRS channel", (g2.shape[0], g1.shape[0]), S.shape)
    near_zero = np.abs(g1) < NEAR_ZERO
    if near_zero.any():
        logger.warning("%d entries of the IRS 1-user channel are near zero" % int(near_zero.sum()))

    R1 = single_reflection_channel(Q1, g1)
    rows = S * g2[:, None]
    scaling = np.zeros(rows.shape, dtype=complex)
    scaling[:, ~near_zero] = rows[:, ~near_zero] / g1[~near_zero][None, :]
    scaled = np.array([Q1.T * rows[m][None, :] for m in range(rows.shape[0])])
    return CascadedChannel(R1, scaled, scaling, near_zero)


def multiuser_scaling_vectors(g_users):
    """b_k = g_k / g_1 for the IRS-user rows of K users (K x M)."""
    g_users = np.asarray(g_users, dtype=complex)
    if np.any(np.abs(g_users[0]) < NEAR_ZERO):
        raise EstimationError("reference user channel has near-zero entries")
    return g_users / g_users[0][None, :]


def reconstruct_user_channel(reference, scaling):
    """Single-reflection channel of another user from the reference user's."""
    return reference * np.asarray(scaling)[None, :]
