'''
Link channel synthesis and cascaded channel composition.

Link matrices are stored receiver-by-transmitter, so a reflection path
BS -> a_1 -> ... -> a_n -> user composes to the row

    h = G_{a_n,u} diag(theta_{a_n}) ... S_{a_1,a_2} diag(theta_{a_1}) Q_{0,a_1}

and the received signal for BS beam w is h @ w.
'''

import json
import logging
import math
from pathlib import Path

import numpy as np

from irsim.errors import ConfigError, DimensionError
from irsim.scene import (build_admissible_graph, build_los_graph,
                         has_geometric_los, iter_paths)

logger = logging.getLogger(__name__)

# full path enumeration is only done for regions up to this size
MAX_ENUMERATED_REGION = 12


def array_response(array, direction, wavelength):
    """Response of a planar array towards a unit direction.

    Single-antenna nodes (array is None) have the response [1].
    """
    direction = np.asarray(direction, dtype=float)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("array response needs a unit direction, got norm %g" %
                         np.linalg.norm(direction))
    if array is None:
        return np.ones(1, dtype=complex)
    return np.exp(2j * math.pi / wavelength * (array.offsets @ direction))


def path_loss(d, alpha, beta):
    if d <= 0:
        raise ValueError("path loss needs a positive distance, got %r" % d)
    return beta * d ** (-alpha)


class LinkChannel():
    """One synthesized link i -> j.

    When the link has geometric LoS, rho, rx and tx describe the LoS part
    of matrix, rho * outer(rx, tx), with rho already scaled by the Rician
    split.
    """

    def __init__(self, i, j, matrix, distance, path_loss, kappa,
                 rho=None, rx=None, tx=None):
        self.i = i
        self.j = j
        self.matrix = matrix
        self.distance = distance
        self.path_loss = path_loss
        self.kappa = kappa
        self.rho = rho
        self.rx = rx
        self.tx = tx

    @property
    def has_los(self):
        return self.rho is not None

    @property
    def los_component(self):
        if not self.has_los:
            return np.zeros_like(self.matrix)
        return self.rho * np.outer(self.rx, self.tx)

    def __repr__(self):
        return "LinkChannel(%d->%d, %s, d=%.2f m%s)" % (
            self.i, self.j, self.matrix.shape, self.distance,
            ", LoS" if self.has_los else "")


def _kappa_from_db(kappa_db):
    if kappa_db is None or kappa_db == math.inf:
        return math.inf
    return 10.0 ** (kappa_db / 10.0)


def link_rng(seed, realization, i, j):
    """Independent generator for one link draw."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(realization), int(i), int(j)]))


def synth_link(scene, i, j, rng, kappa_db=False, alpha=None):
    """Draw the Rician channel of link i -> j.

    kappa_db and alpha default to the scene constants; pass kappa_db=None
    for a pure LoS link.
    """
    constants = scene.constants
    if kappa_db is False:
        kappa_db = constants.kappa_db
    kappa = _kappa_from_db(kappa_db)

    distance = scene.distance(i, j)
    rows, cols = scene.element_count(j), scene.element_count(i)
    los = has_geometric_los(scene, i, j)

    if alpha is None:
        alpha = constants.alpha[scene.link_class(i, j) if los else 'blocked']
    gain = path_loss(distance, alpha, constants.beta)

    def scattered():
        return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / math.sqrt(2.0)

    if not los:
        if constants.blocked_links == 'cut':
            matrix = np.zeros((rows, cols), dtype=complex)
        else:
            matrix = math.sqrt(gain) * scattered()
        return LinkChannel(i, j, matrix, distance, gain, 0.0)

    direction = (scene.position(j) - scene.position(i)) / distance
    rx = array_response(scene.array(j), -direction, scene.wavelength)
    tx = array_response(scene.array(i), direction, scene.wavelength)
    phase = np.exp(-2j * math.pi * distance / scene.wavelength)

    if kappa == math.inf:
        los_weight, nlos_weight = 1.0, 0.0
    else:
        los_weight, nlos_weight = math.sqrt(kappa / (1.0 + kappa)), math.sqrt(1.0 / (1.0 + kappa))

    rho = los_weight * math.sqrt(gain) * phase
    matrix = rho * np.outer(rx, tx)
    if nlos_weight:
        matrix = matrix + nlos_weight * math.sqrt(gain) * scattered()
    return LinkChannel(i, j, matrix, distance, gain, kappa, rho=rho, rx=rx, tx=tx)


class PhaseConfig():
    """Unit-modulus reflection vectors, one per IRS.

    IRSs without an entry reflect with phase 0 on every element.
    """

    def __init__(self, scene, thetas=None):
        self.scene = scene
        self.thetas = {}
        for j, theta in (thetas or {}).items():
            self[j] = theta

    def __setitem__(self, j, theta):
        theta = np.asarray(theta, dtype=complex).reshape(-1)
        expected = self.scene.element_count(j)
        if theta.shape != (expected,):
            raise DimensionError("theta of IRS %d" % j, (expected,), theta.shape)
        if not np.allclose(np.abs(theta), 1.0, atol=1e-9):
            raise ValueError("theta of IRS %d is not unit modulus" % j)
        self.thetas[j] = theta

    def __getitem__(self, j):
        if j in self.thetas:
            return self.thetas[j]
        return np.ones(self.scene.element_count(j), dtype=complex)

    def __contains__(self, j):
        return j in self.thetas

    def diag(self, j):
        return np.diag(self[j])

    def copy(self):
        return PhaseConfig(self.scene, {j: t.copy() for j, t in self.thetas.items()})

    def is_unit_modulus(self):
        return all(np.allclose(np.abs(t), 1.0, atol=1e-9) for t in self.thetas.values())

    def to_dict(self):
        return {str(j): [[float(v.real), float(v.imag)] for v in t] for j, t in sorted(self.thetas.items())}


class ChannelSet():
    """All link channels of one scene realization.

    Holds every admissible reflection hop (blocked ones as scattered
    channels) and the direct BS-user links.
    """

    def __init__(self, scene, links, seed=0, realization=0, overrides=None):
        self.scene = scene
        self.links = links
        self.seed = seed
        self.realization = realization
        self.overrides = overrides
        self._graphs = {}

    def __contains__(self, pair):
        return pair in self.links

    def link(self, i, j):
        try:
            return self.links[(i, j)]
        except KeyError:
            raise ConfigError("no channel synthesized for link %d->%d" % (i, j))

    def redraw(self, i, j, realization):
        """Link i->j as drawn in another fading realization of the same scene."""
        if realization == self.realization:
            return self.link(i, j)
        extra = _link_overrides(self.overrides, self.scene, i, j)
        return synth_link(self.scene, i, j, link_rng(self.seed, realization, i, j),
                          kappa_db=extra.get('kappa_db', False), alpha=extra.get('alpha'))

    def matrix(self, i, j):
        return self.link(i, j).matrix

    def direct(self, k):
        return self.matrix(0, self.scene.user_node(k))[0]

    def graph(self, k, los_only=False):
        key = (k, los_only)
        if key not in self._graphs:
            if los_only:
                self._graphs[key] = build_los_graph(self.scene, k)
            else:
                self._graphs[key] = build_admissible_graph(self.scene, k)
        return self._graphs[key]

    def paths(self, k, los_only=False):
        if not los_only and len(self.scene.region(k)) > MAX_ENUMERATED_REGION:
            raise ConfigError("user %d has %d IRSs in its region; full path enumeration is limited "
                              "to %d, use los_only" % (k, len(self.scene.region(k)), MAX_ENUMERATED_REGION))
        return list(iter_paths(self.graph(k, los_only)))


def _link_overrides(overrides, scene, i, j):
    if not overrides:
        return {}
    merged = {}
    merged.update(overrides.get(scene.link_class(i, j), {}))
    merged.update(overrides.get((i, j), {}))
    return merged


def synthesize_channels(scene, seed=0, realization=0, overrides=None):
    """Draw every channel the scene needs.

    overrides maps a link class name or an (i, j) pair to a dict with
    'kappa_db' and/or 'alpha'.
    """
    pairs = set()
    for k in range(1, scene.num_users + 1):
        pairs.update(build_admissible_graph(scene, k).graph.edges)
        pairs.add((0, scene.user_node(k)))

    links = {}
    for i, j in sorted(pairs):
        extra = _link_overrides(overrides, scene, i, j)
        links[(i, j)] = synth_link(scene, i, j, link_rng(seed, realization, i, j),
                                   kappa_db=extra.get('kappa_db', False), alpha=extra.get('alpha'))
    logger.debug("synthesized %d links (seed %d, realization %d)" % (len(links), seed, realization))
    return ChannelSet(scene, links, seed=seed, realization=realization, overrides=overrides)


def _hop_nodes(scene, path, k):
    return [0] + list(path) + [scene.user_node(k)]


def cascaded_path_channel(channels, path, phases, k):
    """BS-side row of the reflection path towards user k (length N_B)."""
    scene = channels.scene
    nodes = _hop_nodes(scene, path, k)
    value = channels.matrix(nodes[0], nodes[1])
    for n, irs in enumerate(path):
        theta = phases[irs]
        if theta.shape[0] != value.shape[0]:
            raise DimensionError("phases of IRS %d" % irs, (value.shape[0],), theta.shape)
        value = channels.matrix(irs, nodes[n + 2]) @ (theta[:, None] * value)
    if value.shape != (1, scene.bs_array.size):
        raise DimensionError("cascaded channel", (1, scene.bs_array.size), value.shape)
    return value[0]


def path_split(channels, path, phases, k, irs):
    """Split a path at one IRS into (left, right).

    The cascaded channel equals (left * theta_irs) @ right, with left the
    row seen after the IRS and right the matrix arriving at it.
    """
    scene = channels.scene
    nodes = _hop_nodes(scene, path, k)
    at = nodes.index(irs)
    right = channels.matrix(nodes[0], nodes[1])
    for n in range(1, at):
        right = channels.matrix(nodes[n], nodes[n + 1]) @ (phases[nodes[n]][:, None] * right)
    left = channels.matrix(nodes[at], nodes[at + 1])
    for n in range(at + 1, len(nodes) - 1):
        left = channels.matrix(nodes[n], nodes[n + 1]) @ (phases[nodes[n]][:, None] * left)
    return left[0], right


def effective_channel(channels, k, phases, los_only=False, paths=None):
    """Direct channel plus every reflection path towards user k."""
    if paths is None:
        paths = channels.paths(k, los_only)
    h = channels.direct(k).copy()
    for path in paths:
        h += cascaded_path_channel(channels, path, phases, k)
    return h


def affine_in_irs(channels, k, phases, irs, los_only=False, paths=None):
    """Write the effective channel of user k as theta_irs @ C + b."""
    if paths is None:
        paths = channels.paths(k, los_only)
    scene = channels.scene
    C = np.zeros((scene.element_count(irs), scene.bs_array.size), dtype=complex)
    b = channels.direct(k).copy()
    for path in paths:
        if irs in path:
            left, right = path_split(channels, path, phases, k, irs)
            C += left[:, None] * right
        else:
            b += cascaded_path_channel(channels, path, phases, k)
    return C, b


def _encode(matrix):
    return [[[float(v.real), float(v.imag)] for v in row] for row in matrix]


def _decode(rows):
    data = np.asarray(rows, dtype=float)
    return data[..., 0] + 1j * data[..., 1]


def dump_channels(channels, path):
    doc = {
        'seed': channels.seed,
        'realization': channels.realization,
        'links': [{'i': i, 'j': j, 'distance': link.distance, 'path_loss': link.path_loss,
                   'matrix': _encode(link.matrix)}
                  for (i, j), link in sorted(channels.links.items())],
    }
    with Path(path).open('w') as f:
        json.dump(doc, f)


def load_channels(path, scene):
    """Load a channel fixture. LoS decompositions are not stored."""
    try:
        with Path(path).open() as f:
            doc = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError("cannot load channel fixture %s: %s" % (path, e))
    links = {}
    for entry in doc['links']:
        i, j = int(entry['i']), int(entry['j'])
        matrix = _decode(entry['matrix'])
        expected = (scene.element_count(j), scene.element_count(i))
        if matrix.shape != expected:
            raise DimensionError("link %d->%d" % (i, j), expected, matrix.shape)
        links[(i, j)] = LinkChannel(i, j, matrix, entry['distance'], entry['path_loss'], None)
    return ChannelSet(scene, links, seed=doc.get('seed', 0), realization=doc.get('realization', 0))
