'''
Scene geometry for multi-IRS networks.

Node numbering follows the usual convention: the BS is node 0, IRS j is
node j (1..J) and user k is node J+k (k = 1..K). A scene is built once
from a JSON-style description and treated as read-only afterwards.
'''

import copy
import json
import logging
import math
from collections import namedtuple
from pathlib import Path

import networkx as nx
import numpy as np

from irsim.errors import ConfigError

logger = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299792458.0

LINK_CLASSES = ('bs_irs', 'irs_irs', 'irs_user', 'bs_user', 'blocked')

DEFAULT_ALPHA = {
    'bs_irs': 2.0,
    'irs_irs': 2.0,
    'irs_user': 2.0,
    'bs_user': 2.0,
    'blocked': 3.5,
}

Box = namedtuple('Box', ['lo', 'hi'])


def _vector(value, what):
    try:
        vec = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("%s is not a numeric vector: %r" % (what, value))
    if vec.shape != (3,) or not np.all(np.isfinite(vec)):
        raise ConfigError("%s must be a finite 3D vector, got %r" % (what, value))
    return vec


def _unit(value, what):
    vec = _vector(value, what)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ConfigError("%s must not be the zero vector" % what)
    if abs(norm - 1.0) > 1e-9:
        logger.debug("normalizing %s (norm %g)" % (what, norm))
    return vec / norm


def _float(value, what):
    if isinstance(value, str):
        value = value.strip().lower()
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError("%s is not a number: %r" % (what, value))


def grid_axes(normal, up):
    """Horizontal and vertical unit axes of a planar array facing normal."""
    horizontal = np.cross(up, normal)
    if np.linalg.norm(horizontal) < 1e-9:
        # Array facing straight up or down
        horizontal = np.cross([0.0, 1.0, 0.0], normal)
    horizontal = horizontal / np.linalg.norm(horizontal)
    vertical = np.cross(normal, horizontal)
    return horizontal, vertical / np.linalg.norm(vertical)


class PlanarArray():
    """Uniform planar array of shape (Nh, Nv).

    Element (ih, iv) is stored at index ih * Nv + iv, so the response of
    the whole array is the Kronecker product of the horizontal and the
    vertical responses. The first element sits on the reference point.
    """

    def __init__(self, shape, spacing, normal, up=(0.0, 0.0, 1.0)):
        self.shape = (int(shape[0]), int(shape[1]))
        self.spacing = float(spacing)
        self.normal = np.asarray(normal, dtype=float)
        self.horizontal, self.vertical = grid_axes(self.normal, np.asarray(up, dtype=float))

        ih, iv = np.meshgrid(np.arange(self.shape[0]), np.arange(self.shape[1]), indexing='ij')
        self.offsets = self.spacing * (ih.reshape(-1, 1) * self.horizontal +
                                       iv.reshape(-1, 1) * self.vertical)

    @property
    def size(self):
        return self.shape[0] * self.shape[1]

    def __repr__(self):
        return "PlanarArray(%dx%d, spacing=%.4g m)" % (self.shape + (self.spacing,))


class Irs():
    def __init__(self, index, position, normal, array):
        self.index = index
        self.position = position
        self.normal = normal
        self.array = array

    @property
    def elements(self):
        return self.array.size


class Constants():
    def __init__(self, beta_db=-30.0, alpha=None, kappa_db=None,
                 carrier_freq_hz=5e9, noise_power_dbm=-90.0, tx_power_dbm=0.0,
                 blocked_links='scatter', bs_spacing=0.5, irs_spacing=0.25,
                 up=(0.0, 0.0, 1.0)):
        self.beta_db = float(beta_db)
        self.alpha = dict(DEFAULT_ALPHA)
        self.alpha.update(alpha or {})
        # None means kappa = infinity (pure LoS)
        self.kappa_db = None if kappa_db is None else float(kappa_db)
        self.carrier_freq_hz = float(carrier_freq_hz)
        self.noise_power_dbm = float(noise_power_dbm)
        self.tx_power_dbm = float(tx_power_dbm)
        self.blocked_links = blocked_links
        self.bs_spacing = float(bs_spacing)
        self.irs_spacing = float(irs_spacing)
        self.up = np.asarray(up, dtype=float)

    @property
    def beta(self):
        return 10.0 ** (self.beta_db / 10.0)

    @property
    def kappa(self):
        if self.kappa_db is None:
            return math.inf
        return 10.0 ** (self.kappa_db / 10.0)

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def noise_power(self):
        return 10.0 ** ((self.noise_power_dbm - 30.0) / 10.0)

    @property
    def tx_power(self):
        return 10.0 ** ((self.tx_power_dbm - 30.0) / 10.0)

    def to_dict(self):
        return {
            'beta_db': self.beta_db,
            'alpha': dict(self.alpha),
            'kappa_db': self.kappa_db,
            'carrier_freq_hz': self.carrier_freq_hz,
            'noise_power_dbm': self.noise_power_dbm,
            'tx_power_dbm': self.tx_power_dbm,
            'blocked_links': self.blocked_links,
            'bs_spacing': self.bs_spacing,
            'irs_spacing': self.irs_spacing,
            'up': self.up.tolist(),
        }


class Scene():
    """Validated network geometry.

    Use build_scene() to create one; the attributes are not meant to be
    modified afterwards.
    """

    def __init__(self, bs_position, bs_array, irs_list, user_positions,
                 obstacles, constants, effective_regions, name=None):
        self.name = name
        self.bs_position = bs_position
        self.bs_array = bs_array
        self.irs_list = irs_list
        self.user_positions = user_positions
        self.obstacles = obstacles
        self.constants = constants
        self.effective_regions = effective_regions

    @property
    def num_irs(self):
        return len(self.irs_list)

    @property
    def num_users(self):
        return len(self.user_positions)

    @property
    def wavelength(self):
        return self.constants.wavelength

    @property
    def nodes(self):
        return range(self.num_irs + self.num_users + 1)

    def is_bs(self, node):
        return node == 0

    def is_irs(self, node):
        return 1 <= node <= self.num_irs

    def is_user(self, node):
        return self.num_irs < node <= self.num_irs + self.num_users

    def user_node(self, k):
        return self.num_irs + k

    def user_of(self, node):
        return node - self.num_irs

    def irs(self, node):
        return self.irs_list[node - 1]

    def _check_node(self, node):
        if node not in self.nodes:
            raise ConfigError("unknown node %r" % (node,))

    def position(self, node):
        self._check_node(node)
        if node == 0:
            return self.bs_position
        if self.is_irs(node):
            return self.irs(node).position
        return self.user_positions[self.user_of(node) - 1]

    def array(self, node):
        """Planar array of a node, None for single-antenna users."""
        if node == 0:
            return self.bs_array
        if self.is_irs(node):
            return self.irs(node).array
        return None

    def element_count(self, node):
        array = self.array(node)
        return 1 if array is None else array.size

    def distance(self, i, j):
        return float(np.linalg.norm(self.position(j) - self.position(i)))

    def region(self, k):
        return self.effective_regions[k]

    def link_class(self, i, j):
        if self.is_bs(i) and self.is_irs(j):
            return 'bs_irs'
        if self.is_irs(i) and self.is_irs(j):
            return 'irs_irs'
        if self.is_irs(i) and self.is_user(j):
            return 'irs_user'
        return 'bs_user'

    def __repr__(self):
        return "Scene(%s: N_B=%d, J=%d, K=%d, %d obstacles)" % (
            self.name or 'unnamed', self.bs_array.size, self.num_irs,
            self.num_users, len(self.obstacles))


def _constants_from(config):
    raw = dict(config or {})
    alpha = raw.pop('alpha', {}) or {}
    for key in alpha:
        if key not in LINK_CLASSES:
            raise ConfigError("unknown link class %r in constants.alpha" % key)
    kappa_db = raw.pop('kappa_db', None)
    if kappa_db is not None:
        kappa_db = _float(kappa_db, 'constants.kappa_db')
        if kappa_db == math.inf:
            kappa_db = None
    blocked = raw.pop('blocked_links', 'scatter')
    if blocked not in ('scatter', 'cut'):
        raise ConfigError("constants.blocked_links must be 'scatter' or 'cut', got %r" % blocked)
    try:
        constants = Constants(alpha={k: _float(v, 'constants.alpha.%s' % k) for k, v in alpha.items()},
                              kappa_db=kappa_db, blocked_links=blocked,
                              **{k: _float(v, 'constants.%s' % k) if k != 'up' else _unit(v, 'constants.up')
                                 for k, v in raw.items()})
    except TypeError as e:
        raise ConfigError("unexpected key in constants: %s" % e)
    if constants.carrier_freq_hz <= 0:
        raise ConfigError("constants.carrier_freq_hz must be positive")
    return constants


def _shape_from(entry, what, default=None):
    if 'shape' in entry:
        shape = entry['shape']
        if not isinstance(shape, (list, tuple)) or len(shape) != 2:
            raise ConfigError("%s.shape must be [horizontal, vertical]" % what)
    elif 'M0' in entry:
        shape = [entry['M0'], entry['M0']]
    elif default is not None:
        shape = default
    else:
        raise ConfigError("%s needs M0 or shape" % what)
    try:
        shape = [int(shape[0]), int(shape[1])]
    except (TypeError, ValueError):
        raise ConfigError("%s has a non-integer size: %r" % (what, shape))
    if min(shape) < 1:
        raise ConfigError("%s must have at least one element per dimension" % what)
    return shape


def _require(entry, key, what):
    if not isinstance(entry, dict) or key not in entry:
        raise ConfigError("%s is missing required field '%s'" % (what, key))
    return entry[key]


def build_scene(config):
    """Validate a scenario description (dict) and return a Scene."""
    if not isinstance(config, dict):
        raise ConfigError("scenario must be a JSON object")

    constants = _constants_from(config.get('constants'))
    wavelength = constants.wavelength

    bs = _require(config, 'bs', 'scenario')
    bs_position = _vector(_require(bs, 'position', 'bs'), 'bs.position')
    antennas = int(_float(_require(bs, 'antennas', 'bs'), 'bs.antennas'))
    if antennas < 1:
        raise ConfigError("bs.antennas must be at least 1")
    bs_shape = _shape_from(bs, 'bs', default=[antennas, 1])
    if bs_shape[0] * bs_shape[1] != antennas:
        raise ConfigError("bs.shape %r does not hold %d antennas" % (bs_shape, antennas))
    bs_orientation = _unit(bs.get('orientation', [1.0, 0.0, 0.0]), 'bs.orientation')
    bs_array = PlanarArray(bs_shape, constants.bs_spacing * wavelength, bs_orientation, constants.up)

    irs_list = []
    for n, entry in enumerate(_require(config, 'irs', 'scenario'), 1):
        what = 'irs[%d]' % (n - 1)
        position = _vector(_require(entry, 'position', what), what + '.position')
        normal = _unit(_require(entry, 'pointing_normal', what), what + '.pointing_normal')
        shape = _shape_from(entry, what)
        array = PlanarArray(shape, constants.irs_spacing * wavelength, normal, constants.up)
        irs_list.append(Irs(n, position, normal, array))

    users = []
    for n, entry in enumerate(_require(config, 'users', 'scenario')):
        if isinstance(entry, dict):
            entry = _require(entry, 'position', 'users[%d]' % n)
        users.append(_vector(entry, 'users[%d]' % n))

    obstacles = []
    for n, entry in enumerate(config.get('obstacles', [])):
        lo = _vector(_require(entry, 'min', 'obstacles[%d]' % n), 'obstacles[%d].min' % n)
        hi = _vector(_require(entry, 'max', 'obstacles[%d]' % n), 'obstacles[%d].max' % n)
        if np.any(lo > hi):
            raise ConfigError("obstacles[%d] has min above max" % n)
        obstacles.append(Box(lo, hi))

    num_irs = len(irs_list)
    regions = {}
    raw_regions = config.get('effective_regions') or {}
    if isinstance(raw_regions, list):
        raw_regions = {str(k): v for k, v in enumerate(raw_regions, 1)}
    for k in range(1, len(users) + 1):
        members = raw_regions.get(str(k), raw_regions.get(k))
        if members is None:
            members = range(1, num_irs + 1)
        members = frozenset(int(j) for j in members)
        if not members <= set(range(1, num_irs + 1)):
            raise ConfigError("effective_regions[%d] names an unknown IRS: %s" % (k, sorted(members)))
        regions[k] = members

    scene = Scene(bs_position, bs_array, irs_list, users, obstacles, constants, regions,
                  name=config.get('name'))

    for node in scene.nodes:
        point = scene.position(node)
        for n, box in enumerate(obstacles):
            if np.all(point >= box.lo) and np.all(point <= box.hi):
                raise ConfigError("node %d lies inside obstacles[%d]" % (node, n))

    logger.debug("built %r" % scene)
    return scene


def load_scene(path):
    """Read a scenario JSON file."""
    path = Path(path)
    try:
        with path.open() as f:
            config = json.load(f)
    except OSError as e:
        raise ConfigError("cannot read scenario %s: %s" % (path, e))
    except ValueError as e:
        raise ConfigError("malformed scenario %s: %s" % (path, e))
    if isinstance(config, dict):
        config.setdefault('name', path.stem)
    return build_scene(config)


def shipped_scene_path(name):
    return Path(__file__).parent / 'scenes' / ('%s.json' % name)


def scene_to_dict(scene):
    return {
        'name': scene.name,
        'bs': {
            'position': scene.bs_position.tolist(),
            'antennas': scene.bs_array.size,
            'shape': list(scene.bs_array.shape),
            'orientation': scene.bs_array.normal.tolist(),
        },
        'irs': [{'position': irs.position.tolist(),
                 'pointing_normal': irs.normal.tolist(),
                 'shape': list(irs.array.shape)} for irs in scene.irs_list],
        'users': [p.tolist() for p in scene.user_positions],
        'obstacles': [{'min': box.lo.tolist(), 'max': box.hi.tolist()} for box in scene.obstacles],
        'constants': scene.constants.to_dict(),
        'effective_regions': {str(k): sorted(v) for k, v in scene.effective_regions.items()},
    }


def with_irs_elements(scene, shape):
    """Copy of scene with every IRS resized to shape (an int M0 or [Mh, Mv])."""
    if isinstance(shape, int):
        shape = [shape, shape]
    config = scene_to_dict(scene)
    for entry in config['irs']:
        entry['shape'] = list(shape)
    return build_scene(config)


def with_updates(scene, bs_antennas=None, users=None, regions=None, constants=None):
    config = copy.deepcopy(scene_to_dict(scene))
    if bs_antennas is not None:
        config['bs']['antennas'] = bs_antennas
        config['bs']['shape'] = [bs_antennas, 1]
    if users is not None:
        config['users'] = [list(p) for p in users]
        config['effective_regions'] = regions or {}
    if constants:
        config['constants'].update(constants)
    return build_scene(config)


def segment_hits_box(p, q, box):
    """Slab test of segment p-q against a closed axis-aligned box."""
    t_enter, t_exit = 0.0, 1.0
    for axis in range(3):
        d = q[axis] - p[axis]
        lo, hi = box.lo[axis], box.hi[axis]
        if d == 0:
            if p[axis] < lo or p[axis] > hi:
                return False
            continue
        t1 = (lo - p[axis]) / d
        t2 = (hi - p[axis]) / d
        if t1 > t2:
            t1, t2 = t2, t1
        t_enter = max(t_enter, t1)
        t_exit = min(t_exit, t2)
        if t_enter > t_exit:
            return False
    return True


def has_geometric_los(scene, i, j):
    if i == j:
        raise ConfigError("LoS query needs two distinct nodes, got %d twice" % i)
    p, q = scene.position(i), scene.position(j)
    return not any(segment_hits_box(p, q, box) for box in scene.obstacles)


def half_space_ok(scene, j, point):
    irs = scene.irs(j)
    return float(np.dot(irs.normal, np.asarray(point) - irs.position)) > 0.0


def admissible_link(scene, i, j, k=None):
    """Conditions of los_indicator other than blockage."""
    if i == j or scene.is_user(i) or j == 0:
        return False
    if scene.is_bs(i) and scene.is_user(j):
        # the direct link is not a reflection hop
        return False
    if scene.is_user(j):
        if k is not None and scene.user_node(k) != j:
            return False
        if i not in scene.region(scene.user_of(j)):
            return False
    elif scene.distance(0, j) <= scene.distance(0, i):
        return False
    if scene.is_irs(i) and not half_space_ok(scene, i, scene.position(j)):
        return False
    if scene.is_irs(j) and not half_space_ok(scene, j, scene.position(i)):
        return False
    return True


def los_indicator(scene, i, j, k=None):
    """u_{i,j}: 1 when (i, j) is an effective LoS reflection hop."""
    if not admissible_link(scene, i, j, k):
        return 0
    return 1 if has_geometric_los(scene, i, j) else 0


class LoSGraph():
    """Directed acyclic graph of usable hops towards one user."""

    def __init__(self, graph, user, target):
        self.graph = graph
        self.user = user
        self.target = target

    @property
    def vertices(self):
        return sorted(self.graph.nodes)

    @property
    def edges(self):
        return sorted(self.graph.edges)

    @property
    def edge_distances(self):
        return {(i, j): d for i, j, d in self.graph.edges(data='distance')}

    def has_edge(self, i, j):
        return self.graph.has_edge(i, j)

    def successors(self, node):
        return sorted(self.graph.successors(node))

    def predecessors(self, node):
        return sorted(self.graph.predecessors(node))

    def is_acyclic(self):
        return nx.is_directed_acyclic_graph(self.graph)

    def __repr__(self):
        return "LoSGraph(user %d, %d vertices, %d edges)" % (
            self.user, self.graph.number_of_nodes(), self.graph.number_of_edges())


def _graph_over(scene, k, test):
    target = scene.user_node(k)
    vertices = [0] + sorted(scene.region(k)) + [target]
    graph = nx.DiGraph()
    graph.add_nodes_from(vertices)
    for i in vertices:
        for j in vertices:
            if i != j and test(scene, i, j, k):
                graph.add_edge(i, j, distance=scene.distance(i, j))
    return LoSGraph(graph, k, target)


def build_los_graph(scene, k):
    return _graph_over(scene, k, lambda s, i, j, user: los_indicator(s, i, j, user) == 1)


def build_admissible_graph(scene, k):
    """Like build_los_graph but keeps blocked hops (scattered paths)."""
    return _graph_over(scene, k, admissible_link)


def iter_paths(los_graph):
    """Yield every BS-to-user IRS sequence of the graph in lexicographic order.

    The user vertex is tried before any IRS successor so that a path is
    produced before its own extensions.
    """
    graph = los_graph.graph
    target = los_graph.target

    def ordered(node):
        succ = sorted(graph.successors(node))
        if target in succ:
            succ.remove(target)
            succ.insert(0, target)
        return succ

    if 0 not in graph:
        return
    stack = [(0, iter(ordered(0)))]
    path = []
    while stack:
        node, children = stack[-1]
        child = next(children, None)
        if child is None:
            stack.pop()
            if path:
                path.pop()
            continue
        if child == target:
            if path:
                yield tuple(path)
            continue
        path.append(child)
        stack.append((child, iter(ordered(child))))
