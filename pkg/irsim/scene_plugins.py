import json
import logging
import re
from pathlib import Path

try:
    import redis
except ImportError:
    redis = None

from irsim.errors import ConfigError
from irsim.scene import build_scene, shipped_scene_path

logger = logging.getLogger(__name__)

_SOURCE_SPLIT_REGEX = re.compile(
    r'(?<=^)"([^"]+)"(?=:|$)'
    r'|(?<=:)"([^"]+)"(?=:|$)'
    r'|(?<=^)([^:]*)(?=:|$)'
    r'|(?<=:)([^:]*)(?=:|$)',
)


def parse_source_args(src):
    """Split a plugin source on colons; quoted fields may contain colons.

    a:b:c -> ['a', 'b', 'c']
    a:"b:c":d -> ['a', 'b:c', 'd']
    """
    matches = _SOURCE_SPLIT_REGEX.findall(src)
    return [m[0] or m[1] or m[2] or m[3] for m in matches]


class BasePlugin():
    """Resolves a scene name to a scenario description (a dict)."""

    def __init__(self, src=None):
        self.source = src

    def lookup(self, name):
        return None

    def load(self, name=None):
        config = self.lookup(name)
        if config is None:
            raise ConfigError("scene %r not found by %s" % (name, self.__class__.__name__))
        if isinstance(config, dict):
            config.setdefault('name', name or Path(str(self.source)).stem)
        return build_scene(config)


def _read_json(path):
    try:
        with path.open() as f:
            return json.load(f)
    except ValueError as e:
        logger.error("Malformed scene file %s: %s" % (path, e))
        return None


class ShippedScenes(BasePlugin):
    # scenes packaged with irsim, the source is ignored
    def lookup(self, name):
        path = shipped_scene_path(Path(name).name)
        if not path.exists():
            return None
        return _read_json(path)


class SceneDirectory(BasePlugin):
    # source is a directory of <name>.json files
    def __init__(self, src):
        super().__init__(src)
        if not Path(src).is_dir():
            raise ConfigError("SceneDirectory plugin requires a directory, got %r" % src)

    def lookup(self, name):
        # no escaping the directory
        path = Path(self.source) / ('%s.json' % Path(name).name)
        if not path.exists():
            return None
        return _read_json(path)


class SceneFile(BasePlugin):
    # source is a scenario file, or a JSON object of scenarios keyed by name
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._doc = None

    def _load(self):
        try:
            doc = _read_json(Path(self.source))
        except OSError as e:
            raise ConfigError("cannot read scene file %s: %s" % (self.source, e))
        if not isinstance(doc, dict):
            raise ConfigError("scene file %s must hold a JSON object" % self.source)
        self._doc = doc

    def lookup(self, name=None):
        if self._doc is None:
            self._load()
        if 'bs' in self._doc:
            return dict(self._doc)
        return self._doc.get(name)


class JSONSceneApi(BasePlugin):
    # source is a url with a '%s' in it where the scene name
    # should go

    def lookup(self, name):
        # imported on demand, the other plugins do not need it
        import requests

        resp = requests.get(self.source % name)
        if not resp.ok:
            logger.warning("scene API answered %s for %r" % (resp.status_code, name))
            return None
        try:
            return resp.json()
        except ValueError:
            logger.error("scene API returned malformed JSON for %r" % name)
            return None


class SceneRedis(BasePlugin):
    """Scene plugin based on the Redis in-memory data store.

    The source is in the format:

        host[:port[:db[:password[:namespace]]]]

    where every field but host is optional. Empty port or db fields take
    their default values, 6379 and 0. With a namespace the scenes are
    stored under '{namespace}:{name}'; quote nested namespaces:

        my-redis-host::::"lab:scenes"

    Each value is the JSON scenario description:

        redis-cli set indoor8 "$(cat irsim/scenes/indoor8.json)"

    Note: this plugin depends on the 'redis' module.
    """
    def __init__(self, src):
        if redis is None:
            raise ConfigError("SceneRedis needs the redis module, install it with pip install redis")
        fields = parse_source_args(src)
        if not 1 <= len(fields) <= 5:
            raise ConfigError("The provided --scene-source='%s' is not in the expected format "
                              "<host>[:<port>[:<db>[:<password>[:<namespace>]]]]" % src)
        fields = fields + [''] * (5 - len(fields))
        server, port, db, password, namespace = fields
        try:
            self._port = int(port) if port else 6379
            self._db = int(db) if db else 0
        except ValueError:
            raise ConfigError("The provided --scene-source='%s' has a non-numeric port or db" % src)
        self._server = server
        self._password = password or None
        self._namespace = namespace + ":" if namespace else ""
        super().__init__(src)
        logger.info("SceneRedis backend initialized (%s:%s)" % (self._server, self._port))

    def lookup(self, name):
        logger.info("resolving scene '%s'" % name)
        client = redis.Redis(host=self._server, port=self._port,
                             db=self._db, password=self._password)
        stuff = client.get(self._namespace + name)
        if stuff is None:
            return None
        text = stuff.decode("utf-8").strip()
        try:
            return json.loads(text)
        except ValueError:
            logger.error("Unable to decode JSON scene: %s" % text[:80])
            return None


PLUGINS = {
    'ShippedScenes': ShippedScenes,
    'SceneDirectory': SceneDirectory,
    'SceneFile': SceneFile,
    'JSONSceneApi': JSONSceneApi,
    'SceneRedis': SceneRedis,
}


def load_plugin(name, src=None):
    """Instantiate a plugin by class name or dotted path."""
    if name in PLUGINS:
        cls = PLUGINS[name]
    else:
        if '.' not in name:
            raise ConfigError("unknown scene plugin %r" % name)
        module_name, cls_name = name.rsplit('.', 1)
        try:
            module = __import__(module_name, fromlist=[cls_name])
            cls = getattr(module, cls_name)
        except (ImportError, AttributeError) as e:
            raise ConfigError("cannot load scene plugin %r: %s" % (name, e))
    return cls(src)
