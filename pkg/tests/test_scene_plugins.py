# vim: tabstop=4 shiftwidth=4 softtabstop=4

""" Unit tests for scene plugins"""

import json
import os
import tempfile
import unittest
from unittest.mock import patch, MagicMock

from irsim.errors import ConfigError
from irsim.scene_plugins import (JSONSceneApi, SceneDirectory, SceneFile,
                                 SceneRedis, ShippedScenes, load_plugin,
                                 parse_source_args)

SCENE = {
    'bs': {'position': [0, 0, 0], 'antennas': 4},
    'irs': [{'position': [10, 5, 0], 'pointing_normal': [0, -1, 0], 'M0': 2}],
    'users': [[20, 0, 0]],
}


class ParseSourceArgumentsTestCase(unittest.TestCase):
    def test_parameterized(self):
        params = [
            ('', ['']),
            (':', ['', '']),
            ('::', ['', '', '']),
            ('"localhost"', ['localhost']),
            ('"localhost":', ['localhost', '']),
            ('"local:host"', ['local:host']),
            ('"local":"host"', ['local', 'host']),
            ('localhost:6379:1:pass"word:"lab:scenes"',
             ['localhost', '6379', '1', 'pass"word', 'lab:scenes']),
        ]
        for src, args in params:
            self.assertEqual(args, parse_source_args(src))


class ShippedScenesTestCase(unittest.TestCase):
    def test_known(self):
        scene = ShippedScenes().load('indoor8')
        self.assertEqual(scene.name, 'indoor8')
        self.assertEqual(scene.num_irs, 8)

    def test_unknown(self):
        self.assertIsNone(ShippedScenes().lookup('nowhere'))
        self.assertRaises(ConfigError, ShippedScenes().load, 'nowhere')


class SceneDirectoryTestCase(unittest.TestCase):
    def test_lookup(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with open(os.path.join(tmpdir, 'lab.json'), 'w') as f:
                json.dump(SCENE, f)
            plugin = SceneDirectory(tmpdir)
            scene = plugin.load('lab')
            self.assertIsNone(plugin.lookup('other'))
            # path components are stripped from the name
            self.assertIsNotNone(plugin.lookup('../x/lab'))
        self.assertEqual(scene.name, 'lab')

    def test_malformed(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with open(os.path.join(tmpdir, 'bad.json'), 'w') as f:
                f.write('{"bs": [')
            plugin = SceneDirectory(tmpdir)
            with self.assertLogs('irsim.scene_plugins', 'ERROR'):
                self.assertRaises(ConfigError, plugin.load, 'bad')

    def test_not_a_directory(self):
        self.assertRaises(ConfigError, SceneDirectory, '/nonexistent/scenes')


class SceneFileTestCase(unittest.TestCase):
    def test_single_scene(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, 'lab.json')
            with open(path, 'w') as f:
                json.dump(SCENE, f)
            scene = SceneFile(path).load()
        self.assertEqual(scene.name, 'lab')
        self.assertEqual(scene.num_users, 1)

    def test_keyed_scenes(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            path = os.path.join(tmpdir, 'scenes.json')
            with open(path, 'w') as f:
                json.dump({'first': SCENE, 'second': dict(SCENE, users=[[20, 0, 0], [21, 1, 0]])}, f)
            plugin = SceneFile(path)
            self.assertEqual(plugin.load('second').num_users, 2)
            self.assertRaises(ConfigError, plugin.load, 'third')

    def test_missing_file(self):
        self.assertRaises(ConfigError, SceneFile('/nonexistent/scene.json').load, 'x')


class JSONSceneApiTestCase(unittest.TestCase):
    @patch('requests.get')
    def test_simple(self, mock_get):
        response = MagicMock()
        response.ok = True
        response.json.return_value = dict(SCENE)
        mock_get.return_value = response

        scene = JSONSceneApi('http://scenes.example/%s.json').load('lab')

        mock_get.assert_called_once_with('http://scenes.example/lab.json')
        self.assertEqual(scene.name, 'lab')

    @patch('requests.get')
    def test_not_found(self, mock_get):
        response = MagicMock()
        response.ok = False
        response.status_code = 404
        mock_get.return_value = response

        plugin = JSONSceneApi('http://scenes.example/%s.json')
        self.assertIsNone(plugin.lookup('lab'))

    @patch('requests.get')
    def test_malformed(self, mock_get):
        response = MagicMock()
        response.ok = True
        response.json.side_effect = ValueError("Expecting value")
        mock_get.return_value = response

        plugin = JSONSceneApi('http://scenes.example/%s.json')
        self.assertIsNone(plugin.lookup('lab'))


@patch('irsim.scene_plugins.redis')
class SceneRedisTestCase(unittest.TestCase):
    def test_empty(self, mock_redis):
        plugin = SceneRedis('127.0.0.1:1234')

        instance = mock_redis.Redis.return_value
        instance.get.return_value = None

        self.assertIsNone(plugin.lookup('lab'))
        instance.get.assert_called_once_with('lab')
        mock_redis.Redis.assert_called_once_with(host='127.0.0.1', port=1234, db=0, password=None)

    def test_simple(self, mock_redis):
        plugin = SceneRedis('127.0.0.1:1234')

        instance = mock_redis.Redis.return_value
        instance.get.return_value = (' %s ' % json.dumps(SCENE)).encode('utf-8')

        scene = plugin.load('lab')

        self.assertEqual(scene.name, 'lab')
        self.assertEqual(scene.num_irs, 1)

    def test_invalid_json(self, mock_redis):
        plugin = SceneRedis('127.0.0.1:1234')

        instance = mock_redis.Redis.return_value
        instance.get.return_value = b'{"bs": '

        self.assertIsNone(plugin.lookup('lab'))

    def test_namespace(self, mock_redis):
        plugin = SceneRedis('127.0.0.1::::"lab:scenes"')

        instance = mock_redis.Redis.return_value
        instance.get.return_value = None
        plugin.lookup('indoor8')

        instance.get.assert_called_once_with('lab:scenes:indoor8')

    def test_src_only_host(self, mock_redis):
        plugin = SceneRedis('127.0.0.1')

        self.assertEqual(plugin._server, '127.0.0.1')
        self.assertEqual(plugin._port, 6379)
        self.assertEqual(plugin._db, 0)
        self.assertEqual(plugin._password, None)
        self.assertEqual(plugin._namespace, "")

    def test_src_with_everything(self, mock_redis):
        plugin = SceneRedis('127.0.0.1:1234:2:secret:lab')

        self.assertEqual(plugin._port, 1234)
        self.assertEqual(plugin._db, 2)
        self.assertEqual(plugin._password, 'secret')
        self.assertEqual(plugin._namespace, "lab:")

    def test_src_errors(self, mock_redis):
        self.assertRaises(ConfigError, SceneRedis, '127.0.0.1:port')
        self.assertRaises(ConfigError, SceneRedis, 'a:1:2:3:4:5')


class RedisMissingTestCase(unittest.TestCase):
    def test_missing_module(self):
        with patch('irsim.scene_plugins.redis', None):
            self.assertRaises(ConfigError, SceneRedis, '127.0.0.1')


class LoadPluginTestCase(unittest.TestCase):
    def test_short_name(self):
        self.assertIsInstance(load_plugin('ShippedScenes'), ShippedScenes)

    def test_dotted_path(self):
        self.assertIsInstance(load_plugin('irsim.scene_plugins.ShippedScenes'), ShippedScenes)

    def test_unknown(self):
        self.assertRaises(ConfigError, load_plugin, 'NoSuchPlugin')
        self.assertRaises(ConfigError, load_plugin, 'irsim.scene_plugins.NoSuchPlugin')
        self.assertRaises(ConfigError, load_plugin, 'no_such_module.Plugin')
