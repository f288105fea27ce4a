'''
Command line of the multi-IRS simulator.

    irsim run --scenario fig6 --seed 7 --out fig6.csv
    irsim validate --config scene.json
    irsim routes --config scene.json --m0 24 --separate
'''

import json
import logging
import optparse
import os
import sys

from irsim import experiments
from irsim.errors import ConfigError, SimulationError
from irsim.routing import (optimal_multi_route, routes_to_json,
                           unconstrained_multi_route)
from irsim.scene import build_los_graph, iter_paths, load_scene, with_irs_elements
from irsim.scene_plugins import load_plugin

logger = logging.getLogger(__name__)

COMMANDS = ('run', 'validate', 'routes')

log_formatter = logging.Formatter("%(message)s")


def _number(text):
    value = float(text)
    if value.is_integer() and 'inf' not in text.lower():
        return int(value)
    return value


def parse_sweep(text):
    """Comma separated sweep values, e.g. "100,200,400" or "0,5,inf"."""
    try:
        values = [_number(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise ConfigError("cannot parse sweep %r" % text)
    if not values:
        raise ConfigError("the sweep %r is empty" % text)
    return values


def make_parser():
    usage = "\n    %prog run --scenario ID [options]"
    usage += "\n    %prog validate --config FILE [options]"
    usage += "\n    %prog routes --config FILE [--m0 M0] [--separate] [options]"
    parser = optparse.OptionParser(usage=usage, prog='irsim')
    parser.add_option("--verbose", "-v", action="store_true",
                      help="verbose messages")
    parser.add_option("--log-file", metavar="FILE", dest="log_file",
                      help="File where logs will be saved")
    parser.add_option("--scenario", metavar="ID",
                      help="scenario to run: %s" % ', '.join(experiments.SCENARIOS))
    parser.add_option("--config", metavar="FILE",
                      help="scenario JSON file, or the source handed to --scene-plugin")
    parser.add_option("--scene-plugin", default=None, metavar="CLASS",
                      help="use a Python class, usually one from irsim.scene_plugins, "
                           "such as SceneDirectory, to load the scene")
    parser.add_option("--scene-name", default=None, metavar="NAME",
                      help="scene to ask the scene plugin for")
    parser.add_option("--seed", type=int, default=0,
                      help="master seed of every random draw")
    parser.add_option("--trials", type=int, default=None,
                      help="Monte-Carlo trials per sweep point (default 100, 20 for fig13 "
                           "without --full-scale)")
    parser.add_option("--sweep", default=None, metavar="LIST",
                      help="comma separated values replacing the scenario's sweep")
    parser.add_option("--out", metavar="FILE",
                      help="write the CSV table to FILE instead of stdout")
    parser.add_option("--workers", type=int, default=None,
                      help="worker processes (capped by IRS_SIM_THREADS)")
    parser.add_option("--full-scale", action="store_true", dest="full_scale",
                      help="use the published sizes instead of the desk-scale ones")
    parser.add_option("--m0", type=int, default=None,
                      help="routes: resize every IRS to M0 x M0")
    parser.add_option("--separate", action="store_true",
                      help="routes: enforce path separation between users")
    return parser


def setup_logging(opts):
    stderr_handler = logging.StreamHandler()
    stderr_handler.setLevel(logging.DEBUG)
    stderr_handler.setFormatter(log_formatter)
    root = logging.getLogger()
    root.addHandler(stderr_handler)
    root.setLevel(logging.INFO)

    if opts.log_file:
        log_file_handler = logging.FileHandler(os.path.abspath(opts.log_file))
        log_file_handler.setLevel(logging.DEBUG)
        log_file_handler.setFormatter(log_formatter)
        root.addHandler(log_file_handler)

    if opts.verbose:
        root.setLevel(logging.DEBUG)


def resolve_scene(opts):
    """The scene named on the command line, or None when there is none."""
    if opts.scene_plugin is not None:
        plugin = load_plugin(opts.scene_plugin, opts.config)
        return plugin.load(opts.scene_name)
    if opts.config:
        return load_scene(opts.config)
    return None


def cmd_run(parser, opts):
    if not opts.scenario:
        parser.error("run needs --scenario")
    if opts.scenario not in experiments.SCENARIOS:
        parser.error("unknown scenario %r" % opts.scenario)
    config = experiments.ExperimentConfig(
        opts.scenario,
        scene=resolve_scene(opts),
        sweep=parse_sweep(opts.sweep) if opts.sweep else None,
        trials=opts.trials,
        seed=opts.seed,
        out=opts.out,
        full_scale=bool(opts.full_scale),
        workers=opts.workers)
    table = experiments.run_scenario(config)
    if opts.out:
        if table.artifacts:
            with open(opts.out + '.routes.json', 'w') as f:
                json.dump(table.artifacts, f, indent=2, sort_keys=True)
    else:
        sys.stdout.write(table.to_csv())
    return 0


def cmd_validate(parser, opts):
    scene = resolve_scene(opts)
    if scene is None:
        parser.error("validate needs --config")
    logger.info("%r is valid" % scene)
    for k in range(1, scene.num_users + 1):
        graph = build_los_graph(scene, k)
        paths = sum(1 for _ in iter_paths(graph))
        logger.info("  - user %d: %d LoS edges, %d reflection paths" % (
            k, len(graph.edges), paths))
    return 0


def cmd_routes(parser, opts):
    scene = resolve_scene(opts)
    if scene is None:
        parser.error("routes needs --config")
    if opts.m0 is not None:
        if opts.m0 < 1:
            parser.error("--m0 must be at least 1")
        scene = with_irs_elements(scene, opts.m0)
    if opts.separate:
        solution = optimal_multi_route(scene)
    else:
        solution = unconstrained_multi_route(scene)
    sys.stdout.write(json.dumps(routes_to_json(solution), indent=2, sort_keys=True) + '\n')
    return 0


HANDLERS = {
    'run': cmd_run,
    'validate': cmd_validate,
    'routes': cmd_routes,
}


def cli_main(args=None, setup=False):
    """Run one subcommand and return its exit code."""
    parser = make_parser()
    try:
        (opts, args) = parser.parse_args(args)

        if setup:
            setup_logging(opts)

        if not args:
            parser.error("Too few arguments")
        if len(args) > 1:
            parser.error("Too many arguments")
        if args[0] not in COMMANDS:
            parser.error("unknown command %r, expected one of %s" % (args[0], ', '.join(COMMANDS)))
        if opts.scene_name and not opts.scene_plugin:
            parser.error("You must use --scene-plugin to use --scene-name")
        if opts.trials is not None and opts.trials < 1:
            parser.error("--trials must be at least 1")

        try:
            return HANDLERS[args[0]](parser, opts)
        except ConfigError as e:
            parser.error(e.msg)
        except SimulationError as e:
            logger.error("%s" % e.msg)
            return e.exit_code
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 1


def irsim_init():
    sys.exit(cli_main(sys.argv[1:], setup=True))
