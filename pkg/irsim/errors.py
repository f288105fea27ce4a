class SimulationError(Exception):
    exit_code = 1

    def __init__(self, log_msg=None, exit_code=None):
        if exit_code is not None:
            self.exit_code = exit_code
        self.msg = log_msg

        super().__init__('%s %s' % (self.__class__.__name__, log_msg))


class ConfigError(SimulationError):
    exit_code = 2


class DimensionError(SimulationError, ValueError):
    exit_code = 2

    def __init__(self, what, expected, actual):
        self.expected = expected
        self.actual = actual

        super().__init__("%s: expected shape %s, got %s" % (what, expected, actual))


class NoFeasiblePath(SimulationError):
    exit_code = 3

    def __init__(self, user, log_msg=None):
        self.user = user

        if log_msg is None:
            log_msg = "no reflection path from the BS to user %s" % user
        super().__init__(log_msg)


class Infeasible(SimulationError):
    """Raised when no assignment satisfies the routing constraints.

    diagnostics maps each user to a dict with the number of candidate
    paths that were considered and the reason the user could not be
    served.
    """

    exit_code = 3

    def __init__(self, log_msg, diagnostics=None):
        self.diagnostics = diagnostics or {}

        super().__init__(log_msg)


class NotTrainable(SimulationError):
    exit_code = 3

    def __init__(self, path, hop):
        self.path = path
        self.hop = hop

        super().__init__("no beam training row for hop %s of path %s" % (hop, list(path)))


class CombinationLimitError(SimulationError):
    exit_code = 2

    def __init__(self, count, limit):
        self.count = count
        self.limit = limit

        super().__init__("exhaustive search needs %d beam combinations, "
                         "refusing above %d" % (count, limit))


class EstimationError(SimulationError):
    pass


class ProtocolError(SimulationError):
    """Raised when collected beam training tables contradict each other."""
    pass
