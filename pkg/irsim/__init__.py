from irsim.errors import *  # noqa: F401,F403
from irsim.scene import *  # noqa: F401,F403
from irsim.channel import *  # noqa: F401,F403
from irsim.beamforming import *  # noqa: F401,F403
from irsim.routing import *  # noqa: F401,F403
from irsim.training import *  # noqa: F401,F403
from irsim.estimation import *  # noqa: F401,F403
