from . import errors
from . import defaults
from . import dist_core
from . import simplex_opt
from . import bounds
from . import oracle
from . import sharing
from . import run_config
