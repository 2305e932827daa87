# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

from . import layers
from . import networkGraph
from . import spectral
from . import modelIO
from . import thresholdBalancer
from . import solverIF
from . import routines
from . import diagnostics
from . import constants
from . import errors

from .networkGraph import NetworkGraph
from .thresholdBalancer import ThresholdBalancer, BalanceConfig
from .solverIF import SolverIF, SimConfig, SpikeTrace
from .diagnostics import ErrorReport, EnergyReport

from ._version import __version__
