# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

import sys

from .cli import main

sys.exit(main())
