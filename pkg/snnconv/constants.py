# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

'''
Energy cost library dictionary and numeric defaults

Format:
{
    'operation key' : energy per operation [J],
}

! Note:
* 'sop' is one spike delivered across one synapse (spiking network)
* 'flop' is one floating point operation (analog network)
'''

energy_lib = {
    'sop' : 77e-15,

    'flop' : 12.5e-12,
}

# model-io
FORMAT_VERSION = 1
BLOB_MAGIC = b'SNNF'
DATASET_MAGIC = b'SNND'
LABELS_MAGIC = b'SNNL'
DTYPE_F32 = 0

# threshold balancing
ITERATIONS = 1000
ETA = 0.25
THETA_FLOOR = 1e-6
ROBUST_PERCENTILE = 99.

# spiking simulation
DELAY_WINDOW = 4
T0_EPS = 1e-6

# spectral norm
POWER_ITERS = 10000
POWER_TOL = 1e-12

ACTIVATION_MODES = ('relu', 'clip', 'if')
GRANULARITIES = ('layer', 'channel')
NORM_VARIANTS = ('reshaped', 'operator')
