# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

'''
Exception hierarchy of the conversion toolkit.

Every exception carries the `exit_code` the command line maps it to:
0 success, 2 usage error, 3 data/model error, 4 internal invariant violation.
Data and configuration errors also derive from `ValueError`.
'''


class SnnConvError(Exception):
    exit_code = 4


class ConfigError(SnnConvError, ValueError):
    exit_code = 2


class GraphError(SnnConvError, ValueError):
    exit_code = 3


class ShapeMismatchError(GraphError):

    def __init__(self, message, layer_index=None):
        if layer_index is not None:
            message = f'layer {layer_index}: {message}'
        super().__init__(message)
        self.layer_index = layer_index


class ThresholdError(SnnConvError, ValueError):
    exit_code = 3


class EmptyDataError(SnnConvError, ValueError):
    exit_code = 3


class ModelIOError(SnnConvError, ValueError):
    exit_code = 3


class MagicMismatchError(ModelIOError):
    pass


class UnsupportedVersionError(ModelIOError):
    pass


class DanglingReferenceError(ModelIOError):

    def __init__(self, name, path=None):
        msg = f'weight reference "{name}" has no entry in the weight blob'
        if path is not None:
            msg += f' {path}'
        super().__init__(msg)
        self.name = name


class ShapeInconsistencyError(ModelIOError):

    def __init__(self, name, message):
        super().__init__(f'entry "{name}": {message}')
        self.name = name


class DatasetFormatError(ModelIOError):
    pass


class InvariantError(SnnConvError, RuntimeError):
    exit_code = 4
