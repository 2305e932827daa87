# copyright ################################# #
# This file is part of the snnconv Package.   #
# Copyright (c) snnconv developers, 2026.     #
# ########################################### #

import logging

LOGGER_NAME = 'snnconv'
LOGFILE = 'snnconv.log'


class DimFormatter(logging.Formatter):
    '''Grey, dimmed console output for progress messages'''

    def format(self, record):
        txt = super().format(record)
        if record.levelno <= logging.INFO:
            return '\x1b[2;37m' + txt + '\x1b[0m'
        return txt


def get_logger(verbose=None, logfile=None):
    '''
    Return the package logger, configuring it on request.

    Parameters:
    -----------
    verbose: int or bool, optional
        If truthy, info messages are shown on the terminal. If 0/False
        only warnings and errors are shown. None leaves the level untouched.
    logfile: bool or str, optional
        If True, messages are also appended to `snnconv.log`. A string
        is used as the logfile name.
    '''
    logger = logging.getLogger(LOGGER_NAME)

    if not any(getattr(h, '_snnconv_console', False) for h in logger.handlers):
        console = logging.StreamHandler()
        console.setFormatter(DimFormatter('%(message)s'))
        console._snnconv_console = True
        logger.addHandler(console)
        logger.setLevel(logging.WARNING)
        logger.propagate = False

    if verbose is not None:
        logger.setLevel(logging.INFO if verbose else logging.WARNING)

    if logfile:
        fname = LOGFILE if logfile is True else str(logfile)
        known = [getattr(h, 'baseFilename', None) for h in logger.handlers]
        handler = logging.FileHandler(fname, mode='a')
        if handler.baseFilename in known:
            handler.close()
        else:
            handler.setFormatter(logging.Formatter('%(asctime)s %(levelname)s %(message)s'))
            logger.addHandler(handler)

    return logger


class LogMixin():
    '''Gives a class `self.log(txt)` routed through the package logger'''

    def log(self, txt):
        logger = get_logger()
        if getattr(self, 'verbose', 0):
            # instance verbosity overrides the logger level
            record = logger.makeRecord(logger.name, logging.INFO, __file__, 0, txt, None, None)
            logger.handle(record)
        else:
            logger.debug(txt)
