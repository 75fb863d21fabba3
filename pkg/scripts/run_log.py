#!/usr/bin/env python3
"""
Run Log - Timestamped level logging shared by every strato component
Lines go to stdout and, while a run directory is active, to <out.dir>/run.log
"""

import os
from datetime import datetime

from config_loader import LOG_LEVEL

LEVELS = {'DEBUG': 10, 'INFO': 20, 'WARN': 30, 'ERROR': 40}

_state = {'min_level': LEVELS.get(LOG_LEVEL, 20), 'log_file': None}


def set_level(level: str):
    """Change the minimum level printed (DEBUG, INFO, WARN, ERROR)."""
    _state['min_level'] = LEVELS.get(level.upper(), 20)


def set_log_file(path):
    """Append every accepted line to `path` until cleared with None."""
    if path is not None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    _state['log_file'] = path


def log(level: str, component: str, message: str):
    if LEVELS.get(level, 20) < _state['min_level']:
        return
    ts = datetime.now().strftime('%H:%M:%S')
    print(f"[{ts}] [{level}] {message}")
    path = _state['log_file']
    if path is None:
        return
    try:
        with open(path, 'a') as f:
            f.write(f"[{ts}] [{level}] [{component}] {message}\n")
    except OSError:
        pass
