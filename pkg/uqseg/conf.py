"""Configuration for uqseg.

Defaults ship with the package in ``data/uqseg.yaml``. A user file (JSON or
YAML) named by ``UQSEG_CONFIG`` or passed to :class:`Conf` is merged over
them section by section.
"""

import copy
import json
import logging
import os.path

import yaml

logger = logging.getLogger(__name__)

_default_path = os.path.join(os.path.abspath(os.path.dirname(__file__)), 'data', 'uqseg.yaml')


def _read(path):
    with open(path, 'r') as f:
        if path.endswith('.json'):
            return json.load(f)
        return yaml.safe_load(f)


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


class Conf:
    """ Section-wise configuration lookup.

    Parameters
    ----------
    path : str, optional
        User config file. Defaults to the ``UQSEG_CONFIG`` environment variable.
    """

    def __init__(self, path=None):
        self._cnf = _read(_default_path)
        if path is None:
            path = os.environ.get('UQSEG_CONFIG')
        if path:
            try:
                self._cnf = _merge(self._cnf, _read(path) or {})
                logger.debug(f'Merged user config {path}')
            except (OSError, ValueError, yaml.YAMLError) as exc:
                logger.warning(f'Cannot read config {path} ({exc}). Falling back to packaged defaults.')

    def get(self, section):
        """ Return a copy of one config section as a dict. """

        if section not in self._cnf:
            raise KeyError(f'no config section {section}')
        return copy.deepcopy(self._cnf[section])

    def section(self, name, overrides=None):
        """ Config section with a subcommand override dict merged over it. """

        return _merge(self.get(name), overrides or {})

    def num_threads(self):
        """ Worker count, with ``UQSEG_THREADS`` taking precedence. """

        env = os.environ.get('UQSEG_THREADS')
        if env:
            try:
                return max(1, int(env))
            except ValueError:
                logger.warning(f'Ignoring non-integer UQSEG_THREADS={env}')
        return max(1, int(self._cnf['runtime']['num_threads']))


def load_overrides(path):
    """ Read a subcommand ``--config`` file (JSON or YAML) into a dict. """

    if path is None:
        return {}
    if not os.path.exists(path):
        raise FileNotFoundError(f'config file ({path}) not found')
    return _read(path) or {}
