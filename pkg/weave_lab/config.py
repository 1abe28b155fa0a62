"""
    Run configuration.

    A flat ``key=value`` file whose keys are option names of any
    subcommand (``overlap = 0.5``, ``fixed-k = 23``). Values become click
    defaults, so command-line flags still win.
"""
import logging
import os

from flask import Config

from weave_lab.errors import ConfigError

log = logging.getLogger(__name__)


def normalize_key(key):
    """ ``fixed-k`` -> ``FIXED_K`` """
    return key.strip().replace('-', '_').upper()


def parse_key_values(f):
    """ Mapping of normalised keys to raw string values. """
    values = {}
    for number, line in enumerate(f, 1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError('Line %d is not key=value: %r' % (number, line))
        key, value = line.split('=', 1)
        key = normalize_key(key)
        if not key:
            raise ConfigError('Line %d has an empty key' % number)
        values[key] = value.strip()
    return values


class RunConfig(Config):
    """
        Settings shared by every subcommand.

        `known`
            Normalised names of every option the command line accepts;
            any other key is rejected.
    """
    def __init__(self, root_path=None, defaults=None, known=None):
        super(RunConfig, self).__init__(root_path or os.getcwd(), defaults)
        self.known = set(known) if known is not None else None

    def load_file(self, path):
        try:
            self.from_file(path, load=parse_key_values)
        except (IOError, OSError) as ex:
            raise ConfigError('Cannot read config %s: %s' % (path, ex))

        self.check_known()
        log.debug('Loaded %d settings from %s', len(self), path)
        return self

    def check_known(self):
        if self.known is None:
            return
        unknown = sorted(key for key in self if key not in self.known)
        if unknown:
            raise ConfigError('Unknown config keys: %s' % ', '.join(unknown))

    def command_defaults(self, params, multiple=()):
        """
            Click ``default_map`` entries for a command.

            `params`
                Click parameter names (``fixed_k``) of the command.
            `multiple`
                Names of repeatable options; their values are split on ``;``.
        """
        defaults = {}
        for name in params:
            key = normalize_key(name)
            if key not in self:
                continue
            value = self[key]
            if name in multiple:
                value = [item.strip() for item in value.split(';') if item.strip()]
            defaults[name] = value
        return defaults

    def default_map(self, commands):
        """
            `commands`
                Mapping of command name to a ``(params, multiple)`` pair of
                parameter names.
        """
        return dict((name, self.command_defaults(params, multiple))
                    for name, (params, multiple) in commands.items())
