"""
    Architecture registry.

    Every architecture is a `BaseArchitecture` subclass registered under its
    `name`; `ArchConfig` and `RegModel` look architectures up here.
"""
from weave_lab.errors import ModelError

_architectures = {}


def register(cls):
    """ Class decorator adding an architecture to the registry. """
    _architectures[cls.name] = cls
    return cls


def get_arch(name):
    try:
        return _architectures[name]
    except KeyError:
        raise ModelError('Unknown architecture %r (known: %s)'
                         % (name, ', '.join(names())))


def names():
    return sorted(_architectures)


from .base import BaseArchitecture
from . import reg, reg_vgg, reg_res
