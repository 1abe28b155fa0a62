__version__ = '0.1.0'

#: Version tag of the weight files this release reads and writes.
WEIGHTS_FORMAT = 'WLW1'
