__all__ = ['tensorio', 'conf', 'metrics', 'scoring', 'calibration', 'adaptation', 'losses', 'fusion',
           'training', 'weather', 'plotting', 'pipeline', 'cli']

from uqseg import *
