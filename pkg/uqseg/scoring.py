#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Prediction and confidence maps from logits: MSP baseline and energy score. """

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from uqseg import tensorio

logger = logging.getLogger(__name__)

methods = ('msp', 'energy')


@dataclass(frozen=True)
class ScoreConfig:
    method: str = 'msp'
    normalize_energy: bool = True

    def __post_init__(self):
        if self.method not in methods:
            raise ValueError(f'unknown scoring method {self.method}')


def _check_logits(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim < 1 or logits.shape[0] < 2:
        raise ValueError('logits need at least 2 classes on axis 0')
    if not np.all(np.isfinite(logits)):
        raise ValueError('non-finite logits')
    return logits


def argmax_prediction(logits):
    """ Per-pixel class with the highest logit; ties go to the lowest index. """

    return np.argmax(_check_logits(logits), axis=0).astype(np.uint8)


def msp_confidence(logits):
    """ Maximum softmax probability per pixel. """

    return special.softmax(_check_logits(logits), axis=0).max(axis=0)


def energy_score(logits):
    """ Log-sum-exp of the logits per pixel; higher is more in-distribution. """

    return special.logsumexp(_check_logits(logits), axis=0)


def energy_to_confidence(energy):
    """ Per-image min-max normalization of an energy map to [0, 1].

    A constant map maps to 0.5 everywhere.
    """

    energy = np.asarray(energy, dtype=np.float64)
    if not np.all(np.isfinite(energy)):
        raise ValueError('non-finite energies')
    lo, hi = energy.min(), energy.max()
    if hi == lo:
        logger.warning('Constant energy map. Assigning confidence 0.5 everywhere.')
        return np.full(energy.shape, 0.5)
    return (energy - lo)/(hi - lo)


def score_logits(logits, cfg=ScoreConfig()):
    """ Prediction and confidence maps for one logit tensor.

    Returns
    -------
    (class map, confidence map)
    """

    pred = argmax_prediction(logits)
    if cfg.method == 'msp':
        conf = msp_confidence(logits)
    else:
        conf = energy_score(logits)
        if cfg.normalize_energy:
            conf = energy_to_confidence(conf)
    return pred, conf


def probs_prediction(probs):
    """ Prediction and MSP confidence from an already-normalized probability map. """

    probs = tensorio.check_tensor(np.asarray(probs, dtype=np.float64), kind='probs')
    return np.argmax(probs, axis=0).astype(np.uint8), probs.max(axis=0)
