#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Pure helpers for biased-class sampling, pseudo-label filtering and EMA updates. """

import logging

import numpy as np
from scipy import special

logger = logging.getLogger(__name__)


def _check_freqs(f, biased_class):
    f = np.asarray(f, dtype=np.float64)
    if f.ndim != 1 or len(f) < 1:
        raise ValueError('class frequencies must be a non-empty vector')
    if np.any(f < 0) or np.any(f > 1):
        raise ValueError('class frequencies must be in [0, 1]')
    if not 0 <= biased_class < len(f):
        raise ValueError(f'biased class {biased_class} out of range for {len(f)} classes')
    return f


def sampling_probability(f, biased_class):
    """ Inclusion probability per class label.

    With p = softmax(1 - f), a sample of the biased class is included with
    probability 0.5 + 0.5 p[biased], any other with 0.5 p[c].

    Parameters
    ----------
    f : array of float
        Class frequencies in [0, 1].
    biased_class : int

    Returns
    -------
    array of float
    """

    f = _check_freqs(f, biased_class)
    p = special.softmax(1. - f)
    incl = 0.5*p
    incl[biased_class] += 0.5
    return incl


def sample_inclusion(label, f, biased_class, rng):
    """ Two-stage draw: on a fair coin success only biased-class samples are kept,
    otherwise a sample is kept with probability p[label].

    rng is a numpy Generator owned by the caller.
    """

    f = _check_freqs(f, biased_class)
    p = special.softmax(1. - f)
    if rng.random() < 0.5:
        return bool(label == biased_class)
    return bool(rng.random() < p[label])


def sampling_plan(labels, f, biased_class, rng):
    """ Vectorised :func:`sample_inclusion` over a list of sample labels.

    Draws two uniforms per sample, so results differ from repeated calls to
    sample_inclusion with the same generator.
    """

    f = _check_freqs(f, biased_class)
    labels = np.asarray(labels, dtype=np.int64)
    if np.any(labels < 0) or np.any(labels >= len(f)):
        raise ValueError('sample labels out of range')
    p = special.softmax(1. - f)
    first = rng.random(len(labels)) < 0.5
    second = rng.random(len(labels)) < p[labels]
    return np.where(first, labels == biased_class, second)


def class_confidence_stats(conf, pred):
    """ Population std and mean of confidence per predicted class.

    Returns
    -------
    dict of class -> (std, mean)
    """

    conf = np.asarray(conf, dtype=np.float64)
    pred = np.asarray(pred)
    if conf.shape != pred.shape:
        raise ValueError(f'shape mismatch: conf {conf.shape} vs pred {pred.shape}')
    stats = {}
    for c in np.unique(pred):
        vals = conf[pred == c]
        stats[int(c)] = (float(vals.std()), float(vals.mean()))
    return stats


def confidence_filter(conf, pred, top_k=3):
    """ Mask of pixels to mark unknown in a pseudo-label.

    The top_k predicted classes by confidence std (ties to the lower class)
    are selected; within each, pixels strictly below the class mean
    confidence are masked.
    """

    conf = np.asarray(conf, dtype=np.float64)
    stats = class_confidence_stats(conf, pred)
    ranked = sorted(stats, key=lambda c: (-stats[c][0], c))[:top_k]

    pred = np.asarray(pred)
    mask = np.zeros(conf.shape, dtype=bool)
    for c in ranked:
        sel = pred == c
        # constant classes have a mean off by rounding; nothing is below it
        if np.ptp(conf[sel]) == 0:
            continue
        mask |= sel & (conf < stats[c][1])
    logger.debug(f'Selected classes {ranked}; masked {mask.sum()} pixels')
    return mask


def ema_update(teacher, student, decay):
    """ decay * teacher + (1 - decay) * student. """

    teacher = np.asarray(teacher, dtype=np.float64)
    student = np.asarray(student, dtype=np.float64)
    if teacher.shape != student.shape:
        raise ValueError(f'length mismatch: {teacher.shape} vs {student.shape}')
    if not 0 <= decay <= 1:
        raise ValueError(f'decay must be in [0, 1], got {decay}')
    return decay*teacher + (1. - decay)*student
