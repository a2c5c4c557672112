#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Ensemble combination of predictions and confidence maps. """

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

logger = logging.getLogger(__name__)

ops = ('avg', 'vote', 'recip', 'overlay', 'regionnorm', 'biasood')


@dataclass(frozen=True)
class VoteConfig:
    preferred_model: int = 2


@dataclass(frozen=True)
class RegionNormConfig:
    """ Thresholds for region normalization.

    Parameters
    ----------
    low_conf_threshold : float
        Pixels strictly below are low-confidence.
    ood_fraction_threshold : float
        A component is OOD when strictly more than this fraction of its
        pixels lies below ood_conf_threshold.
    ood_conf_threshold : float
    mean_filter_kernel : int
        Odd window size; 1 disables the filter.
    connectivity : int
        4 or 8.
    """

    low_conf_threshold: float = 0.6
    ood_fraction_threshold: float = 0.5
    ood_conf_threshold: float = 0.4
    mean_filter_kernel: int = 3
    connectivity: int = 8

    def __post_init__(self):
        for name in ('low_conf_threshold', 'ood_fraction_threshold', 'ood_conf_threshold'):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f'{name} must be in [0, 1]')
        if self.mean_filter_kernel < 1 or self.mean_filter_kernel % 2 == 0:
            raise ValueError(f'mean_filter_kernel must be odd and >= 1, got {self.mean_filter_kernel}')
        if self.connectivity not in (4, 8):
            raise ValueError(f'connectivity must be 4 or 8, got {self.connectivity}')


def _stack(maps, minimum=1):
    if len(maps) < minimum:
        raise ValueError(f'need at least {minimum} maps, got {len(maps)}')
    shapes = {np.shape(m) for m in maps}
    if len(shapes) != 1:
        raise ValueError(f'shape mismatch: {sorted(shapes)}')
    return np.stack([np.asarray(m) for m in maps])


def _same_shape(a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f'shape mismatch: {np.shape(a)} vs {np.shape(b)}')


def average_probs(maps):
    """ Per-pixel, per-class mean of probability maps. """

    return _stack(maps).astype(np.float64).mean(axis=0)


def average_confidence(maps):
    """ Per-pixel mean of confidence maps. """

    return _stack(maps).astype(np.float64).mean(axis=0)


def majority_vote(preds, cfg=VoteConfig()):
    """ Per-pixel most voted class.

    Whenever more than one class reaches the top count, the preferred
    model's prediction is used.
    """

    stack = _stack(preds, minimum=2)
    if not 0 <= cfg.preferred_model < len(stack):
        raise ValueError(f'preferred_model {cfg.preferred_model} out of range for {len(stack)} models')

    votes = (stack[:, None] == stack[None, :]).sum(axis=1)
    top = votes.max(axis=0)
    # each class at the top count contributes top models
    tie = (votes == top).sum(axis=0) > top
    winner = np.take_along_axis(stack, votes.argmax(axis=0)[None], axis=0)[0]
    return np.where(tie, stack[cfg.preferred_model], winner).astype(stack.dtype)


def reciprocal_fuse(conf_a, conf_b):
    """ 1 / (1/a + 1/b) per pixel, inputs clamped below at 1e-12. """

    _same_shape(conf_a, conf_b)
    a = np.maximum(np.asarray(conf_a, dtype=np.float64), 1e-12)
    b = np.maximum(np.asarray(conf_b, dtype=np.float64), 1e-12)
    return 1./(1./a + 1./b)


def overlay_fuse(background, overlay, threshold=0.6):
    """ overlay where overlay < threshold, background elsewhere. """

    _same_shape(background, overlay)
    overlay = np.asarray(overlay, dtype=np.float64)
    return np.where(overlay < threshold, overlay, np.asarray(background, dtype=np.float64))


def _windowed_mean(conf, size):
    # zero padding divided by the in-bounds count gives shrunken border windows
    total = ndimage.uniform_filter(conf, size=size, mode='constant', cval=0.)
    count = ndimage.uniform_filter(np.ones_like(conf), size=size, mode='constant', cval=0.)
    return total/count


def _structure(connectivity):
    return ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)


def region_normalize(conf, cfg=RegionNormConfig()):
    """ Assign low-confidence regions that look OOD their minimum confidence.

    1. Mean-filter the map, replacing only pixels originally below
       low_conf_threshold.
    2. Label connected components of the filtered low-confidence set.
    3. Flag components with more than ood_fraction_threshold of their pixels
       below ood_conf_threshold.
    4. Set every pixel of a flagged component to the component minimum.

    Parameters
    ----------
    conf : confidence map (H, W)
    cfg : RegionNormConfig

    Returns
    -------
    confidence map (H, W)
    """

    conf = np.asarray(conf, dtype=np.float64)
    out = conf.copy()
    low = conf < cfg.low_conf_threshold
    if cfg.mean_filter_kernel > 1 and low.any():
        out[low] = _windowed_mean(conf, cfg.mean_filter_kernel)[low]

    labels, ncomp = ndimage.label(out < cfg.low_conf_threshold, structure=_structure(cfg.connectivity))
    if ncomp == 0:
        logger.debug('No low-confidence components')
        return out

    index = np.arange(1, ncomp + 1)
    frac = np.asarray(ndimage.mean(out < cfg.ood_conf_threshold, labels, index))
    mins = np.asarray(ndimage.minimum(out, labels, index))
    flagged = frac > cfg.ood_fraction_threshold
    logger.info(f'Found {ncomp} components, {flagged.sum()} flagged OOD')

    fill = np.r_[np.nan, np.where(flagged, mins, np.nan)][labels]
    sel = ~np.isnan(fill)
    out[sel] = fill[sel]
    return out


def bias_disagreement_ood(pred_a, pred_b, bias_a, bias_b):
    """ True where both models predict their own bias class. """

    _same_shape(pred_a, pred_b)
    return (np.asarray(pred_a) == bias_a) & (np.asarray(pred_b) == bias_b)


def fused_region_confidence(conf_a, conf_b, background, overlay_threshold=0.6, region_cfg=RegionNormConfig()):
    """ Reciprocal fusion of two confidences, overlaid on a third, then region-normalized. """

    fused = reciprocal_fuse(conf_a, conf_b)
    return region_normalize(overlay_fuse(background, fused, overlay_threshold), region_cfg)
