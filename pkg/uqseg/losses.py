#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Per-pixel loss values: cross-entropy, OHEM, focal and soft cross-entropy.

Per-pixel maps are numpy masked arrays; ignored pixels are masked.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import special

from uqseg.tensorio import IGNORE_ID

logger = logging.getLogger(__name__)

kinds = ('ce', 'ohem', 'focal', 'softce')


@dataclass(frozen=True)
class OhemConfig:
    base_threshold: float = 0.3567
    min_kept: int = 100000
    ignore_id: int = IGNORE_ID

    def __post_init__(self):
        if self.base_threshold < 0:
            raise ValueError(f'base_threshold must be >= 0, got {self.base_threshold}')
        if self.min_kept < 0:
            raise ValueError(f'min_kept must be >= 0, got {self.min_kept}')


@dataclass(frozen=True)
class FocalConfig:
    alpha_scale: float = 10.
    gamma: float = 2.

    def __post_init__(self):
        if self.alpha_scale <= 0:
            raise ValueError(f'alpha_scale must be > 0, got {self.alpha_scale}')
        if self.gamma < 0:
            raise ValueError(f'gamma must be >= 0, got {self.gamma}')


def _prepare(logits, gt, ignore_id):
    logits = np.asarray(logits, dtype=np.float64)
    gt = np.asarray(gt)
    if logits.ndim < 2 or logits.shape[1:] != gt.shape:
        raise ValueError(f'shape mismatch: logits {logits.shape} vs gt {gt.shape}')
    ignored = gt == ignore_id
    if np.any(gt[~ignored] >= logits.shape[0]):
        raise ValueError(f'gt class IDs >= {logits.shape[0]}')
    labels = np.where(ignored, 0, gt).astype(np.int64)
    return logits, labels, ignored


def _take(arr, labels):
    return np.take_along_axis(arr, labels[None], axis=0)[0]


def pixel_ce(logits, gt, ignore_id=IGNORE_ID):
    """ Cross-entropy -log softmax(logits)[gt] per pixel.

    Parameters
    ----------
    logits : array (N_C, H, W)
    gt : class map (H, W)
    ignore_id : int
        Pixels with this label are masked.

    Returns
    -------
    masked array (H, W)
    """

    logits, labels, ignored = _prepare(logits, gt, ignore_id)
    loss = -_take(special.log_softmax(logits, axis=0), labels)
    return np.ma.masked_array(np.maximum(loss, 0.), mask=ignored)


def ce_gradient(logits, gt, ignore_id=IGNORE_ID):
    """ d pixel_ce / d logits = softmax(logits) - onehot(gt); zero at ignored pixels. """

    logits, labels, ignored = _prepare(logits, gt, ignore_id)
    grad = special.softmax(logits, axis=0)
    np.put_along_axis(grad, labels[None], _take(grad, labels)[None] - 1., axis=0)
    grad[:, ignored] = 0.
    return grad


def ohem_select(losses, cfg=OhemConfig()):
    """ Hard-pixel selection and the mean loss over it.

    Pixels with loss above base_threshold are kept; when fewer than min_kept
    exceed it, the min_kept largest losses are kept instead (stable order on
    ties). An empty selection gives loss 0.

    Returns
    -------
    (boolean mask shaped like losses, scalar loss)
    """

    losses = np.ma.asarray(losses)
    valid = ~np.ma.getmaskarray(losses)
    values = np.asarray(losses.filled(0.), dtype=np.float64)[valid]
    n = len(values)

    min_kept = cfg.min_kept
    if min_kept > n:
        logger.warning(f'min_kept {min_kept} exceeds {n} valid pixels; clamping')
        min_kept = n

    keep = values > cfg.base_threshold
    if keep.sum() < min_kept:
        order = np.argsort(-values, kind='stable')
        keep = np.zeros(n, dtype=bool)
        keep[order[:min_kept]] = True

    selected = np.zeros(losses.shape, dtype=bool)
    selected[valid] = keep
    if not keep.any():
        logger.warning('Empty OHEM selection')
        return selected, 0.
    return selected, float(values[keep].mean())


def ohem_loss(logits, gt, cfg=OhemConfig()):
    return ohem_select(pixel_ce(logits, gt, cfg.ignore_id), cfg)


def focal_loss(prob_true, cfg=FocalConfig()):
    """ -alpha (1 - p)**gamma log p per pixel, p clamped below at 1e-12. """

    mask = np.ma.getmask(prob_true)
    p = np.asarray(np.ma.getdata(prob_true), dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError('probabilities outside [0, 1]')
    nzero = int(np.sum(p < 1e-12))
    if nzero:
        logger.warning(f'Clamped {nzero} probabilities to 1e-12')
    p = np.maximum(p, 1e-12)
    loss = -cfg.alpha_scale*(1. - p)**cfg.gamma*np.log(p)
    return np.ma.masked_array(loss, mask=mask)


def focal_loss_from_logits(logits, gt, cfg=FocalConfig(), ignore_id=IGNORE_ID):
    logits, labels, ignored = _prepare(logits, gt, ignore_id)
    p = _take(special.softmax(logits, axis=0), labels)
    return focal_loss(np.ma.masked_array(p, mask=ignored), cfg)


def soft_ce(logits, soft_targets):
    """ -sum_c t_c log softmax(logits)_c per pixel. """

    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(soft_targets, dtype=np.float64)
    if logits.shape != targets.shape:
        raise ValueError(f'shape mismatch: logits {logits.shape} vs targets {targets.shape}')
    if np.any(np.abs(targets.sum(axis=0) - 1.) > 1e-4):
        raise ValueError('soft targets must sum to 1 per pixel')
    return -(targets*special.log_softmax(logits, axis=0)).sum(axis=0)


def mean_loss(losses):
    """ Mean over unmasked pixels, None when every pixel is masked. """

    losses = np.ma.asarray(losses)
    if losses.count() == 0:
        return None
    return float(losses.mean())
