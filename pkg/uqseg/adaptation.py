#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Test-time blending of normalization statistics.

Running (training-time) per-channel statistics are mixed with the statistics
of the current image, weighted by how far the image's feature distribution
lies from the running one.
"""

import json
import logging
import os
import os.path
from dataclasses import dataclass

import numpy as np
from scipy import special

from uqseg import tensorio

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureStats:
    """ Per-layer channel means and standard deviations.

    Parameters
    ----------
    means : list of 1-d arrays
    stds : list of 1-d arrays, strictly positive
    """

    means: tuple
    stds: tuple

    def __post_init__(self):
        means = tuple(np.asarray(m, dtype=np.float64).ravel() for m in self.means)
        stds = tuple(np.asarray(s, dtype=np.float64).ravel() for s in self.stds)
        if len(means) != len(stds):
            raise ValueError(f'{len(means)} mean layers vs {len(stds)} std layers')
        for i, (m, s) in enumerate(zip(means, stds)):
            if m.shape != s.shape:
                raise ValueError(f'layer {i}: mean/std shape mismatch {m.shape} vs {s.shape}')
            if not (np.all(np.isfinite(m)) and np.all(np.isfinite(s))):
                raise ValueError(f'layer {i}: non-finite statistics')
            if np.any(s <= 0):
                raise ValueError(f'layer {i}: std must be > 0')
        object.__setattr__(self, 'means', means)
        object.__setattr__(self, 'stds', stds)

    @property
    def num_layers(self):
        return len(self.means)

    def variances(self):
        return [s**2 for s in self.stds]

    def check_compatible(self, other):
        if self.num_layers != other.num_layers:
            raise ValueError(f'layer count mismatch: {self.num_layers} vs {other.num_layers}')
        for i, (a, b) in enumerate(zip(self.means, other.means)):
            if a.shape != b.shape:
                raise ValueError(f'layer {i}: channel mismatch {a.shape} vs {b.shape}')


def gaussian_kl(mu1, sigma1, mu2, sigma2):
    """ KL(N(mu1, sigma1) || N(mu2, sigma2)) for univariate Gaussians; broadcasts. """

    mu1, sigma1, mu2, sigma2 = (np.asarray(v, dtype=np.float64) for v in (mu1, sigma1, mu2, sigma2))
    if np.any(sigma1 <= 0) or np.any(sigma2 <= 0):
        raise ValueError('sigma must be > 0')
    kl = np.log(sigma2/sigma1) + (sigma1**2 + (mu1 - mu2)**2)/(2*sigma2**2) - 0.5
    # rounding can leave tiny negatives at equal parameters
    kl = np.maximum(kl, 0.)
    return float(kl) if kl.ndim == 0 else kl


def layer_kl(running, instance):
    """ Channel-averaged KL(instance || running) per layer. """

    running.check_compatible(instance)
    return np.array([np.mean(gaussian_kl(mi, si, mr, sr))
                     for mr, sr, mi, si in zip(running.means, running.stds, instance.means, instance.stds)])


def mixing_coefficient(running, instance):
    """ sigmoid of the layer-averaged KL; identical stats give 0.5. """

    kls = layer_kl(running, instance)
    alpha = float(special.expit(kls.mean()))
    logger.debug(f'Mean layer KL {kls.mean():.5f} -> alpha {alpha:.5f}')
    return alpha


def mix_stats(running, instance, alpha):
    """ Interpolate means and variances: alpha * instance + (1 - alpha) * running. """

    if not 0 <= alpha <= 1:
        raise ValueError(f'alpha must be in [0, 1], got {alpha}')
    running.check_compatible(instance)
    means = [alpha*mi + (1 - alpha)*mr for mr, mi in zip(running.means, instance.means)]
    var = [alpha*vi + (1 - alpha)*vr for vr, vi in zip(running.variances(), instance.variances())]
    return FeatureStats(means, [np.sqrt(v) for v in var])


def normalize_features(features, stats, layer, epsilon=1e-5):
    """ Standardize a (C, ...) feature tensor with the stats of one layer.

    Returns (v - mu) / sqrt(sigma**2 + epsilon) per channel.
    """

    features = np.asarray(features, dtype=np.float64)
    mu, sigma = stats.means[layer], stats.stds[layer]
    if features.shape[0] != len(mu):
        raise ValueError(f'feature channels {features.shape[0]} vs {len(mu)} in layer {layer}')
    shape = (-1,) + (1,)*(features.ndim - 1)
    return (features - mu.reshape(shape))/np.sqrt(sigma.reshape(shape)**2 + epsilon)


def instance_stats(layers, min_std=1e-12):
    """ Per-channel population mean and std of (C, ...) feature tensors, one per layer.

    Stds below min_std are raised to it so the result stays valid.
    """

    means, stds = [], []
    for feats in layers:
        feats = np.asarray(feats, dtype=np.float64)
        flat = feats.reshape(feats.shape[0], -1)
        means.append(flat.mean(axis=1))
        std = flat.std(axis=1)
        if np.any(std < min_std):
            logger.warning(f'{np.sum(std < min_std)} constant channels; flooring std at {min_std}')
        stds.append(np.maximum(std, min_std))
    return FeatureStats(means, stds)


def adapt(running, instance):
    """ Mixing coefficient and blended statistics for one image. """

    alpha = mixing_coefficient(running, instance)
    return alpha, mix_stats(running, instance, alpha)


def read_stats(dirname):
    """ Read FeatureStats from a directory holding ``index.json`` and UQT1 vectors.

    ``index.json`` is ``{"layers": [{"mean": file, "std": file}, ...]}``.
    """

    index = os.path.join(dirname, 'index.json')
    if not os.path.exists(index):
        raise FileNotFoundError(f'stats index ({index}) not found')
    with open(index, 'r') as f:
        layers = json.load(f)['layers']
    means = [tensorio.load_tensor(os.path.join(dirname, lay['mean']), kind='features') for lay in layers]
    stds = [tensorio.load_tensor(os.path.join(dirname, lay['std']), kind='features') for lay in layers]
    return FeatureStats(means, stds)


def write_stats(dirname, stats):
    os.makedirs(dirname, exist_ok=True)
    layers = []
    for i, (m, s) in enumerate(zip(stats.means, stats.stds)):
        entry = {'mean': f'layer{i:03d}_mean.uqt', 'std': f'layer{i:03d}_std.uqt'}
        tensorio.store_tensor(os.path.join(dirname, entry['mean']), m)
        tensorio.store_tensor(os.path.join(dirname, entry['std']), s)
        layers.append(entry)
    with open(os.path.join(dirname, 'index.json'), 'w') as f:
        json.dump({'layers': layers}, f, indent=2)
        f.write('\n')
