#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Post-hoc calibration of logits.

Temperature scaling, polynomial temperature scaling of min-normalized
logits, and temperature scaling of mask-classification outputs.
"""

import json
import logging
import os.path
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, special

from uqseg import metrics, tensorio
from uqseg.tensorio import IGNORE_ID

logger = logging.getLogger(__name__)

objectives = ('ece', 'nll')


@dataclass(frozen=True)
class TemperatureParams:
    tau: float = 1.0

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError(f'temperature must be > 0, got {self.tau}')

    def to_dict(self):
        return {'tau': float(self.tau)}


@dataclass(frozen=True)
class PolyTemperatureParams:
    """ Coefficients of G/tau1 + (G/tau2)**2 + (G/tau3)**3; disabled terms give 0. """

    tau1: float = 1.0
    tau2: float = 1.0
    tau3: float = 1.0
    enabled: tuple = (True, False, False)

    def __post_init__(self):
        if len(self.enabled) != 3:
            raise ValueError('enabled needs one flag per term')
        object.__setattr__(self, 'enabled', tuple(bool(e) for e in self.enabled))
        for tau, on in zip(self.taus, self.enabled):
            if on and (tau == 0 or not np.isfinite(tau)):
                raise ValueError(f'enabled temperatures must be finite and nonzero, got {tau}')

    @property
    def taus(self):
        return (self.tau1, self.tau2, self.tau3)

    def with_term(self, k, tau=None, on=True):
        """ Copy with term k (0, 1 or 2) set to tau, or disabled. """

        enabled = list(self.enabled)
        enabled[k] = on
        kw = {'enabled': tuple(enabled)}
        if tau is not None:
            kw[f'tau{k + 1}'] = tau
        return replace(self, **kw)

    def coefficients(self):
        """ (a1, a2, a3) with transform a1*G + a2*G**2 + a3*G**3. """

        return tuple((1./tau**(k + 1) if on else 0.) for k, (tau, on) in enumerate(zip(self.taus, self.enabled)))

    def transform(self, g):
        a1, a2, a3 = self.coefficients()
        return a1*g + a2*g**2 + a3*g**3

    def is_monotone(self, gmax):
        """ Whether the transform is nondecreasing on [0, gmax]. """

        a1, a2, a3 = self.coefficients()
        points = [0., float(gmax)]
        if a3 != 0:
            vertex = -a2/(3.*a3)
            if 0. < vertex < gmax:
                points.append(vertex)
        return all(a1 + 2*a2*g + 3*a3*g**2 >= 0 for g in points)

    def to_dict(self):
        return {'tau1': float(self.tau1), 'tau2': float(self.tau2), 'tau3': float(self.tau3),
                'enabled': list(self.enabled)}


def write_params(path, params):
    with open(path, 'w') as f:
        json.dump(params.to_dict(), f, indent=2)
        f.write('\n')


def read_params(path):
    """ Load TemperatureParams ({tau}) or PolyTemperatureParams ({tau1, tau2, tau3, enabled}). """

    if not os.path.exists(path):
        raise FileNotFoundError(f'params file ({path}) not found')
    with open(path, 'r') as f:
        d = json.load(f)
    if 'tau' in d:
        return TemperatureParams(float(d['tau']))
    return PolyTemperatureParams(float(d['tau1']), float(d['tau2']), float(d['tau3']),
                                 tuple(d.get('enabled', (True, True, True))))


def apply_temperature(logits, params):
    """ softmax(logits / tau) over the class axis. """

    return special.softmax(np.asarray(logits, dtype=np.float64)/params.tau, axis=0)


def normalize_logits(logits):
    """ Subtract the per-pixel minimum over classes. """

    logits = np.asarray(logits, dtype=np.float64)
    return logits - logits.min(axis=0, keepdims=True)


def apply_poly_temperature(logits, params):
    """ softmax of the polynomial transform of the min-normalized logits. """

    return special.softmax(params.transform(normalize_logits(logits)), axis=0)


def apply_params(logits, params):
    if isinstance(params, PolyTemperatureParams):
        return apply_poly_temperature(logits, params)
    return apply_temperature(logits, params)


def _flatten(val_logits, val_gt, ood_ids):
    """ Stack evaluable pixels of one or many maps into (n, N_C) logits and (n,) labels. """

    if isinstance(val_logits, np.ndarray):
        val_logits, val_gt = [val_logits], [val_gt]
    zs, ys = [], []
    for logits, gt in zip(val_logits, val_gt):
        logits = np.asarray(logits, dtype=np.float64)
        gt = np.asarray(gt)
        if logits.shape[1:] != gt.shape:
            raise ValueError(f'shape mismatch: logits {logits.shape} vs gt {gt.shape}')
        good = tensorio.evaluable_mask(gt, ood_ids, num_classes=logits.shape[0])
        zs.append(logits[:, good].T)
        ys.append(gt[good].astype(np.int64))
    z = np.concatenate(zs) if zs else np.zeros((0, 2))
    if len(z) == 0:
        raise ValueError('no evaluable pixels')
    return z, np.concatenate(ys)


def _objective(name, num_bins):
    if name not in objectives:
        raise ValueError(f'unknown objective {name}')

    def ece(probs, y):
        correct = np.argmax(probs, axis=1) == y
        return metrics.calibration_bins(probs.max(axis=1), correct, num_bins).ece()

    def nll(probs, y):
        return float(-np.mean(np.log(np.clip(probs[np.arange(len(y)), y], 1e-12, None))))

    return ece if name == 'ece' else nll


def _fit_1d(f, grid, xtol):
    """ Grid search then bounded refinement between the optimum's neighbours. """

    vals = np.array([f(t) for t in grid])
    i = int(np.argmin(vals))
    best_x, best_f = float(grid[i]), float(vals[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if lo < hi and lo*hi > 0 and np.isfinite(best_f):
        res = optimize.minimize_scalar(f, bounds=(lo, hi), method='bounded', options={'xatol': xtol})
        if res.fun < best_f:
            best_x, best_f = float(res.x), float(res.fun)
    return best_x, best_f


def _grid(cnf):
    return np.geomspace(cnf.get('grid_min', 0.05), cnf.get('grid_max', 20.), int(cnf.get('grid_points', 200)))


def fit_temperature(val_logits, val_gt, objective='ece', num_bins=15, ood_ids=(IGNORE_ID,), **cnf):
    """ Fit a single temperature on validation logits.

    Parameters
    ----------
    val_logits : array (N_C, H, W) or list of arrays
    val_gt : class map or list of class maps
    objective : str
        'ece' (default) or 'nll'.
    num_bins : int
    ood_ids : iterable of int
        Labels excluded from fitting.
    cnf : grid_min, grid_max, grid_points, xtol
        Log-spaced grid bounds and count, and refinement tolerance.

    Returns
    -------
    TemperatureParams
    """

    z, y = _flatten(val_logits, val_gt, ood_ids)
    obj = _objective(objective, num_bins)

    def f(t):
        return obj(special.softmax(z/t, axis=1), y)

    tau, val = _fit_1d(f, _grid(cnf), cnf.get('xtol', 1e-3))
    logger.info(f'Fitted temperature {tau:.4f} ({objective} {f(1.):.5f} -> {val:.5f}) on {len(y)} pixels')
    return TemperatureParams(tau)


def fit_poly_temperature(val_logits, val_gt, objective='ece', num_bins=15, ood_ids=(IGNORE_ID,),
                         sweeps=3, **cnf):
    """ Fit polynomial temperatures by coordinate descent.

    Starts from the fitted single temperature with the quadratic and cubic
    terms disabled. Each sweep visits tau1, tau2, tau3 in turn, comparing the
    term disabled against the 1-d grid-plus-refinement fit used by
    :func:`fit_temperature` (tau3 is searched over both signs). A step is
    accepted only if it lowers the objective and keeps the transform
    nondecreasing over the observed normalized-logit range.

    Returns
    -------
    PolyTemperatureParams
    """

    z, y = _flatten(val_logits, val_gt, ood_ids)
    g = z - z.min(axis=1, keepdims=True)
    gmax = float(g.max())
    obj = _objective(objective, num_bins)
    xtol = cnf.get('xtol', 1e-3)
    pos = _grid(cnf)
    grids = (pos, pos, np.r_[-pos[::-1], pos])

    def evaluate(params):
        if not params.is_monotone(gmax):
            return np.inf
        return obj(special.softmax(params.transform(g), axis=1), y)

    ts = fit_temperature(val_logits, val_gt, objective, num_bins, ood_ids, **cnf)
    params = PolyTemperatureParams(tau1=ts.tau, enabled=(True, False, False))
    best = evaluate(params)

    for sweep in range(sweeps):
        for k in range(3):
            off = params.with_term(k, on=False)
            cand, val = off, evaluate(off)
            tau, fitted = _fit_1d(lambda t: evaluate(params.with_term(k, t)), grids[k], xtol)
            if fitted < val:
                cand, val = params.with_term(k, tau), fitted
            if val < best:
                params, best = cand, val
        if not params.is_monotone(gmax):
            raise RuntimeError('polynomial transform lost monotonicity')
        logger.info(f'Sweep {sweep}: {params.to_dict()} {objective}={best:.5f}')

    return params


@dataclass(frozen=True)
class MaskFormerOutput:
    """ Mask-classification output: class scores (N, N_C), mask logits (N, H, W). """

    class_scores: np.ndarray
    mask_logits: np.ndarray

    def __post_init__(self):
        c, m = np.asarray(self.class_scores), np.asarray(self.mask_logits)
        if c.ndim != 2 or m.ndim != 3:
            raise ValueError('class scores must be (N, N_C) and mask logits (N, H, W)')
        if c.shape[0] != m.shape[0]:
            raise ValueError(f'shape mismatch: {c.shape[0]} class rows vs {m.shape[0]} masks')
        if c.shape[0] < 1:
            raise ValueError('need at least one query')
        if not (np.all(np.isfinite(c)) and np.all(np.isfinite(m))):
            raise ValueError('non-finite mask-classification output')

    @property
    def num_queries(self):
        return np.shape(self.class_scores)[0]


mask_modes = ('class', 'mask', 'both')


def maskformer_scores(out, t=TemperatureParams(1.0), mode='class'):
    """ Per-pixel class scores softmax(C/t)^T . sigmoid(M), shape (N_C, H, W).

    The softmax runs over classes within each query. mode selects where the
    temperature applies: the class scores, the mask logits, or both.
    """

    if mode not in mask_modes:
        raise ValueError(f'unknown temperature mode {mode}')
    c = np.asarray(out.class_scores, dtype=np.float64)
    m = np.asarray(out.mask_logits, dtype=np.float64)
    if mode in ('class', 'both'):
        c = c/t.tau
    if mode in ('mask', 'both'):
        m = m/t.tau
    n, h, w = m.shape
    scores = special.softmax(c, axis=1).T @ special.expit(m).reshape(n, h*w)
    return scores.reshape(-1, h, w)


def maskformer_output(out, t=TemperatureParams(1.0), mode='class'):
    """ Prediction (argmax, lowest index on ties) and confidence (max) maps. """

    scores = maskformer_scores(out, t, mode)
    return np.argmax(scores, axis=0).astype(np.uint8), scores.max(axis=0)
