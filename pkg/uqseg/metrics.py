#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Challenge metrics: mIoU, ECE, AUROC, AUPR and FPR at 95% TPR.

OOD pixels (ground truth in ``ood_ids``) are the positive class of the
detection metrics and are excluded from mIoU and ECE. The OOD score of a
pixel is ``1 - confidence``. Undefined values are returned as ``None``.
"""

import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from astropy.io import ascii
from astropy.table import Table
from progress.bar import Bar
import sklearn.metrics as skm

from uqseg import tensorio
from uqseg.tensorio import IGNORE_ID

logger = logging.getLogger(__name__)

columns = ['mauroc', 'maupr', 'mfpr', 'mece', 'miou']  # challenge table order


def _check_shapes(*arrs):
    shape = np.shape(arrs[0])
    for arr in arrs[1:]:
        if np.shape(arr) != shape:
            raise ValueError(f'shape mismatch: {shape} vs {np.shape(arr)}')


def confusion_matrix(pred, gt, num_classes, ood_ids=(IGNORE_ID,)):
    """ Count matrix with entry (g, p) = pixels with gt g predicted as p.

    Pixels whose gt is IGNORE_ID or in ood_ids are excluded.
    """

    _check_shapes(pred, gt)
    good = tensorio.evaluable_mask(gt, ood_ids)
    g = np.asarray(gt)[good].astype(np.int64)
    p = np.asarray(pred)[good].astype(np.int64)
    if g.size and (g.max() >= num_classes or p.max() >= num_classes):
        raise ValueError(f'class IDs >= num_classes ({num_classes}) at evaluated pixels')
    cm = np.bincount(g*num_classes + p, minlength=num_classes**2)
    return cm.reshape(num_classes, num_classes)


def per_class_iou(cm):
    """ IoU per class, NaN for classes with no support (TP+FP+FN = 0). """

    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ValueError('confusion matrix must be square')
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    with np.errstate(invalid='ignore', divide='ignore'):
        return np.where(union > 0, tp/union, np.nan)


def miou(cm):
    """ Mean IoU over supported classes, or None when no class has support. """

    iou = per_class_iou(cm)
    if np.all(np.isnan(iou)):
        logger.warning('mIoU undefined: no class has support')
        return None
    return float(np.nanmean(iou))


@dataclass
class BinnedCalibration:
    """ Equal-width confidence bins over [0, 1] (last bin closed).

    Holds sums so that bins from several images merge by addition.
    """

    num_bins: int
    counts: np.ndarray = None
    conf_sums: np.ndarray = None
    acc_sums: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros(self.num_bins, dtype=np.int64)
            self.conf_sums = np.zeros(self.num_bins)
            self.acc_sums = np.zeros(self.num_bins)

    def __add__(self, other):
        if other.num_bins != self.num_bins:
            raise ValueError('cannot merge calibration bins of different sizes')
        return BinnedCalibration(self.num_bins, self.counts + other.counts,
                                 self.conf_sums + other.conf_sums, self.acc_sums + other.acc_sums)

    @property
    def total(self):
        return int(self.counts.sum())

    def mean_confidence(self):
        with np.errstate(invalid='ignore'):
            return self.conf_sums/self.counts

    def mean_accuracy(self):
        with np.errstate(invalid='ignore'):
            return self.acc_sums/self.counts

    def ece(self):
        if self.total == 0:
            return None
        full = self.counts > 0
        gaps = np.abs(self.acc_sums[full]/self.counts[full] - self.conf_sums[full]/self.counts[full])
        return float(np.sum(self.counts[full]/self.total*gaps))

    def mce(self):
        """ Largest per-bin gap. """

        if self.total == 0:
            return None
        full = self.counts > 0
        return float(np.max(np.abs(self.acc_sums[full] - self.conf_sums[full])/self.counts[full]))


def calibration_bins(conf, correct, num_bins=15):
    """ Bin confidences and correctness flags (1-d arrays of evaluated pixels). """

    conf = np.asarray(conf, dtype=np.float64).ravel()
    correct = np.asarray(correct, dtype=np.float64).ravel()
    _check_shapes(conf, correct)
    idx = np.clip(np.floor(conf*num_bins).astype(np.int64), 0, num_bins - 1)
    return BinnedCalibration(num_bins,
                             np.bincount(idx, minlength=num_bins),
                             np.bincount(idx, weights=conf, minlength=num_bins),
                             np.bincount(idx, weights=correct, minlength=num_bins))


def ece(conf, pred, gt, num_bins=15, ood_ids=(IGNORE_ID,)):
    """ Expected calibration error over evaluable pixels, None if there are none. """

    _check_shapes(conf, pred, gt)
    good = tensorio.evaluable_mask(gt, ood_ids)
    if not good.any():
        logger.warning('ECE undefined: no evaluable pixels')
        return None
    correct = np.asarray(pred)[good] == np.asarray(gt)[good]
    return calibration_bins(np.asarray(conf)[good], correct, num_bins).ece()


def ood_score(conf):
    """ OOD-positive score from a confidence map. """

    return 1. - np.asarray(conf, dtype=np.float64)


def _split(score, positives):
    score = np.asarray(score, dtype=np.float64).ravel()
    positives = np.asarray(positives, dtype=bool).ravel()
    _check_shapes(score, positives)
    return score, positives


def auroc(score, positives):
    """ Area under the ROC curve, None unless both classes are present.

    Ties count one half, so this equals the Mann-Whitney statistic
    P(score_pos > score_neg) + P(tie)/2.
    """

    score, positives = _split(score, positives)
    npos = int(positives.sum())
    nneg = positives.size - npos
    if npos == 0 or nneg == 0:
        logger.warning(f'AUROC undefined with {npos} positives and {nneg} negatives')
        return None
    return float(skm.roc_auc_score(positives, score))


def aupr(score, positives):
    """ Step-wise average precision, sum over thresholds of (R_k - R_k-1) * P_k. """

    score, positives = _split(score, positives)
    npos = int(positives.sum())
    if npos == 0:
        logger.warning('AUPR undefined: no positives')
        return None
    return float(skm.average_precision_score(positives, score))


def fpr_at_tpr(score, positives, tpr_level=0.95):
    """ FPR at the largest observed threshold whose TPR reaches tpr_level.

    A pixel is flagged positive when its score is >= the threshold, so
    tied scores are all included (ties favour recall).
    """

    score, positives = _split(score, positives)
    npos = int(positives.sum())
    nneg = positives.size - npos
    if npos == 0 or nneg == 0:
        logger.warning(f'FPR undefined with {npos} positives and {nneg} negatives')
        return None
    fpr, tpr, _ = skm.roc_curve(positives, score, drop_intermediate=False)
    return float(fpr[np.argmax(tpr >= tpr_level)])


def fpr_at_95_tpr(score, positives):
    return fpr_at_tpr(score, positives, 0.95)


def roc_curve(score, positives):
    """ (fpr, tpr, thresholds) at each distinct score, starting from (0, 0). """

    score, positives = _split(score, positives)
    fpr, tpr, thresholds = skm.roc_curve(positives, score, drop_intermediate=False)
    thresholds[0] = np.inf
    return fpr, tpr, thresholds


def pr_curve(score, positives):
    """ (recall, precision, thresholds) with thresholds descending. """

    score, positives = _split(score, positives)
    precision, recall, thresholds = skm.precision_recall_curve(positives, score)
    return recall[:-1][::-1], precision[:-1][::-1], thresholds[::-1]


@dataclass
class EvalReport:
    """ Dataset-level metric values; None marks an undefined metric. """

    miou: float = None
    mece: float = None
    mauroc: float = None
    maupr: float = None
    mfpr: float = None
    per_class_iou: list = field(default_factory=list)
    pixel_counts: dict = field(default_factory=dict)
    num_images: int = 0
    num_classes: int = 0
    num_bins: int = 15
    aggregation: str = 'global'

    def to_dict(self, ndigits=6):
        def rnd(v):
            return None if v is None or np.isnan(v) else round(float(v), ndigits)

        out = {'aggregation': self.aggregation,
               'num_images': self.num_images,
               'num_classes': self.num_classes,
               'num_bins': self.num_bins}
        for col in columns:
            out[col] = rnd(getattr(self, col))
        out['per_class_iou'] = [rnd(v) for v in self.per_class_iou]
        out['pixel_counts'] = dict(self.pixel_counts)
        return out

    def to_table(self, ndigits=4):
        """ One-row astropy table in challenge column order, 'NA' for undefined. """

        row = [('NA' if getattr(self, col) is None else f'{getattr(self, col):.{ndigits}f}') for col in columns]
        return Table(rows=[row], names=['mAUROC', 'mAUPR', 'mFPR', 'mECE', 'mIoU'])

    def write_json(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write('\n')

    def write_csv(self, path):
        self.to_table(ndigits=6).write(path, format='ascii.csv', overwrite=True)

    def format_table(self):
        buf = io.StringIO()
        ascii.write(self.to_table(), buf, format='fixed_width')
        return buf.getvalue()


@dataclass
class RecordStats:
    """ Mergeable per-image statistics. """

    cm: np.ndarray
    bins: BinnedCalibration
    score: np.ndarray
    positives: np.ndarray
    ignored: int


def record_stats(pred, conf, gt, num_classes, ood_ids, num_bins=15):
    """ Per-image confusion matrix, calibration bins and OOD score samples. """

    _check_shapes(pred, conf, gt)
    gt = np.asarray(gt)
    good = tensorio.evaluable_mask(gt, ood_ids)
    pos = tensorio.ood_mask(gt, ood_ids)
    cm = confusion_matrix(pred, gt, num_classes, ood_ids)
    correct = np.asarray(pred)[good] == gt[good]
    bins = calibration_bins(np.asarray(conf)[good], correct, num_bins)
    scored = good | pos
    return RecordStats(cm, bins, ood_score(np.asarray(conf)[scored]), pos[scored],
                       int((~scored).sum()))


def _load_record(rec, manifest, num_bins):
    gt = tensorio.load_class_map(rec.gt)
    pred = tensorio.load_class_map(rec.pred, num_classes=manifest.num_classes)
    conf = tensorio.load_confidence(rec.conf)
    return record_stats(pred, conf, gt, manifest.num_classes, manifest.ood_ids, num_bins)


def _metrics(stats_, tpr_level):
    return {'miou': miou(stats_.cm),
            'mece': stats_.bins.ece(),
            'mauroc': auroc(stats_.score, stats_.positives),
            'maupr': aupr(stats_.score, stats_.positives),
            'mfpr': fpr_at_tpr(stats_.score, stats_.positives, tpr_level)}


def evaluate_dataset(manifest, num_bins=15, aggregate='global', tpr_level=0.95, num_threads=1,
                     progress=False, return_stats=False):
    """ Evaluate every record of a manifest.

    Parameters
    ----------
    manifest : DatasetManifest
    num_bins : int
        ECE bin count.
    aggregate : str
        'global' pools all pixels before each metric; 'per-image' averages
        per-image values over images where they are defined.
    tpr_level : float
    num_threads : int
        Records are loaded in parallel; results merge in record order.
    progress : bool
        Show a progress bar on stderr.
    return_stats : bool
        Also return the pooled RecordStats.

    Returns
    -------
    EvalReport, or (EvalReport, RecordStats) with return_stats
    """

    if aggregate not in ('global', 'per-image'):
        raise ValueError(f'unknown aggregation {aggregate}')
    if len(manifest) == 0:
        raise ValueError('empty manifest')

    results = [None]*len(manifest)
    diagnostics = []

    def work(i):
        try:
            return i, _load_record(manifest.records[i], manifest, num_bins), None
        except (OSError, ValueError) as exc:
            return i, None, str(exc)

    bar = Bar('Evaluating records...', max=len(manifest)) if progress else None
    with ThreadPoolExecutor(max_workers=max(1, num_threads)) as pool:
        for i, res, err in pool.map(work, range(len(manifest))):
            if err is not None:
                diagnostics.append((i, err))
            results[i] = res
            if bar is not None:
                bar.next()
    if bar is not None:
        bar.finish()

    if diagnostics:
        raise tensorio.ManifestError('record failures', diagnostics)

    cm = sum(r.cm for r in results)
    bins = results[0].bins
    for r in results[1:]:
        bins = bins + r.bins
    pooled = RecordStats(cm, bins, np.concatenate([r.score for r in results]),
                         np.concatenate([r.positives for r in results]),
                         sum(r.ignored for r in results))

    if aggregate == 'global':
        values = _metrics(pooled, tpr_level)
    else:
        per_image = [_metrics(r, tpr_level) for r in results]
        values = {}
        for key in columns:
            defined = [m[key] for m in per_image if m[key] is not None]
            values[key] = float(np.mean(defined)) if defined else None

    nood = int(pooled.positives.sum())
    counts = {'evaluated': bins.total, 'ood': nood, 'ignored': pooled.ignored,
              'total': bins.total + nood + pooled.ignored}
    logger.info(f'Evaluated {len(results)} records ({aggregate}): {counts}')

    report = EvalReport(per_class_iou=per_class_iou(cm).tolist(), pixel_counts=counts,
                        num_images=len(results), num_classes=manifest.num_classes,
                        num_bins=num_bins, aggregation=aggregate, **values)
    return (report, pooled) if return_stats else report
