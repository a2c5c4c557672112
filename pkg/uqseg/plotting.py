#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Diagnostic figures: reliability diagram, ROC / PR curves, confidence maps. """

import logging

import numpy as np
import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
from mpl_toolkits.axes_grid1 import make_axes_locatable
try:
    import seaborn as sns
except ImportError:
    sns = None

from uqseg import metrics

logger = logging.getLogger(__name__)


def _palette():
    if sns is not None:
        return sns.color_palette()
    return plt.rcParams['axes.prop_cycle'].by_key()['color']


def plot_reliability(bins, outname='reliability.png', title=None):
    """
    Plot per-bin accuracy against confidence with the gap to the diagonal.

    Parameters
    ----------
    bins : BinnedCalibration
        From metrics.calibration_bins or merged record bins.
    outname : str
        Output figure path.
    title : str, optional
    """

    edges = np.linspace(0, 1, bins.num_bins + 1)
    width = 1./bins.num_bins
    acc = np.nan_to_num(bins.mean_accuracy())
    conf = np.nan_to_num(bins.mean_confidence())
    colors = _palette()

    fig, ax = plt.subplots(figsize=(5, 5))
    ax.bar(edges[:-1], acc, width=width, align='edge', color=colors[0], edgecolor='k', label='accuracy')
    ax.bar(edges[:-1], conf - acc, bottom=acc, width=width, align='edge', color=colors[3], alpha=0.4,
           hatch='//', label='gap')
    ax.plot([0, 1], [0, 1], 'k--', lw=1)
    ece = bins.ece()
    ax.text(0.05, 0.9, f'ECE = {ece:.4f}' if ece is not None else 'ECE = NA', transform=ax.transAxes)
    ax.set_xlabel('confidence')
    ax.set_ylabel('accuracy')
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(loc='lower right')
    if title:
        ax.set_title(title)
    fig.savefig(outname)
    plt.close(fig)
    logger.info(f'Saved reliability diagram to {outname}')


def plot_ood_curves(score, positives, outname='ood_curves.png', title=None):
    """ ROC and precision-recall curves of an OOD score side by side. """

    fpr, tpr, _ = metrics.roc_curve(score, positives)
    recall, precision, _ = metrics.pr_curve(score, positives)
    au, ap = metrics.auroc(score, positives), metrics.aupr(score, positives)

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4.5))
    ax0.plot(fpr, tpr, color=_palette()[0])
    ax0.plot([0, 1], [0, 1], 'k:', lw=1)
    ax0.set_xlabel('FPR')
    ax0.set_ylabel('TPR')
    ax0.set_title('ROC' + (f' (AUROC {au:.4f})' if au is not None else ''))
    ax1.step(recall, precision, where='pre', color=_palette()[1])
    ax1.set_xlabel('recall')
    ax1.set_ylabel('precision')
    ax1.set_title('PR' + (f' (AUPR {ap:.4f})' if ap is not None else ''))
    if title:
        fig.suptitle(title)
    fig.savefig(outname)
    plt.close(fig)
    logger.info(f'Saved OOD curves to {outname}')


def plot_confidence(conf, outname='confidence.png', ood=None, title=None):
    """ Confidence map image, with the OOD ground-truth outline if given. """

    fig, ax = plt.subplots()
    im = ax.imshow(conf, vmin=0, vmax=1, cmap='viridis', interpolation='nearest')
    if ood is not None and np.any(ood):
        ax.contour(np.asarray(ood, dtype=float), levels=[0.5], colors='r', linewidths=1)
    divider = make_axes_locatable(ax)
    cax = divider.append_axes('right', size='5%', pad=0.05)
    fig.colorbar(im, cax=cax, label='confidence')
    if title:
        ax.set_title(title)
    fig.savefig(outname)
    plt.close(fig)
