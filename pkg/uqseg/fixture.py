#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Synthetic 4-image dataset with a planted OOD block.

Every image is a rotation (k = 0..3 quarter turns) of one 4x4 base frame
with 3 classes, so the pooled metrics are four times those of one frame.
X marks OOD (label 255)::

    gt            pred          conf
    0 0 1 1       0 0 1 0       .95 .95 .75 .75
    0 0 1 1       0 0 1 1       .95 .95 .75 .75
    2 2 X X       2 1 0 0       .55 .55 .35 .75
    2 2 X X       2 2 0 0       .95 .95 .75 .35

Per frame: class IoUs 4/5, 3/5, 3/4 (mIoU 0.716667). ECE bins hold six
correct pixels at .95, four pixels at .75 with three correct, and two at .55
with one correct: ECE = (6*.05 + 2*.05)/12 = 0.033333. OOD scores (1 - conf)
are .65, .65, .25, .25 on the block and .05 x6, .25 x4, .45 x2 elsewhere:
AUROC = 640/768, AUPR = .5*1 + .5*.4 = 0.7 and FPR at 95% TPR = 24/48.

The region-normalization recipe fuses two identical mask-classification
confidences (inliers .96, pixel (0, 0) .84, OOD block .5 except .9 at its
top-left) by reciprocal fusion (halving them), overlays the result on the
baseline wherever it is below .6 (everywhere) and region-normalizes with
low .46, OOD level .3, fraction .5 and no mean filter. The OOD block then
forms one component with 3 of 4 pixels below .3 and collapses to .25, the
lone .42 pixel stays as is, and every OOD pixel outscores every inlier:
AUPR rises from 0.7 to 1.

The generated files are checked in under tests/data/fixture; make_fixture
rebuilds the same tree.
"""

import json
import logging
import os
import os.path

import numpy as np

from uqseg import tensorio

logger = logging.getLogger(__name__)

X = tensorio.IGNORE_ID
num_classes = 3
num_images = 4

base_gt = np.array([[0, 0, 1, 1],
                    [0, 0, 1, 1],
                    [2, 2, X, X],
                    [2, 2, X, X]], dtype=np.uint8)
base_pred = np.array([[0, 0, 1, 0],
                      [0, 0, 1, 1],
                      [2, 1, 0, 0],
                      [2, 2, 0, 0]], dtype=np.uint8)
base_conf = np.array([[.95, .95, .75, .75],
                      [.95, .95, .75, .75],
                      [.55, .55, .35, .75],
                      [.95, .95, .75, .35]])
base_m2f = np.array([[.84, .96, .96, .96],
                     [.96, .96, .96, .96],
                     [.96, .96, .90, .50],
                     [.96, .96, .50, .50]])

fused_region_norm = {'low': 0.46, 'ood-conf': 0.3, 'ood-fraction': 0.5, 'kernel': 1, 'connectivity': 8}


def logits_for(pred, conf):
    """ Logits whose softmax puts conf on pred and splits the rest evenly. """

    probs = np.repeat(((1. - conf)/(num_classes - 1))[None], num_classes, axis=0)
    np.put_along_axis(probs, pred[None].astype(np.int64), conf[None], axis=0)
    return np.log(probs)


def base_image():
    rows, cols = np.mgrid[0:4, 0:4]/3.
    return np.stack([rows, cols, (rows + cols)/2.])


def fixture_paths(root):
    """ Manifest and recipe paths of a fixture directory. """

    return {'manifest': os.path.join(root, 'manifest.jsonl'),
            'manifest_fused': os.path.join(root, 'manifest_fused.jsonl'),
            'recipe_fused': os.path.join(root, 'recipe_fused.json')}


def make_fixture(out_dir):
    """ Write the dataset, manifests and recipe into out_dir.

    Returns
    -------
    dict
        Paths of 'manifest', 'manifest_fused' and 'recipe_fused'.
    """

    os.makedirs(out_dir, exist_ok=True)
    records, records_fused, steps = [], [], []

    for i in range(num_images):
        def rot(a):
            return np.ascontiguousarray(np.rot90(a, k=i, axes=(-2, -1)))

        gt, pred, conf, m2f = rot(base_gt), rot(base_pred), rot(base_conf), rot(base_m2f)
        names = {key: f'{key}_{i}{ext}' for key, ext in
                 (('image', '.png'), ('gt', '.png'), ('pred', '.png'), ('conf', '.uqt'), ('logits', '.uqt'),
                  ('m2f_a', '.uqt'), ('m2f_b', '.uqt'))}
        tensorio.save_image(os.path.join(out_dir, names['image']), rot(base_image()))
        tensorio.save_class_map(os.path.join(out_dir, names['gt']), gt)
        tensorio.save_class_map(os.path.join(out_dir, names['pred']), pred)
        tensorio.store_tensor(os.path.join(out_dir, names['conf']), conf)
        tensorio.store_tensor(os.path.join(out_dir, names['logits']), logits_for(pred, conf))
        tensorio.store_tensor(os.path.join(out_dir, names['m2f_a']), m2f)
        tensorio.store_tensor(os.path.join(out_dir, names['m2f_b']), m2f)

        records.append({k: names[k] for k in ('image', 'gt', 'pred', 'conf', 'logits')})

        fused = f'fused/fused_{i}.uqt'
        overlaid = f'fused/overlay_{i}.uqt'
        normalized = f'fused/conf_{i}.uqt'
        steps += [{'name': 'fuse', 'args': {'op': 'recip', 'inputs': [names['m2f_a'], names['m2f_b']], 'out': fused}},
                  {'name': 'fuse', 'args': {'op': 'overlay', 'inputs': [names['conf'], fused], 'out': overlaid,
                                            'threshold': 0.6}},
                  {'name': 'fuse', 'args': {'op': 'regionnorm', 'inputs': [overlaid], 'out': normalized,
                                            **fused_region_norm}}]
        records_fused.append({'image': names['image'], 'gt': names['gt'], 'pred': names['pred'], 'conf': normalized})

    paths = fixture_paths(out_dir)
    tensorio.write_manifest(paths['manifest'], records, num_classes=num_classes, ood_ids=[X])
    tensorio.write_manifest(paths['manifest_fused'], records_fused, num_classes=num_classes, ood_ids=[X])
    steps.append({'name': 'eval', 'args': {'manifest': 'manifest_fused.jsonl', 'out-dir': 'fused/report'}})
    with open(paths['recipe_fused'], 'w') as f:
        json.dump({'steps': steps}, f, indent=2)
        f.write('\n')

    logger.info(f'Wrote {num_images}-image fixture to {out_dir}')
    return paths
