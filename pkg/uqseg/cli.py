#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Command-line interface: ``uqseg <subcommand> ...``.

Exit codes are 0 on success, 2 for usage or data errors and 1 for anything
else.
"""

import argparse
import json
import logging
import os
import os.path
import sys

import numpy as np

from uqseg import (adaptation, calibration, fusion, losses, metrics, pipeline, scoring, tensorio,
                   training, weather)
from uqseg.conf import Conf, load_overrides

logger = logging.getLogger(__name__)

log_format = '%(asctime)s %(name)s %(levelname)s %(message)s'


def _threads(args):
    return args.threads if args.threads else args.cnf.num_threads()


def _write_json(path, obj):
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2)
        f.write('\n')


def _fmt(value):
    return 'NA' if value is None else f'{value:.6f}'


def cmd_eval(args):
    cnf = args.cnf.section('metrics', load_overrides(args.config))
    manifest = tensorio.read_manifest(args.manifest, num_classes=args.num_classes, ood_ids=args.ood_ids)
    report, pooled = metrics.evaluate_dataset(manifest,
                                              num_bins=args.num_bins or cnf['num_bins'],
                                              aggregate=args.aggregate or cnf['aggregate'],
                                              tpr_level=args.tpr_level or cnf['tpr_level'],
                                              num_threads=_threads(args), progress=args.progress,
                                              return_stats=True)
    os.makedirs(args.out_dir, exist_ok=True)
    report.write_json(os.path.join(args.out_dir, 'report.json'))
    report.write_csv(os.path.join(args.out_dir, 'report.csv'))
    if args.plots:
        from uqseg import plotting
        plotting.plot_reliability(pooled.bins, os.path.join(args.out_dir, 'reliability.png'))
        plotting.plot_ood_curves(pooled.score, pooled.positives, os.path.join(args.out_dir, 'ood_curves.png'))
    print(report.format_table())
    return 0


def _score_one(logits, method, params, normalize):
    if params is not None:
        if method != 'msp':
            raise ValueError('temperature params apply to msp scoring only')
        return scoring.probs_prediction(calibration.apply_params(logits, params))
    return scoring.score_logits(logits, scoring.ScoreConfig(method, normalize))


def _save_conf(path, conf, bounded, png):
    if bounded:
        tensorio.save_confidence(path, conf, png=png)
    else:
        tensorio.store_tensor(path, conf)


def cmd_score(args):
    cnf = args.cnf.section('scoring', load_overrides(args.config))
    normalize = cnf['normalize_energy'] and not args.raw_energy
    bounded = args.method != 'energy' or normalize

    if args.method == 'maskformer':
        if not (args.class_scores and args.mask_logits and args.out_pred and args.out_conf):
            raise ValueError('maskformer scoring needs --class-scores, --mask-logits, --out-pred and --out-conf')
        cal = args.cnf.section('calibration')
        out = calibration.MaskFormerOutput(tensorio.load_tensor(args.class_scores, kind='features'),
                                           tensorio.load_tensor(args.mask_logits, kind='features'))
        t = calibration.TemperatureParams(args.mask_temperature or cal['mask_temperature'])
        pred, conf = calibration.maskformer_output(out, t, args.mask_mode or cal['mask_mode'])
        tensorio.save_class_map(args.out_pred, pred)
        _save_conf(args.out_conf, conf, True, args.png_conf)
        return 0

    params = calibration.read_params(args.params) if args.params else None

    if args.manifest:
        if not args.out_dir:
            raise ValueError('--manifest needs --out-dir')
        manifest = tensorio.read_manifest(args.manifest, require=('gt', 'logits'))
        os.makedirs(args.out_dir, exist_ok=True)
        ext = '.png' if args.png_conf else '.uqt'
        records = []
        for rec in manifest.records:
            stem = os.path.splitext(os.path.basename(rec.logits))[0]
            pred, conf = _score_one(tensorio.load_tensor(rec.logits, kind='logits'), args.method, params, normalize)
            pred_path = os.path.join(args.out_dir, f'{stem}_pred.png')
            conf_path = os.path.join(args.out_dir, f'{stem}_conf{ext}')
            tensorio.save_class_map(pred_path, pred)
            _save_conf(conf_path, conf, bounded, args.png_conf)
            records.append({key: (None if val is None else os.path.relpath(val, args.out_dir))
                            for key, val in (('image', rec.image), ('gt', rec.gt), ('pred', pred_path),
                                             ('conf', conf_path), ('logits', rec.logits))})
        tensorio.write_manifest(os.path.join(args.out_dir, 'manifest.jsonl'), records,
                                num_classes=manifest.num_classes, ood_ids=manifest.ood_ids)
        logger.info(f'Scored {len(records)} records with {args.method}')
        return 0

    if not (args.logits and args.out_pred and args.out_conf):
        raise ValueError('score needs --manifest/--out-dir or --logits/--out-pred/--out-conf')
    pred, conf = _score_one(tensorio.load_tensor(args.logits, kind='logits'), args.method, params, normalize)
    tensorio.save_class_map(args.out_pred, pred)
    _save_conf(args.out_conf, conf, bounded, args.png_conf)
    return 0


def _validation_pairs(args):
    if args.val_manifest:
        manifest = tensorio.read_manifest(args.val_manifest, require=('gt', 'logits'))
        return ([tensorio.load_tensor(r.logits, kind='logits') for r in manifest.records],
                [tensorio.load_class_map(r.gt) for r in manifest.records], manifest.ood_ids)
    if not args.logits or not args.gt or len(args.logits) != len(args.gt):
        raise ValueError('calibrate needs --val-manifest or matching --logits and --gt lists')
    ood_ids = args.ood_ids if args.ood_ids is not None else args.cnf.get('dataset')['ood_ids']
    return ([tensorio.load_tensor(p, kind='logits') for p in args.logits],
            [tensorio.load_class_map(p) for p in args.gt], ood_ids)


def cmd_calibrate(args):
    cnf = args.cnf.section('calibration', load_overrides(args.config))
    objective = args.objective or cnf['objective']
    grid = {k: cnf[k] for k in ('grid_min', 'grid_max', 'grid_points', 'xtol')}
    num_bins = args.cnf.get('metrics')['num_bins']
    val_logits, val_gt, ood_ids = _validation_pairs(args)

    if args.method == 'ts':
        params = calibration.fit_temperature(val_logits, val_gt, objective, num_bins, ood_ids, **grid)
    else:
        params = calibration.fit_poly_temperature(val_logits, val_gt, objective, num_bins, ood_ids,
                                                  sweeps=cnf['sweeps'], **grid)
    calibration.write_params(args.out_params, params)
    print(json.dumps(params.to_dict()))
    return 0


def _load_map(path):
    """ Probability map or confidence map, by file contents. """

    if tensorio.is_uqt1(path):
        arr = tensorio.load_tensor(path)
        return tensorio.check_tensor(arr, kind='probs' if arr.ndim == 3 else 'confidence')
    return tensorio.load_confidence(path)


def _need(inputs, n, op):
    if len(inputs) != n:
        raise ValueError(f'{op} takes {n} inputs, got {len(inputs)}')


def cmd_fuse(args):
    cnf = args.cnf.section('fusion', load_overrides(args.config))
    inputs = args.inputs
    op = args.op
    png = args.out.endswith('.png')
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)

    if op == 'avg':
        maps = [_load_map(p) for p in inputs]
        out = fusion.average_probs(maps)
        if out.ndim == 3:
            tensorio.store_tensor(args.out, out)
        else:
            tensorio.save_confidence(args.out, out, png=png)
    elif op == 'vote':
        preferred = cnf['preferred_model'] if args.preferred_model is None else args.preferred_model
        preds = [tensorio.load_class_map(p) for p in inputs]
        tensorio.save_class_map(args.out, fusion.majority_vote(preds, fusion.VoteConfig(preferred)))
    elif op == 'recip':
        _need(inputs, 2, op)
        a, b = (tensorio.load_confidence(p) for p in inputs)
        tensorio.save_confidence(args.out, fusion.reciprocal_fuse(a, b), png=png)
    elif op == 'overlay':
        _need(inputs, 2, op)
        background, overlay = (tensorio.load_confidence(p) for p in inputs)
        threshold = cnf['overlay_threshold'] if args.threshold is None else args.threshold
        tensorio.save_confidence(args.out, fusion.overlay_fuse(background, overlay, threshold), png=png)
    elif op == 'regionnorm':
        _need(inputs, 1, op)
        rn = cnf['region_norm']
        for key, val in (('low_conf_threshold', args.low), ('ood_fraction_threshold', args.ood_fraction),
                         ('ood_conf_threshold', args.ood_conf), ('mean_filter_kernel', args.kernel),
                         ('connectivity', args.connectivity)):
            if val is not None:
                rn[key] = val
        conf = tensorio.load_confidence(inputs[0])
        tensorio.save_confidence(args.out, fusion.region_normalize(conf, fusion.RegionNormConfig(**rn)), png=png)
    else:
        _need(inputs, 2, op)
        if args.bias_a is None or args.bias_b is None:
            raise ValueError('biasood needs --bias-a and --bias-b')
        a, b = (tensorio.load_class_map(p) for p in inputs)
        tensorio.save_mask(args.out, fusion.bias_disagreement_ood(a, b, args.bias_a, args.bias_b))
    if args.plot:
        if op not in ('recip', 'overlay', 'regionnorm'):
            raise ValueError(f'--plot needs a confidence output, not {op}')
        from uqseg import plotting
        plotting.plot_confidence(tensorio.load_confidence(args.out), args.plot, title=op)
    logger.info(f'fuse {op}: {len(inputs)} inputs -> {args.out}')
    return 0


def cmd_augment(args):
    cnf = args.cnf.get('weather')
    overrides = load_overrides(args.config)
    seed = args.seed if args.seed is not None else args.cnf.get('runtime')['seed']
    cfg = None
    if args.kind in ('rain', 'snow', 'night', 'cutout'):
        cfg = weather.make_config(args.kind, {**cnf.get(args.kind, {}), **overrides}, seed)
    if args.kind == 'crop' and args.rect is None:
        raise ValueError('crop needs --rect TOP LEFT HEIGHT WIDTH')
    written = weather.augment_corpus(args.in_dir, args.out, args.kind, cfg, seed=seed, fraction=args.fraction,
                                     label_dir=args.labels, rect=args.rect, num_threads=_threads(args))
    print(f'{len(written)} images written to {args.out}')
    return 0


def cmd_adapt(args):
    running = adaptation.read_stats(args.running)
    if args.instance:
        instance = adaptation.read_stats(args.instance)
    elif args.features:
        instance = adaptation.instance_stats([tensorio.load_tensor(p, kind='features') for p in args.features])
    else:
        raise ValueError('adapt needs --instance or --features')
    alpha, mixed = adaptation.adapt(running, instance)
    kls = adaptation.layer_kl(running, instance)
    if args.out_alpha:
        _write_json(args.out_alpha, {'alpha': alpha, 'layer_kl': [float(k) for k in kls]})
    if args.out_stats:
        adaptation.write_stats(args.out_stats, mixed)
    print(f'alpha {alpha:.6f}')
    return 0


def cmd_loss(args):
    cnf = args.cnf.section('losses', load_overrides(args.config))
    ignore_id = args.cnf.get('dataset')['ignore_id']
    logits = tensorio.load_tensor(args.logits, kind='logits')

    if args.kind == 'softce':
        if not args.targets:
            raise ValueError('softce needs --targets')
        per_pixel = np.ma.asarray(losses.soft_ce(logits, tensorio.load_tensor(args.targets, kind='probs')))
        value = losses.mean_loss(per_pixel)
    else:
        if not args.gt:
            raise ValueError(f'{args.kind} needs --gt')
        gt = tensorio.load_class_map(args.gt)
        if args.kind == 'focal':
            per_pixel = losses.focal_loss_from_logits(logits, gt, losses.FocalConfig(**cnf['focal']), ignore_id)
            value = losses.mean_loss(per_pixel)
        else:
            per_pixel = losses.pixel_ce(logits, gt, ignore_id)
            if args.kind == 'ohem':
                _, value = losses.ohem_select(per_pixel, losses.OhemConfig(ignore_id=ignore_id, **cnf['ohem']))
            else:
                value = losses.mean_loss(per_pixel)

    if args.out:
        tensorio.store_tensor(args.out, per_pixel.filled(0.))
    print(_fmt(value))
    return 0


def _read_json(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f'file ({path}) not found')
    with open(path, 'r') as f:
        return json.load(f)


def cmd_sample_plan(args):
    freqs = _read_json(args.freqs)
    if isinstance(freqs, dict):
        freqs = freqs['freqs']
    incl = training.sampling_probability(freqs, args.bias)
    print(json.dumps([round(float(p), 6) for p in incl]))
    if args.labels:
        seed = args.seed if args.seed is not None else args.cnf.get('runtime')['seed']
        plan = training.sampling_plan(_read_json(args.labels), freqs, args.bias, np.random.default_rng(seed))
        if args.out:
            _write_json(args.out, [bool(v) for v in plan])
        print(f'{int(plan.sum())} of {len(plan)} samples included')
    return 0


def cmd_conf_filter(args):
    top_k = args.top_k if args.top_k is not None else args.cnf.get('training')['top_k']
    conf = tensorio.load_confidence(args.conf)
    pred = tensorio.load_class_map(args.pred)
    mask = training.confidence_filter(conf, pred, top_k)
    tensorio.save_mask(args.out, mask)
    print(f'{int(mask.sum())} pixels marked unknown')
    return 0


def cmd_pipeline(args):
    parser = build_parser()

    def prepare(ns):
        ns.cnf = args.cnf
        if not ns.threads:
            ns.threads = args.threads

    pipeline.run(args.recipe, parser, commands, prepare=prepare, produced=args.produced)
    return 0


def _common(parser):
    parser.add_argument('--config', type=str, default=None, help='JSON/YAML overrides for this command')
    parser.add_argument('--threads', type=int, default=None, help='worker threads (overrides UQSEG_THREADS)')
    parser.add_argument('--verbose', '-v', action='store_true', help='debug logging')


def build_parser():
    parser = argparse.ArgumentParser(prog='uqseg', description='Uncertainty toolkit for semantic segmentation')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('eval', help='evaluate a manifest and write report.json / report.csv')
    _common(p)
    p.add_argument('--manifest', required=True)
    p.add_argument('--out-dir', default='.')
    p.add_argument('--aggregate', choices=['global', 'per-image'], default=None)
    p.add_argument('--num-bins', type=int, default=None)
    p.add_argument('--tpr-level', type=float, default=None)
    p.add_argument('--num-classes', type=int, default=None)
    p.add_argument('--ood-ids', type=int, nargs='*', default=None)
    p.add_argument('--plots', action='store_true', help='also write reliability and ROC/PR figures')
    p.add_argument('--progress', action='store_true')
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser('score', help='prediction and confidence maps from logits')
    _common(p)
    p.add_argument('--method', choices=['msp', 'energy', 'maskformer'], default='msp')
    p.add_argument('--manifest', default=None, help='manifest with logits entries')
    p.add_argument('--out-dir', default=None)
    p.add_argument('--logits', default=None)
    p.add_argument('--out-pred', default=None)
    p.add_argument('--out-conf', default=None)
    p.add_argument('--params', default=None, help='temperature params JSON from calibrate')
    p.add_argument('--raw-energy', action='store_true', help='write unnormalized energy')
    p.add_argument('--png-conf', action='store_true', help='write confidence as 16-bit PNG')
    p.add_argument('--class-scores', default=None)
    p.add_argument('--mask-logits', default=None)
    p.add_argument('--mask-temperature', type=float, default=None)
    p.add_argument('--mask-mode', choices=list(calibration.mask_modes), default=None)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser('calibrate', help='fit temperature parameters on validation logits')
    _common(p)
    p.add_argument('--method', choices=['ts', 'pts'], default='ts')
    p.add_argument('--objective', choices=list(calibration.objectives), default=None)
    p.add_argument('--val-manifest', default=None, help='validation manifest with logits entries')
    p.add_argument('--logits', nargs='+', default=None)
    p.add_argument('--gt', nargs='+', default=None)
    p.add_argument('--ood-ids', type=int, nargs='*', default=None)
    p.add_argument('--out-params', required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser('fuse', help='combine predictions or confidence maps')
    _common(p)
    p.add_argument('--op', choices=list(fusion.ops), required=True)
    p.add_argument('--inputs', nargs='+', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--threshold', type=float, default=None)
    p.add_argument('--preferred-model', type=int, default=None)
    p.add_argument('--low', type=float, default=None)
    p.add_argument('--ood-fraction', type=float, default=None)
    p.add_argument('--ood-conf', type=float, default=None)
    p.add_argument('--kernel', type=int, default=None)
    p.add_argument('--connectivity', type=int, choices=[4, 8], default=None)
    p.add_argument('--bias-a', type=int, default=None)
    p.add_argument('--bias-b', type=int, default=None)
    p.add_argument('--plot', default=None, help='confidence map figure of the output')
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser('augment', help='weather and geometric augmentation of an image directory')
    _common(p)
    p.add_argument('--kind', choices=list(weather.kinds), required=True)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--in', dest='in_dir', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--fraction', type=float, default=None)
    p.add_argument('--labels', default=None, help='label directory for geometric kinds')
    p.add_argument('--rect', type=int, nargs=4, default=None, metavar=('TOP', 'LEFT', 'HEIGHT', 'WIDTH'))
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser('adapt', help='blend running and instance normalization statistics')
    _common(p)
    p.add_argument('--running', required=True)
    p.add_argument('--instance', default=None)
    p.add_argument('--features', nargs='+', default=None, help='one feature tensor per layer')
    p.add_argument('--out-alpha', default=None)
    p.add_argument('--out-stats', default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser('loss', help='loss value of logits against labels')
    _common(p)
    p.add_argument('--kind', choices=list(losses.kinds), required=True)
    p.add_argument('--logits', required=True)
    p.add_argument('--gt', default=None)
    p.add_argument('--targets', default=None)
    p.add_argument('--out', default=None, help='per-pixel loss map')
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser('sample-plan', help='class inclusion probabilities for biased sampling')
    _common(p)
    p.add_argument('--freqs', required=True)
    p.add_argument('--bias', type=int, required=True)
    p.add_argument('--labels', default=None, help='JSON list of sample labels to draw a plan for')
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_sample_plan)

    p = sub.add_parser('conf-filter', help='mask low-confidence pixels of a pseudo-label')
    _common(p)
    p.add_argument('--conf', required=True)
    p.add_argument('--pred', required=True)
    p.add_argument('--top-k', type=int, default=None)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_conf_filter)

    p = sub.add_parser('pipeline', help='run a recipe of subcommands')
    _common(p)
    p.add_argument('--recipe', required=True)
    p.add_argument('--produced', default=None, help='produced-files manifest path')
    p.set_defaults(func=cmd_pipeline)

    return parser


commands = ('eval', 'score', 'calibrate', 'fuse', 'augment', 'adapt', 'loss', 'sample-plan', 'conf-filter',
            'pipeline')


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2

    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format=log_format)
    args.cnf = Conf()
    logger.debug(f'Running {args.command} with {vars(args)}')
    try:
        return args.func(args) or 0
    except (ValueError, OSError) as exc:
        logger.error(f'{args.command}: {exc}')
        return 2
    except Exception:
        logger.exception(f'{args.command}: internal error')
        return 1


if __name__ == '__main__':
    sys.exit(main())
