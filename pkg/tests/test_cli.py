import json
import os
import os.path
import shutil

import numpy as np
import pytest

from uqseg import adaptation, cli, fixture, metrics, tensorio

_install_dir = os.path.abspath(os.path.dirname(__file__))


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    monkeypatch.delenv('UQSEG_CONFIG', raising=False)
    monkeypatch.delenv('UQSEG_THREADS', raising=False)


@pytest.fixture
def dataset(tmp_path):
    root = str(tmp_path / 'fixture')
    shutil.copytree(os.path.join(_install_dir, 'data', 'fixture'), root)
    return fixture.fixture_paths(root)


def _report(out_dir):
    with open(os.path.join(out_dir, 'report.json'), 'r') as f:
        return json.load(f)


def test_eval_golden(tmp_path, dataset):
    """
    Evaluate the 4-image fixture and compare report.json byte for byte with the stored report.
    """

    out_dir = str(tmp_path / 'report')
    assert cli.main(['eval', '--manifest', dataset['manifest'], '--out-dir', out_dir]) == 0

    with open(os.path.join(out_dir, 'report.json'), 'rb') as f:
        produced = f.read()
    with open(os.path.join(_install_dir, 'data/golden_report.json'), 'rb') as f:
        assert produced == f.read()

    with open(os.path.join(out_dir, 'report.csv'), 'r') as f:
        lines = f.read().splitlines()
    assert lines[0] == 'mAUROC,mAUPR,mFPR,mECE,mIoU'
    assert lines[1] == '0.833333,0.700000,0.500000,0.033333,0.716667'


def test_eval_prints_table(dataset, tmp_path, capsys):
    cli.main(['eval', '--manifest', dataset['manifest'], '--out-dir', str(tmp_path / 'r')])
    out = capsys.readouterr().out
    assert 'mAUROC' in out and '0.8333' in out


def test_eval_plots(tmp_path, dataset):
    out_dir = str(tmp_path / 'report')
    assert cli.main(['eval', '--manifest', dataset['manifest'], '--out-dir', out_dir, '--plots']) == 0
    assert os.path.exists(os.path.join(out_dir, 'reliability.png'))
    assert os.path.exists(os.path.join(out_dir, 'ood_curves.png'))


def test_eval_per_image_single_record(tmp_path, dataset):
    manifest = tensorio.read_manifest(dataset['manifest'])
    rec = manifest.records[0]
    single = str(tmp_path / 'single.jsonl')
    tensorio.write_manifest(single, [{'image': rec.image, 'gt': rec.gt, 'pred': rec.pred, 'conf': rec.conf}],
                            num_classes=3, ood_ids=[255])

    assert cli.main(['eval', '--manifest', single, '--out-dir', str(tmp_path / 'g')]) == 0
    assert cli.main(['eval', '--manifest', single, '--out-dir', str(tmp_path / 'p'), '--aggregate', 'per-image']) == 0
    glob_, per = _report(str(tmp_path / 'g')), _report(str(tmp_path / 'p'))
    for col in metrics.columns:
        assert glob_[col] == per[col]
    # every rotation of the frame gives the pooled values
    assert glob_['mauroc'] == 0.833333


def test_eval_errors(tmp_path):
    empty = tmp_path / 'empty.jsonl'
    empty.write_text('')
    assert cli.main(['eval', '--manifest', str(empty), '--out-dir', str(tmp_path / 'r')]) == 2
    assert cli.main(['eval', '--manifest', str(tmp_path / 'missing.jsonl')]) == 2
    assert cli.main(['eval']) == 2
    assert cli.main(['frobnicate']) == 2


def test_score_then_eval(tmp_path, dataset):
    scored = str(tmp_path / 'scored')
    assert cli.main(['score', '--manifest', dataset['manifest'], '--out-dir', scored]) == 0
    assert sorted(os.listdir(scored))[:2] == ['logits_0_conf.uqt', 'logits_0_pred.png']

    assert cli.main(['eval', '--manifest', os.path.join(scored, 'manifest.jsonl'),
                     '--out-dir', str(tmp_path / 'report')]) == 0
    report = _report(str(tmp_path / 'report'))
    with open(os.path.join(_install_dir, 'data/golden_report.json'), 'r') as f:
        golden = json.load(f)
    for col in metrics.columns:
        assert report[col] == pytest.approx(golden[col], abs=1e-5)


def test_score_single_energy(tmp_path, dataset):
    logits = os.path.join(os.path.dirname(dataset['manifest']), 'logits_0.uqt')
    pred_out, conf_out = str(tmp_path / 'pred.png'), str(tmp_path / 'conf.uqt')
    assert cli.main(['score', '--method', 'energy', '--logits', logits, '--out-pred', pred_out,
                     '--out-conf', conf_out]) == 0
    conf = tensorio.load_confidence(conf_out)
    assert conf.min() == 0. and conf.max() == pytest.approx(1.)
    np.testing.assert_array_equal(tensorio.load_class_map(pred_out), fixture.base_pred)

    assert cli.main(['score', '--logits', logits]) == 2


def test_score_maskformer(tmp_path):
    cs, ml = str(tmp_path / 'c.uqt'), str(tmp_path / 'm.uqt')
    tensorio.store_tensor(cs, np.zeros((1, 2)))
    tensorio.store_tensor(ml, np.zeros((1, 1, 1)))
    pred_out, conf_out = str(tmp_path / 'p.png'), str(tmp_path / 'c_out.uqt')
    assert cli.main(['score', '--method', 'maskformer', '--class-scores', cs, '--mask-logits', ml,
                     '--mask-temperature', '1', '--out-pred', pred_out, '--out-conf', conf_out]) == 0
    assert tensorio.load_confidence(conf_out)[0, 0] == pytest.approx(0.25)
    assert tensorio.load_class_map(pred_out)[0, 0] == 0


def test_calibrate_and_rescore(tmp_path, dataset):
    params = str(tmp_path / 'ts.json')
    assert cli.main(['calibrate', '--val-manifest', dataset['manifest'], '--objective', 'nll',
                     '--out-params', params]) == 0
    with open(params, 'r') as f:
        assert json.load(f)['tau'] > 0

    assert cli.main(['calibrate', '--method', 'pts', '--val-manifest', dataset['manifest'],
                     '--out-params', str(tmp_path / 'pts.json')]) == 0
    assert cli.main(['score', '--manifest', dataset['manifest'], '--params', str(tmp_path / 'pts.json'),
                     '--out-dir', str(tmp_path / 'scored')]) == 0


def test_fuse_ops(tmp_path):
    def conf(name, values):
        path = str(tmp_path / name)
        tensorio.store_tensor(path, np.array(values, dtype=np.float64).reshape(1, -1))
        return path

    a, b = conf('a.uqt', [0.5, 0.8]), conf('b.uqt', [0.5, 0.8])
    out = str(tmp_path / 'out.uqt')
    assert cli.main(['fuse', '--op', 'recip', '--inputs', a, b, '--out', out]) == 0
    np.testing.assert_allclose(tensorio.load_confidence(out)[0], [0.25, 0.4], rtol=1e-6)

    assert cli.main(['fuse', '--op', 'overlay', '--inputs', conf('bg.uqt', [0.9, 0.9]), out, '--out', out]) == 0
    np.testing.assert_allclose(tensorio.load_confidence(out)[0], [0.25, 0.4], rtol=1e-6)

    preds = []
    for i, values in enumerate(([1, 2], [2, 2], [3, 1])):
        preds.append(str(tmp_path / f'pred{i}.png'))
        tensorio.save_class_map(preds[-1], np.array([values], dtype=np.uint8))
    vote = str(tmp_path / 'vote.png')
    assert cli.main(['fuse', '--op', 'vote', '--inputs', *preds, '--out', vote]) == 0
    np.testing.assert_array_equal(tensorio.load_class_map(vote), [[3, 2]])
    assert cli.main(['fuse', '--op', 'vote', '--inputs', *preds, '--out', vote, '--preferred-model', '0']) == 0
    np.testing.assert_array_equal(tensorio.load_class_map(vote), [[1, 2]])

    mask = str(tmp_path / 'ood.png')
    assert cli.main(['fuse', '--op', 'biasood', '--inputs', preds[0], preds[1], '--out', mask,
                     '--bias-a', '1', '--bias-b', '2']) == 0
    np.testing.assert_array_equal(tensorio.load_mask(mask), [[True, False]])

    assert cli.main(['fuse', '--op', 'recip', '--inputs', a, '--out', out]) == 2


def test_fuse_regionnorm(tmp_path):
    path = str(tmp_path / 'conf.uqt')
    conf = np.full((3, 3), 0.9)
    conf[1] = [0.30, 0.35, 0.50]
    tensorio.store_tensor(path, conf)
    out = str(tmp_path / 'norm.uqt')
    assert cli.main(['fuse', '--op', 'regionnorm', '--inputs', path, '--out', out, '--kernel', '1']) == 0
    np.testing.assert_allclose(tensorio.load_confidence(out)[1], 0.3, rtol=1e-6)

    fig = str(tmp_path / 'norm.png')
    assert cli.main(['fuse', '--op', 'regionnorm', '--inputs', path, '--out', out, '--plot', fig]) == 0
    assert os.path.getsize(fig) > 0


def test_augment(tmp_path):
    in_dir = str(tmp_path / 'images')
    os.makedirs(in_dir)
    for i in range(4):
        tensorio.save_image(os.path.join(in_dir, f'img{i}.png'), fixture.base_image())
    out_dir = str(tmp_path / 'rainy')
    assert cli.main(['augment', '--kind', 'rain', '--in', in_dir, '--out', out_dir, '--seed', '3',
                     '--fraction', '0.25']) == 0
    assert len(os.listdir(out_dir)) == 1

    assert cli.main(['augment', '--kind', 'crop', '--in', in_dir, '--out', out_dir]) == 2


def test_adapt(tmp_path):
    run_dir = str(tmp_path / 'running')
    adaptation.write_stats(run_dir, adaptation.FeatureStats([np.zeros(2)], [np.ones(2)]))
    feats = str(tmp_path / 'layer0.uqt')
    tensorio.store_tensor(feats, np.random.default_rng(0).normal(size=(2, 8, 8)))
    alpha_out = str(tmp_path / 'alpha.json')
    assert cli.main(['adapt', '--running', run_dir, '--features', feats, '--out-alpha', alpha_out,
                     '--out-stats', str(tmp_path / 'mixed')]) == 0
    with open(alpha_out, 'r') as f:
        alpha = json.load(f)['alpha']
    assert 0.5 <= alpha < 1.
    assert adaptation.read_stats(str(tmp_path / 'mixed')).num_layers == 1

    assert cli.main(['adapt', '--running', run_dir, '--instance', run_dir]) == 0


def test_loss(tmp_path, capsys):
    logits, gt = str(tmp_path / 'l.uqt'), str(tmp_path / 'gt.png')
    tensorio.store_tensor(logits, np.zeros((4, 2, 2)))
    tensorio.save_class_map(gt, np.zeros((2, 2), dtype=np.uint8))
    assert cli.main(['loss', '--kind', 'ce', '--logits', logits, '--gt', gt]) == 0
    assert capsys.readouterr().out.strip() == f'{np.log(4.):.6f}'
    assert cli.main(['loss', '--kind', 'ohem', '--logits', logits, '--gt', gt]) == 0
    assert capsys.readouterr().out.strip() == f'{np.log(4.):.6f}'

    tensorio.save_class_map(gt, np.full((2, 2), 255, dtype=np.uint8))
    assert cli.main(['loss', '--kind', 'ce', '--logits', logits, '--gt', gt]) == 0
    assert capsys.readouterr().out.strip() == 'NA'

    assert cli.main(['loss', '--kind', 'softce', '--logits', logits]) == 2


def test_sample_plan(tmp_path, capsys):
    freqs, labels = tmp_path / 'f.json', tmp_path / 'labels.json'
    freqs.write_text(json.dumps([0.5, 0.3, 0.2]))
    labels.write_text(json.dumps([0, 1, 2]*10))
    out = str(tmp_path / 'plan.json')
    assert cli.main(['sample-plan', '--freqs', str(freqs), '--bias', '2', '--labels', str(labels),
                     '--seed', '4', '--out', out]) == 0
    probs = json.loads(capsys.readouterr().out.splitlines()[0])
    np.testing.assert_allclose(probs, [0.1400, 0.1710, 0.6890], atol=1e-4)
    with open(out, 'r') as f:
        assert len(json.load(f)) == 30

    assert cli.main(['sample-plan', '--freqs', str(freqs), '--bias', '3']) == 2


def test_conf_filter(tmp_path):
    conf, pred, out = str(tmp_path / 'c.uqt'), str(tmp_path / 'p.png'), str(tmp_path / 'm.png')
    tensorio.store_tensor(conf, np.array([[0.25, 0.75, 0.5, 0.5]]))
    tensorio.save_class_map(pred, np.array([[0, 0, 1, 1]], dtype=np.uint8))
    assert cli.main(['conf-filter', '--conf', conf, '--pred', pred, '--out', out]) == 0
    np.testing.assert_array_equal(tensorio.load_mask(out), [[True, False, False, False]])
