import os.path

import numpy as np

from uqseg import metrics, plotting

_install_dir = os.path.abspath(os.path.dirname(__file__))


def test_figures(tmp_path):
    rng = np.random.default_rng(51)
    conf = rng.random(400)
    bins = metrics.calibration_bins(conf, rng.random(400) < conf, num_bins=10)

    plotting.plot_reliability(bins, str(tmp_path / 'rel.png'), title='reliability')
    plotting.plot_ood_curves(1 - conf, conf < 0.2, str(tmp_path / 'curves.png'))
    plotting.plot_confidence(conf.reshape(20, 20), str(tmp_path / 'conf.png'), ood=conf.reshape(20, 20) < 0.2)

    for name in ('rel.png', 'curves.png', 'conf.png'):
        assert os.path.getsize(str(tmp_path / name)) > 0
