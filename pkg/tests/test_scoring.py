import os.path

import numpy as np
import pytest

from uqseg import calibration, scoring

_install_dir = os.path.abspath(os.path.dirname(__file__))


def test_argmax():
    logits = np.array([0.1, 2.0, -1.])[:, None, None]
    assert scoring.argmax_prediction(logits)[0, 0] == 1
    assert scoring.argmax_prediction(np.zeros((5, 2, 2))).max() == 0

    with pytest.raises(ValueError):
        scoring.argmax_prediction(np.zeros((1, 2, 2)))


def test_msp():
    assert scoring.msp_confidence(np.zeros((19, 3, 3))) == pytest.approx(np.full((3, 3), 1/19))
    logits = np.array([np.log(3.), 0.])[:, None, None]
    assert scoring.msp_confidence(logits)[0, 0] == pytest.approx(0.75)


def test_msp_bounds():
    logits = np.random.default_rng(11).normal(scale=5., size=(7, 6, 6))
    conf = scoring.msp_confidence(logits)
    assert np.all(conf >= 1/7 - 1e-12)
    assert np.all(conf <= 1.)


def test_energy():
    assert scoring.energy_score(np.zeros((19, 1, 1)))[0, 0] == pytest.approx(np.log(19.))
    logits = np.array([1., 2., 3.])[:, None, None]
    assert scoring.energy_score(logits)[0, 0] == pytest.approx(np.log(np.e + np.e**2 + np.e**3), abs=1e-12)

    big = np.array([1000., 999.])[:, None, None]
    assert np.isfinite(scoring.energy_score(big)).all()


def test_energy_to_confidence():
    np.testing.assert_allclose(scoring.energy_to_confidence(np.array([0., 1., 2.])), [0., 0.5, 1.])
    np.testing.assert_array_equal(scoring.energy_to_confidence(np.full((2, 2), 3.)), np.full((2, 2), 0.5))


def test_score_logits():
    logits = np.random.default_rng(2).normal(size=(4, 5, 5))
    pred, conf = scoring.score_logits(logits, scoring.ScoreConfig('energy'))
    assert pred.dtype == np.uint8
    assert conf.min() == 0. and conf.max() == 1.

    _, raw = scoring.score_logits(logits, scoring.ScoreConfig('energy', normalize_energy=False))
    np.testing.assert_allclose(raw, scoring.energy_score(logits))

    pred_msp, conf_msp = scoring.score_logits(logits)
    np.testing.assert_array_equal(pred_msp, pred)
    np.testing.assert_allclose(conf_msp, scoring.msp_confidence(logits))

    with pytest.raises(ValueError):
        scoring.ScoreConfig('entropy')


def test_energy_shift_identity():
    rng = np.random.default_rng(12)
    for _ in range(50):
        logits = rng.normal(scale=4., size=(int(rng.integers(2, 20)), 5, 7))
        shift = rng.uniform(-50., 50., size=(1, 5, 7))
        np.testing.assert_allclose(scoring.energy_score(logits + shift), scoring.energy_score(logits) + shift[0],
                                   rtol=0, atol=1e-6)


def test_msp_shift_invariance():
    rng = np.random.default_rng(13)
    for _ in range(50):
        logits = rng.normal(scale=4., size=(int(rng.integers(2, 20)), 5, 7))
        shift = rng.uniform(-50., 50., size=(1, 5, 7))
        np.testing.assert_allclose(scoring.msp_confidence(logits + shift), scoring.msp_confidence(logits),
                                   rtol=0, atol=1e-7)


def test_argmax_under_temperature():
    rng = np.random.default_rng(14)
    for _ in range(100):
        logits = rng.normal(scale=3., size=(int(rng.integers(2, 20)), 6, 6))
        tau = float(np.exp(rng.uniform(np.log(0.05), np.log(20.))))
        probs = calibration.apply_temperature(logits, calibration.TemperatureParams(tau))
        np.testing.assert_array_equal(scoring.argmax_prediction(probs), scoring.argmax_prediction(logits))
