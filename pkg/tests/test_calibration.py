import os.path

import numpy as np
import pytest
from scipy import special

from uqseg import calibration, metrics

_install_dir = os.path.abspath(os.path.dirname(__file__))


def calibrated_set(n, num_classes=3, seed=0, scale=1.):
    """ Logits (N_C, n, 1) and labels drawn from their own softmax. """

    rng = np.random.default_rng(seed)
    z = rng.normal(scale=scale, size=(num_classes, n, 1))
    p = special.softmax(z, axis=0)[:, :, 0]
    cum = np.cumsum(p, axis=0)
    y = np.minimum((rng.random(n)[None] > cum).sum(axis=0), num_classes - 1)
    return z, y[:, None].astype(np.uint8)


def distorted_set(n, transform, seed):
    """ Normalized logits (3, n, 1) with labels drawn from softmax(transform(g)). """

    rng = np.random.default_rng(seed)
    g = np.abs(rng.normal(scale=2., size=(3, n, 1)))
    g -= g.min(axis=0, keepdims=True)
    p = special.softmax(transform(g), axis=0)[:, :, 0]
    y = np.minimum((rng.random(n)[None] > np.cumsum(p, axis=0)).sum(axis=0), 2)[:, None].astype(np.uint8)
    return g, y


def map_ece(probs, gt):
    return metrics.ece(probs.max(axis=0), np.argmax(probs, axis=0), gt)


@pytest.fixture(scope="module")
def overconfident():
    z, y = calibrated_set(50000, seed=1)
    return 5.*z, y


def test_apply_temperature():
    logits = np.array([np.log(9.), 0.])[:, None, None]
    np.testing.assert_allclose(calibration.apply_temperature(logits, calibration.TemperatureParams(2.))[:, 0, 0],
                               [0.75, 0.25])
    np.testing.assert_allclose(calibration.apply_temperature(logits, calibration.TemperatureParams(1.)),
                               special.softmax(logits, axis=0))
    wide = np.random.default_rng(0).normal(scale=10., size=(5, 3, 3))
    uniform = calibration.apply_temperature(wide, calibration.TemperatureParams(1e6))
    assert np.max(np.abs(uniform - 0.2)) < 1e-4

    with pytest.raises(ValueError):
        calibration.TemperatureParams(0.)


def test_normalize_logits():
    np.testing.assert_array_equal(calibration.normalize_logits(np.array([-1., 2.])[:, None]).ravel(), [0., 3.])
    logits = np.array([[0., 1.], [2., 0.]])
    np.testing.assert_array_equal(calibration.normalize_logits(logits), logits)
    z = np.random.default_rng(4).normal(size=(4, 2, 2))
    np.testing.assert_allclose(special.softmax(calibration.normalize_logits(z), axis=0), special.softmax(z, axis=0))


def test_apply_poly_temperature():
    z = np.random.default_rng(5).normal(size=(3, 4, 4))
    plain = calibration.PolyTemperatureParams(tau1=1.)
    np.testing.assert_allclose(calibration.apply_poly_temperature(z, plain), special.softmax(z, axis=0))

    g = np.array([2., 0.])[:, None, None]
    probs = calibration.apply_poly_temperature(g, calibration.PolyTemperatureParams(tau1=2.))
    np.testing.assert_allclose(probs[:, 0, 0], [0.7311, 0.2689], atol=1e-4)

    cubic = calibration.PolyTemperatureParams(1.5, 2., 3., enabled=(True, True, True))
    assert cubic.is_monotone(10.)
    np.testing.assert_array_equal(np.argmax(calibration.apply_poly_temperature(z, cubic), axis=0),
                                  np.argmax(z, axis=0))


def test_poly_params():
    with pytest.raises(ValueError):
        calibration.PolyTemperatureParams(1., 0., 1., enabled=(True, True, False))
    calibration.PolyTemperatureParams(1., 0., 1., enabled=(True, False, False))

    p = calibration.PolyTemperatureParams(1., 1., -1., enabled=(True, False, True))
    assert p.coefficients() == (1., 0., -1.)
    assert p.is_monotone(0.5)
    assert not p.is_monotone(1.)


def test_params_io(tmp_path):
    path = str(tmp_path / 'ts.json')
    calibration.write_params(path, calibration.TemperatureParams(2.5))
    assert calibration.read_params(path) == calibration.TemperatureParams(2.5)

    poly = calibration.PolyTemperatureParams(1.2, 3., -4., enabled=(True, False, True))
    calibration.write_params(path, poly)
    assert calibration.read_params(path) == poly

    with pytest.raises(FileNotFoundError):
        calibration.read_params(str(tmp_path / 'missing.json'))


def test_fit_calibrated():
    z, y = calibrated_set(50000, seed=2)
    tau = calibration.fit_temperature(z, y, objective='nll').tau
    assert 0.9 <= tau <= 1.1


def test_fit_overconfident(overconfident):
    logits, y = overconfident
    params = calibration.fit_temperature(logits, y)
    assert 4. <= params.tau <= 6.

    before = map_ece(special.softmax(logits, axis=0), y)
    after = map_ece(calibration.apply_temperature(logits, params), y)
    assert after <= 0.2*before

    assert 4. <= calibration.fit_temperature(logits, y, objective='nll').tau <= 6.


def test_fit_single_pixel():
    params = calibration.fit_temperature(np.array([[[1.]], [[0.]]]), np.array([[0]], dtype=np.uint8))
    assert 0.05 <= params.tau <= 20.

    with pytest.raises(ValueError, match='no evaluable pixels'):
        calibration.fit_temperature(np.zeros((2, 1, 1)), np.array([[255]], dtype=np.uint8))


def test_fit_list_of_maps(overconfident):
    logits, y = overconfident
    whole = calibration.fit_temperature(logits, y, objective='nll')
    split = calibration.fit_temperature([logits[:, :25000], logits[:, 25000:]], [y[:25000], y[25000:]],
                                        objective='nll')
    assert split.tau == pytest.approx(whole.tau)


def test_poly_not_worse_than_ts():
    z, y = calibrated_set(5000, seed=3)
    logits = 3.*z
    ts = calibration.fit_temperature(logits, y)
    pts = calibration.fit_poly_temperature(logits, y)
    assert pts.is_monotone(float(calibration.normalize_logits(logits).max()))
    ts_ece = map_ece(calibration.apply_temperature(logits, ts), y)
    pts_ece = map_ece(calibration.apply_poly_temperature(logits, pts), y)
    assert pts_ece <= ts_ece + 1e-9


def test_poly_not_worse_than_ts_overconfident(overconfident):
    logits, y = overconfident
    ts = calibration.fit_temperature(logits, y)
    pts = calibration.fit_poly_temperature(logits, y)
    ts_ece = map_ece(calibration.apply_temperature(logits, ts), y)
    pts_ece = map_ece(calibration.apply_poly_temperature(logits, pts), y)
    assert pts_ece <= ts_ece + 1e-9


def test_poly_fits_cubic_distortion():
    """
    Labels follow a cubic of the normalized logits: the polynomial fit beats a single temperature on ECE.
    """

    g, y = distorted_set(20000, lambda g: 0.4*g + 0.05*g**3, seed=9)
    ts = calibration.fit_temperature(g, y)
    pts = calibration.fit_poly_temperature(g, y)
    ts_ece = map_ece(calibration.apply_temperature(g, ts), y)
    pts_ece = map_ece(calibration.apply_poly_temperature(g, pts), y)
    assert pts_ece < ts_ece


def test_poly_fits_quadratic_distortion():
    g, y = distorted_set(5000, lambda g: 0.5*g + 0.3*g**2, seed=6)
    ts = calibration.fit_temperature(g, y, objective='nll')
    pts = calibration.fit_poly_temperature(g, y, objective='nll')

    def nll(probs):
        return -np.mean(np.log(np.take_along_axis(probs[:, :, 0], y.T.astype(np.int64), axis=0)))

    assert nll(calibration.apply_poly_temperature(g, pts)) < nll(calibration.apply_temperature(g, ts))


def test_maskformer_output():
    out = calibration.MaskFormerOutput(np.zeros((1, 2)), np.zeros((1, 1, 1)))
    np.testing.assert_allclose(calibration.maskformer_scores(out)[:, 0, 0], [0.25, 0.25])
    pred, conf = calibration.maskformer_output(out)
    assert pred[0, 0] == 0
    assert conf[0, 0] == pytest.approx(0.25)

    rng = np.random.default_rng(8)
    c, m = rng.normal(size=(5, 4)), rng.normal(scale=3., size=(5, 3, 3))
    out = calibration.MaskFormerOutput(c, m)
    expected = np.einsum('nc,nhw->chw', special.softmax(c, axis=1), special.expit(m))
    np.testing.assert_allclose(calibration.maskformer_scores(out), expected)

    _, conf = calibration.maskformer_output(out, calibration.TemperatureParams(2.), mode='both')
    assert np.all((conf > 0) & (conf < 1))

    with pytest.raises(ValueError):
        calibration.MaskFormerOutput(np.zeros((2, 3)), np.zeros((1, 2, 2)))
    with pytest.raises(ValueError):
        calibration.maskformer_scores(out, mode='logits')
