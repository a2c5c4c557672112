#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Seeded synthesis of adverse conditions on image tensors.

All functions take a (C, H, W) float image in [0, 1] and return a new array of
the same shape, clipped to [0, 1]. Randomness comes only from
``np.random.default_rng(cfg.seed)``.
"""

import glob
import logging
import os
import os.path
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
from scipy import ndimage
from skimage import color, draw

from uqseg import tensorio

logger = logging.getLogger(__name__)

kinds = ('rain', 'snow', 'night', 'cutout', 'flip', 'rot90', 'crop')
geometric_ops = ('hflip', 'rot90', 'crop')


@dataclass(frozen=True)
class RainConfig:
    density: float = 400.
    streak_length: int = 15
    angle: float = 70.
    blur_sigma: float = 1.
    intensity: float = 0.6
    seed: int = 0

    def __post_init__(self):
        if self.density < 0 or self.blur_sigma < 0 or self.streak_length < 0:
            raise ValueError('rain density, streak length and blur must be >= 0')
        if not 0 <= self.intensity <= 1:
            raise ValueError(f'rain intensity must be in [0, 1], got {self.intensity}')


@dataclass(frozen=True)
class SnowConfig:
    particle_density: float = 1500.
    size_range: tuple = (0.5, 2.5)
    vertical_blur: int = 3
    cold_shift: float = 0.5
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.size_range
        if lo > hi or lo < 0:
            raise ValueError(f'invalid snow size range {self.size_range}')
        object.__setattr__(self, 'size_range', (float(lo), float(hi)))
        if self.particle_density < 0:
            raise ValueError('particle density must be >= 0')
        if not 0 <= self.cold_shift <= 1:
            raise ValueError(f'cold shift must be in [0, 1], got {self.cold_shift}')


@dataclass(frozen=True)
class NightConfig:
    brightness: float = 0.4
    contrast: float = 0.8
    saturation: float = 0.7
    hue_shift: float = 10.

    def __post_init__(self):
        if self.brightness <= 0 or self.contrast <= 0 or self.saturation < 0:
            raise ValueError('brightness and contrast must be > 0 and saturation >= 0')


@dataclass(frozen=True)
class CutoutConfig:
    rect_fraction: float = 0.1
    fill_value: float = 0.
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rect_fraction <= 1:
            raise ValueError(f'rect fraction must be in (0, 1], got {self.rect_fraction}')
        if not 0 <= self.fill_value <= 1:
            raise ValueError(f'fill value must be in [0, 1], got {self.fill_value}')


_configs = {'rain': RainConfig, 'snow': SnowConfig, 'night': NightConfig, 'cutout': CutoutConfig}

# red and blue gains of the cold tone shift
k_r = 0.1
k_b = 0.1


def make_config(kind, values=None, seed=None):
    """ Build the config for an augmentation kind from a dict, ignoring unknown keys. """

    if kind not in _configs:
        raise ValueError(f'{kind} takes no config')
    cls = _configs[kind]
    names = {f.name for f in fields(cls)}
    kw = {k: v for k, v in (values or {}).items() if k in names}
    if 'size_range' in kw:
        kw['size_range'] = tuple(kw['size_range'])
    if seed is not None and 'seed' in names:
        kw['seed'] = int(seed)
    return cls(**kw)


def _check_image(img):
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f'image tensor needs 3 dims (C, H, W), got {img.ndim}')
    return img


def line_kernel(length, angle):
    """ Binary kernel holding a centered line of the given length and angle (degrees). """

    length = max(int(round(length)), 1)
    size = length if length % 2 else length + 1
    kernel = np.zeros((size, size))
    c = size//2
    r = (length - 1)/2.
    dy, dx = r*np.sin(np.deg2rad(angle)), r*np.cos(np.deg2rad(angle))
    rr, cc = draw.line(int(round(c + dy)), int(round(c - dx)), int(round(c - dy)), int(round(c + dx)))
    kernel[rr, cc] = 1.
    return kernel


def augment_rain(img, cfg=RainConfig()):
    """ Oriented, blurred rain streaks screen-blended onto the image.

    A sparse noise layer (density per megapixel) is smeared along an
    oriented line kernel, blurred, and blended as img + w*layer*(1 - img).
    """

    img = _check_image(img)
    if cfg.density == 0 or cfg.intensity == 0:
        return img.copy()

    rng = np.random.default_rng(cfg.seed)
    _, h, w = img.shape
    n = min(int(round(cfg.density*h*w/1e6)), h*w)
    noise = np.zeros((h, w))
    if n:
        idx = rng.choice(h*w, size=n, replace=False)
        noise.flat[idx] = rng.uniform(0.5, 1., size=n)

    layer = np.clip(ndimage.convolve(noise, line_kernel(cfg.streak_length, cfg.angle), mode='constant'), 0, 1)
    if cfg.blur_sigma > 0:
        layer = ndimage.gaussian_filter(layer, cfg.blur_sigma)
    logger.debug(f'Rain: {n} streak seeds')
    return np.clip(img + cfg.intensity*layer[None]*(1. - img), 0, 1)


def augment_snow(img, cfg=SnowConfig()):
    """ White discs with a vertical blur over a cold-shifted image. """

    img = _check_image(img)
    if cfg.particle_density == 0 and cfg.cold_shift == 0:
        return img.copy()

    rng = np.random.default_rng(cfg.seed)
    nc, h, w = img.shape
    n = int(round(cfg.particle_density*h*w/1e6))
    layer = np.zeros((h, w))
    for row, col, radius in zip(rng.uniform(0, h, n), rng.uniform(0, w, n), rng.uniform(*cfg.size_range, n)):
        rr, cc = draw.disk((row, col), radius, shape=(h, w))
        layer[rr, cc] = 1.
    if cfg.vertical_blur > 1 and n:
        layer = ndimage.uniform_filter1d(layer, size=int(cfg.vertical_blur), axis=0, mode='constant')

    out = img.copy()
    if nc >= 3 and cfg.cold_shift > 0:
        out[0] *= 1. - cfg.cold_shift*k_r
        out[2] *= 1. + cfg.cold_shift*k_b
    out = out + layer[None]*(1. - out)
    return np.clip(out, 0, 1)


def augment_night(img, cfg=NightConfig()):
    """ Brightness, contrast about the channel mean, then saturation and hue in HSV. """

    img = _check_image(img)
    out = img*cfg.brightness
    if cfg.contrast != 1:
        mean = out.mean(axis=(1, 2), keepdims=True)
        out = (out - mean)*cfg.contrast + mean
    out = np.clip(out, 0, 1)

    if out.shape[0] == 3 and (cfg.saturation != 1 or cfg.hue_shift % 360 != 0):
        hsv = color.rgb2hsv(np.moveaxis(out, 0, -1))
        hsv[..., 1] = np.clip(hsv[..., 1]*cfg.saturation, 0, 1)
        hsv[..., 0] = (hsv[..., 0] + cfg.hue_shift/360.) % 1.
        out = np.moveaxis(color.hsv2rgb(hsv), -1, 0)
    return np.clip(out, 0, 1)


def geometric(img, gt=None, op='hflip', rect=None):
    """ Apply the same flip, rotation or crop to an image and its class map.

    Parameters
    ----------
    img : array (C, H, W)
    gt : class map (H, W), optional
    op : str
        'hflip', 'rot90' (counter-clockwise) or 'crop'.
    rect : tuple (top, left, height, width)
        Crop rectangle, required for 'crop'.

    Returns
    -------
    (image, class map or None)
    """

    img = _check_image(img)
    if gt is not None and np.shape(gt) != img.shape[1:]:
        raise ValueError(f'shape mismatch: image {img.shape} vs gt {np.shape(gt)}')

    if op == 'hflip':
        def f(a):
            return a[..., ::-1]
    elif op == 'rot90':
        def f(a):
            return np.rot90(a, axes=(-2, -1))
    elif op == 'crop':
        if rect is None:
            raise ValueError('crop needs a rect')
        top, left, height, width = (int(v) for v in rect)
        _, h, w = img.shape
        if top < 0 or left < 0 or height < 1 or width < 1 or top + height > h or left + width > w:
            raise ValueError(f'crop rect {rect} outside {h}x{w} image')

        def f(a):
            return a[..., top:top + height, left:left + width]
    else:
        raise ValueError(f'unknown geometric op {op}')

    out = np.ascontiguousarray(f(img))
    return out, (None if gt is None else np.ascontiguousarray(f(np.asarray(gt))))


def cutout(img, cfg=CutoutConfig()):
    """ Fill one seeded rectangle of area about rect_fraction*H*W with fill_value. """

    img = _check_image(img)
    rng = np.random.default_rng(cfg.seed)
    _, h, w = img.shape
    rh = min(max(int(round(np.sqrt(cfg.rect_fraction)*h)), 1), h)
    rw = min(max(int(round(np.sqrt(cfg.rect_fraction)*w)), 1), w)
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    out = img.copy()
    out[:, top:top + rh, left:left + rw] = cfg.fill_value
    return out


def corpus_plan(n_images, fraction, seed=0):
    """ Seeded sample without replacement of round(fraction * n_images) indices. """

    if not 0 <= fraction <= 1:
        raise ValueError(f'fraction must be in [0, 1], got {fraction}')
    k = int(np.floor(fraction*n_images + 0.5))
    rng = np.random.default_rng(seed)
    return set(int(i) for i in rng.choice(n_images, size=k, replace=False))


def apply(kind, img, cfg=None, gt=None, rect=None):
    """ Dispatch one augmentation kind; returns (image, class map or None). """

    if kind == 'rain':
        return augment_rain(img, cfg or RainConfig()), gt
    if kind == 'snow':
        return augment_snow(img, cfg or SnowConfig()), gt
    if kind == 'night':
        return augment_night(img, cfg or NightConfig()), gt
    if kind == 'cutout':
        return cutout(img, cfg or CutoutConfig()), gt
    if kind in ('flip', 'rot90', 'crop'):
        return geometric(img, gt, op='hflip' if kind == 'flip' else kind, rect=rect)
    raise ValueError(f'unknown augmentation {kind}')


def list_images(dirname):
    if not os.path.isdir(dirname):
        raise FileNotFoundError(f'input directory ({dirname}) not found')
    return sorted(glob.glob(os.path.join(dirname, '*.png')) + glob.glob(os.path.join(dirname, '*.uqt')))


def augment_corpus(in_dir, out_dir, kind, cfg=None, seed=0, fraction=None, label_dir=None, rect=None,
                   num_threads=1):
    """ Augment the images of a directory into out_dir, keeping file names.

    Image i uses seed ``seed ^ i``. With fraction set, only the images picked
    by :func:`corpus_plan` are augmented and written. Geometric kinds also
    transform the label of the same name in label_dir into ``out_dir/labels``.

    Returns
    -------
    list of written image paths
    """

    if kind not in kinds:
        raise ValueError(f'unknown augmentation {kind}')
    paths = list_images(in_dir)
    indices = range(len(paths)) if fraction is None else sorted(corpus_plan(len(paths), fraction, seed))
    os.makedirs(out_dir, exist_ok=True)
    if label_dir is not None:
        os.makedirs(os.path.join(out_dir, 'labels'), exist_ok=True)

    def run(i):
        path = paths[i]
        name = os.path.basename(path)
        img_cfg = cfg
        if kind in _configs:
            img_cfg = replace(cfg or make_config(kind), **({'seed': seed ^ i} if kind != 'night' else {}))
        gt = None
        if label_dir is not None and kind in ('flip', 'rot90', 'crop'):
            gt = tensorio.load_class_map(os.path.join(label_dir, os.path.splitext(name)[0] + '.png'))
        out, gt_out = apply(kind, tensorio.load_image(path), img_cfg, gt=gt, rect=rect)
        target = os.path.join(out_dir, name)
        tensorio.save_image(target, out)
        if gt_out is not None:
            tensorio.save_class_map(os.path.join(out_dir, 'labels', os.path.splitext(name)[0] + '.png'), gt_out)
        return target

    with ThreadPoolExecutor(max_workers=max(int(num_threads), 1)) as pool:
        written = list(pool.map(run, indices))
    logger.info(f'Augmented {len(written)} of {len(paths)} images with {kind}')
    return written
