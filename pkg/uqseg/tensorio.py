#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Shared tensor conventions and file IO.

Arrays are plain numpy arrays:

- image tensors: float, shape (C, H, W), values in [0, 1]
- class maps: uint8, shape (H, W), class IDs or ``IGNORE_ID``
- confidence maps: float, shape (H, W), values in [0, 1]
- logit maps: float, shape (N_C, H, W)
- probability maps: float, shape (N_C, H, W), summing to 1 per pixel

Tensors are stored in the UQT1 format: magic ``b'UQT1'``, one ``u8`` ndim,
ndim little-endian ``u64`` dims, then little-endian ``f32`` row-major payload.
"""

import json
import logging
import os.path
import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy import special

logger = logging.getLogger(__name__)

IGNORE_ID = 255
MAGIC = b'UQT1'

_kinds = {'logits': 3, 'probs': 3, 'image': 3, 'confidence': 2, 'features': None, None: None}


class FormatError(ValueError):
    """ File contents do not follow the expected format. """


class ManifestError(ValueError):
    """ One or more manifest records are invalid.

    ``diagnostics`` is a list of ``(record_index, message)``.
    """

    def __init__(self, message, diagnostics=()):
        self.diagnostics = list(diagnostics)
        lines = [message] + [f'record {i}: {msg}' for i, msg in self.diagnostics]
        super().__init__('\n'.join(lines))


def _check_exists(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f'file ({path}) not found')


def check_tensor(arr, kind=None):
    """ Validate an array against the invariants of a tensor kind.

    Parameters
    ----------
    arr : numpy array
    kind : str or None
        One of 'logits', 'probs', 'image', 'confidence', 'features' or None.

    Returns
    -------
    numpy array
        The input, unchanged.
    """

    if kind not in _kinds:
        raise ValueError(f'unknown tensor kind {kind}')
    ndim = _kinds[kind]
    if ndim is not None and arr.ndim != ndim:
        raise FormatError(f'{kind} tensor needs {ndim} dims, got {arr.ndim}')
    if kind is not None and not np.all(np.isfinite(arr)):
        raise FormatError('non-finite values')
    if kind in ('image', 'confidence', 'probs') and arr.size and (arr.min() < 0 or arr.max() > 1):
        raise FormatError(f'{kind} values outside [0, 1]')
    if kind == 'probs' and not np.allclose(arr.sum(axis=0), 1., atol=1e-5):
        raise FormatError('probabilities do not sum to 1 per pixel')
    return arr


def load_tensor(path, kind=None):
    """ Read a UQT1 tensor file.

    Parameters
    ----------
    path : str
    kind : str or None
        Tensor kind to validate against (see :func:`check_tensor`).

    Returns
    -------
    numpy array of float32
    """

    _check_exists(path)
    with open(path, 'rb') as f:
        raw = f.read()

    if raw[:4] != MAGIC:
        raise FormatError(f'bad magic in {path}')
    if len(raw) < 5:
        raise FormatError(f'truncated tensor header in {path}')
    ndim = raw[4]
    header = 5 + 8*ndim
    if len(raw) < header:
        raise FormatError(f'truncated tensor header in {path}')
    dims = struct.unpack(f'<{ndim}Q', raw[5:header])
    nbytes = 4*int(np.prod(dims, dtype=np.int64))
    payload = raw[header:]
    if len(payload) < nbytes:
        raise FormatError(f'truncated tensor in {path}: {len(payload)} of {nbytes} bytes')
    if len(payload) > nbytes:
        raise FormatError(f'dimension/payload length mismatch in {path}')

    arr = np.frombuffer(payload, dtype='<f4').reshape(dims)
    logger.debug(f'Loaded tensor {path} with shape {dims}')
    return check_tensor(arr, kind)


def store_tensor(path, arr):
    """ Write an array as a UQT1 tensor (little-endian float32). """

    arr = np.ascontiguousarray(arr, dtype='<f4')
    if arr.ndim > 255:
        raise FormatError('too many dimensions')
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<B', arr.ndim))
        f.write(struct.pack(f'<{arr.ndim}Q', *arr.shape))
        f.write(arr.tobytes())


def _open_png(path):
    _check_exists(path)
    img = Image.open(path)
    img.load()
    return img


def load_class_map(path, num_classes=None):
    """ Read an 8-bit single-channel PNG class map.

    Pixel values are copied verbatim; 255 is ``IGNORE_ID``.
    If num_classes is given, non-ignore values must be below it.
    """

    img = _open_png(path)
    if img.mode in ('I;16', 'I;16B', 'I;16L', 'I', '1', 'F'):
        raise FormatError(f'unsupported bit depth in {path} (mode {img.mode})')
    if img.mode != 'L':
        raise FormatError(f'multi-channel png not supported: {path} (mode {img.mode})')

    arr = np.array(img, dtype=np.uint8)
    if num_classes is not None:
        bad = (arr != IGNORE_ID) & (arr >= num_classes)
        if bad.any():
            raise FormatError(f'class IDs >= {num_classes} in {path}')
    return arr


def save_class_map(path, arr):
    """ Write a class map (or a 0/255 mask) as an 8-bit grayscale PNG. """

    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise FormatError('class map must be 2-d')
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise FormatError('class IDs must fit in 8 bits')
    Image.fromarray(arr.astype(np.uint8)).save(path)


def save_mask(path, mask):
    """ Write a binary mask as a PNG with 255 marking true pixels. """

    save_class_map(path, np.where(mask, IGNORE_ID, 0))


def load_mask(path):
    return load_class_map(path) > 0


def is_uqt1(path):
    _check_exists(path)
    with open(path, 'rb') as f:
        return f.read(4) == MAGIC


def load_confidence(path):
    """ Read a confidence map from UQT1 or a 16-bit grayscale PNG (v/65535). """

    if is_uqt1(path):
        return load_tensor(path, kind='confidence')

    img = _open_png(path)
    if img.mode not in ('I;16', 'I;16B', 'I;16L', 'I'):
        raise FormatError(f'confidence png must be 16-bit grayscale: {path} (mode {img.mode})')
    arr = np.array(img).astype(np.float64)/65535.
    return check_tensor(arr, kind='confidence')


def save_confidence(path, conf, png=False):
    """ Write a confidence map as UQT1, or as 16-bit PNG quantized to round(v*65535). """

    conf = check_tensor(np.asarray(conf), kind='confidence')
    if png:
        Image.fromarray(np.round(conf*65535).astype(np.uint16)).save(path)
    else:
        store_tensor(path, conf)


def load_image(path):
    """ Read an image tensor from UQT1, or from an 8-bit PNG scaled to [0, 1]. """

    if is_uqt1(path):
        return load_tensor(path, kind='image')
    img = _open_png(path)
    if img.mode not in ('L', 'RGB'):
        img = img.convert('RGB')
    arr = np.array(img, dtype=np.float64)/255.
    if arr.ndim == 2:
        arr = arr[None]
    else:
        arr = np.moveaxis(arr, -1, 0)
    return arr


def save_image(path, img):
    """ Write an image tensor; PNG (8-bit) for .png paths, UQT1 otherwise. """

    img = check_tensor(np.asarray(img), kind='image')
    if path.endswith('.png'):
        data = np.round(img*255).astype(np.uint8)
        data = data[0] if data.shape[0] == 1 else np.moveaxis(data, 0, -1)
        Image.fromarray(data).save(path)
    else:
        store_tensor(path, img)


def ood_mask(gt, ood_ids):
    """ True exactly where the ground truth holds an OOD class ID. """

    gt = np.asarray(gt)
    if not ood_ids:
        return np.zeros(gt.shape, dtype=bool)
    return np.isin(gt, sorted(ood_ids))


def evaluable_mask(gt, ood_ids, num_classes=None):
    """ Pixels carrying a valid in-distribution label. """

    gt = np.asarray(gt)
    good = (gt != IGNORE_ID) & ~ood_mask(gt, ood_ids)
    if num_classes is not None:
        good &= gt < num_classes
    return good


def softmax(logits):
    """ Per-pixel softmax over the class axis (axis 0). """

    return special.softmax(np.asarray(logits, dtype=np.float64), axis=0)


@dataclass(frozen=True)
class ManifestRecord:
    image: str
    gt: str
    pred: str
    conf: str
    logits: str = None


@dataclass(frozen=True)
class DatasetManifest:
    """ Records plus dataset-level metadata. """

    records: list
    num_classes: int
    ood_ids: frozenset = field(default_factory=lambda: frozenset({IGNORE_ID}))

    def __post_init__(self):
        if self.num_classes < 2:
            raise ManifestError(f'num_classes must be >= 2, got {self.num_classes}')

    def __len__(self):
        return len(self.records)


_record_keys = ('image', 'gt', 'pred', 'conf')


def read_manifest(path, num_classes=None, ood_ids=None, require=_record_keys):
    """ Parse a JSON-lines manifest.

    Each line holds ``image``, ``gt``, ``pred``, ``conf`` and optionally
    ``logits``. A line without ``gt`` but with ``num_classes``/``ood_ids`` sets
    dataset metadata. Relative paths resolve against the manifest directory.
    Explicit num_classes/ood_ids arguments override the metadata line.

    Parameters
    ----------
    path : str
    num_classes : int, optional
    ood_ids : iterable of int, optional
    require : tuple of str
        Keys that must be present and resolvable in every record.

    Returns
    -------
    DatasetManifest
    """

    _check_exists(path)
    root = os.path.dirname(os.path.abspath(path))
    meta = {}
    records = []
    diagnostics = []

    with open(path, 'r') as f:
        lines = [line for line in f.read().split('\n') if line.strip()]

    for line in lines:
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            diagnostics.append((len(records), f'invalid json ({exc})'))
            continue
        if 'gt' not in entry and ('num_classes' in entry or 'ood_ids' in entry):
            meta.update(entry)
            continue

        idx = len(records)
        resolved = {}
        for key in _record_keys + ('logits',):
            val = entry.get(key)
            if val is None or val == '':
                if key in require:
                    diagnostics.append((idx, f'missing {key} path'))
                resolved[key] = None
                continue
            full = val if os.path.isabs(val) else os.path.join(root, val)
            if key in require and not os.path.exists(full):
                diagnostics.append((idx, f'{key} file ({full}) not found'))
            resolved[key] = full
        records.append(ManifestRecord(**resolved))

    if diagnostics:
        raise ManifestError(f'invalid manifest {path}', diagnostics)
    if not records:
        raise ManifestError(f'empty manifest {path}')

    if num_classes is None:
        num_classes = meta.get('num_classes')
    if num_classes is None:
        raise ManifestError(f'num_classes not given for {path}')
    if ood_ids is None:
        ood_ids = meta.get('ood_ids', [IGNORE_ID])

    logger.debug(f'Read {len(records)} records from {path}')
    return DatasetManifest(records=records, num_classes=int(num_classes), ood_ids=frozenset(ood_ids))


def write_manifest(path, records, num_classes=None, ood_ids=None):
    """ Write records (dicts or ManifestRecord) as JSON lines. """

    with open(path, 'w') as f:
        if num_classes is not None or ood_ids is not None:
            meta = {}
            if num_classes is not None:
                meta['num_classes'] = int(num_classes)
            if ood_ids is not None:
                meta['ood_ids'] = sorted(int(i) for i in ood_ids)
            f.write(json.dumps(meta) + '\n')
        for rec in records:
            if isinstance(rec, ManifestRecord):
                rec = {k: getattr(rec, k) for k in _record_keys + ('logits',)}
            f.write(json.dumps({k: v for k, v in rec.items() if v is not None}) + '\n')
