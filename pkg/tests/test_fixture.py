import json
import os
import os.path

import numpy as np
import pytest

from uqseg import fixture, tensorio

_install_dir = os.path.abspath(os.path.dirname(__file__))
_data_dir = os.path.join(_install_dir, 'data', 'fixture')


def _files(root):
    return sorted(os.path.relpath(os.path.join(d, f), root) for d, _, fs in os.walk(root) for f in fs)


def _json_lines(path):
    with open(path, 'r') as f:
        return [json.loads(line) for line in f if line.strip()]


@pytest.fixture(scope="module")
def rebuilt(tmp_path_factory):
    return str(tmp_path_factory.mktemp('fixture'))


def test_checked_in_paths():
    paths = fixture.fixture_paths(_data_dir)
    for path in paths.values():
        assert os.path.isfile(path)
    records = tensorio.read_manifest(paths['manifest'])
    assert len(records) == fixture.num_images


def test_checked_in_frames():
    for i in range(fixture.num_images):
        def rot(a):
            return np.rot90(a, k=i, axes=(-2, -1))

        np.testing.assert_array_equal(tensorio.load_class_map(os.path.join(_data_dir, f'gt_{i}.png')),
                                      rot(fixture.base_gt))
        np.testing.assert_array_equal(tensorio.load_class_map(os.path.join(_data_dir, f'pred_{i}.png')),
                                      rot(fixture.base_pred))
        np.testing.assert_array_equal(tensorio.load_tensor(os.path.join(_data_dir, f'conf_{i}.uqt')),
                                      rot(fixture.base_conf).astype(np.float32))


def test_make_fixture_matches_checked_in(rebuilt):
    """
    make_fixture writes the same files with the same contents as the checked-in dataset.
    """

    paths = fixture.make_fixture(rebuilt)
    assert paths == fixture.fixture_paths(rebuilt)
    assert _files(rebuilt) == _files(_data_dir)

    for name in _files(_data_dir):
        ours, theirs = os.path.join(rebuilt, name), os.path.join(_data_dir, name)
        if name.endswith('.jsonl'):
            assert _json_lines(ours) == _json_lines(theirs)
        elif name.endswith('.json'):
            with open(ours, 'r') as f, open(theirs, 'r') as g:
                assert json.load(f) == json.load(g)
        elif name.startswith('image_'):
            np.testing.assert_array_equal(tensorio.load_image(ours), tensorio.load_image(theirs))
        elif name.endswith('.png'):
            np.testing.assert_array_equal(tensorio.load_class_map(ours), tensorio.load_class_map(theirs))
        elif name.startswith('logits_'):
            np.testing.assert_allclose(tensorio.load_tensor(ours), tensorio.load_tensor(theirs), rtol=1e-6)
        else:
            np.testing.assert_array_equal(tensorio.load_tensor(ours), tensorio.load_tensor(theirs))
