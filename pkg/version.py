# -*- coding: utf-8 -*-
# Calculates the current version number from "git describe", falling back on
# the RELEASE-VERSION file when not in a git working copy (for example an
# unpacked sdist), and on 0.0.0 when neither is available.
#
#   from version import get_git_version
#   setup(version=get_git_version(), ...)
#
# RELEASE-VERSION is rewritten whenever git reports a different version.
# Ship it in sdists with "include RELEASE-VERSION" in MANIFEST.in.

__all__ = ('get_git_version',)

import subprocess

_release_file = 'RELEASE-VERSION'


def _git(*args):
    try:
        out = subprocess.run(['git', *args], capture_output=True, text=True, check=True)
    except (OSError, subprocess.CalledProcessError):
        return None
    return out.stdout.strip()


def call_git_describe(abbrev=7):
    return _git('describe', f'--abbrev={abbrev}') or None


def is_dirty():
    return bool(_git('diff-index', '--name-only', 'HEAD'))


def read_release_version():
    try:
        with open(_release_file, 'r') as f:
            return f.readline().strip() or None
    except OSError:
        return None


def write_release_version(version):
    with open(_release_file, 'w') as f:
        f.write(f'{version}\n')


def get_git_version(abbrev=7):
    release_version = read_release_version()

    version = call_git_describe(abbrev)
    if version is not None and is_dirty():
        version += '-dirty'

    if version is None:
        version = release_version
    if version is None:
        return '0.0.0'

    if version != release_version:
        write_release_version(version)
    return version


if __name__ == '__main__':
    print(get_git_version())
