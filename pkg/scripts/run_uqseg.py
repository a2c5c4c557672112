#!/usr/bin/env python3
# -*- coding: utf-8 -*-
import sys

from uqseg import cli


def main(argv):
    return cli.main(argv[1:])


if __name__ == '__main__':
    sys.exit(main(sys.argv))
