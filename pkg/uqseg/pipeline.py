#!/usr/bin/env python3
# -*- coding: utf-8 -*-
""" Run an ordered recipe of subcommands.

A recipe is a JSON file::

    {"steps": [{"name": "fuse", "args": {"op": "recip", "inputs": ["a.uqt", "b.uqt"], "out": "f.uqt"}},
               {"name": "eval", "args": {"manifest": "m.jsonl", "out-dir": "report"}}]}

Each step is turned into the argument list of the subcommand of the same
name. Keys become ``--key`` flags (underscores turn into dashes), lists
expand to several values, ``true`` becomes a bare flag and ``false`` or
``null`` drops the flag. Path arguments resolve against the recipe
directory. Every step is parsed before the first one runs.
"""

import json
import logging
import os.path
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

# argument destinations holding file or directory paths
path_args = {'manifest', 'val_manifest', 'out_dir', 'logits', 'gt', 'out_pred', 'out_conf', 'out_params', 'params',
             'inputs', 'out', 'in', 'in_dir', 'labels', 'running', 'instance', 'features', 'out_alpha', 'out_stats',
             'targets', 'conf', 'pred', 'freqs', 'config', 'class_scores', 'mask_logits', 'recipe', 'plot'}
output_args = ('out_dir', 'out_pred', 'out_conf', 'out_params', 'out', 'out_alpha', 'out_stats')


class PipelineError(ValueError):
    """ A recipe is invalid or one of its steps failed. """


@dataclass
class Step:
    index: int
    name: str
    args: dict = field(default_factory=dict)
    argv: list = field(default_factory=list)
    parsed: object = None

    @property
    def label(self):
        return f'step {self.index} ({self.name})'

    def outputs(self):
        outs = []
        for key in output_args:
            val = getattr(self.parsed, key, None)
            if val:
                outs.append(val)
        return outs


def _flag(key):
    return '--' + key.replace('_', '-')


def _resolve(root, key, value):
    if key.replace('-', '_') not in path_args:
        return value
    if isinstance(value, list):
        return [v if os.path.isabs(v) else os.path.join(root, v) for v in value]
    return value if os.path.isabs(value) else os.path.join(root, value)


def step_argv(name, args, root):
    """ Argument list for one recipe step, paths resolved against root. """

    argv = [name]
    for key, value in args.items():
        if value is None or value is False:
            continue
        if value is True:
            argv.append(_flag(key))
            continue
        value = _resolve(root, key, value)
        argv.append(_flag(key))
        if isinstance(value, list):
            argv.extend(str(v) for v in value)
        else:
            argv.append(str(value))
    return argv


def load_recipe(path):
    """ Read a recipe file into a list of Steps (not yet parsed). """

    if not os.path.exists(path):
        raise FileNotFoundError(f'recipe ({path}) not found')
    with open(path, 'r') as f:
        try:
            recipe = json.load(f)
        except json.JSONDecodeError as exc:
            raise PipelineError(f'invalid recipe {path}: {exc}') from exc
    entries = recipe.get('steps') if isinstance(recipe, dict) else None
    if not entries:
        raise PipelineError(f'recipe {path} has no steps')

    root = os.path.dirname(os.path.abspath(path))
    steps = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or 'name' not in entry:
            raise PipelineError(f'step {i}: missing name')
        args = entry.get('args', {})
        if not isinstance(args, dict):
            raise PipelineError(f'step {i} ({entry["name"]}): args must be an object')
        steps.append(Step(i, entry['name'], args, step_argv(entry['name'], args, root)))
    return steps


def validate(steps, parser, commands):
    """ Check names and parse every step's arguments; nothing runs here. """

    for step in steps:
        if step.name not in commands or step.name == 'pipeline':
            raise PipelineError(f'{step.label}: unknown step name')
        try:
            step.parsed = parser.parse_args(step.argv)
        except SystemExit as exc:
            raise PipelineError(f'{step.label}: invalid arguments {step.argv[1:]}') from exc


def run(recipe_path, parser, commands, prepare=None, produced=None):
    """ Validate and execute a recipe.

    Parameters
    ----------
    recipe_path : str
    parser : argparse.ArgumentParser
        Parser of the full command line, subcommands included.
    commands : iterable of str
        Subcommand names a step may use.
    prepare : callable, optional
        Called on each parsed namespace before it runs.
    produced : str, optional
        Where to write the produced-files manifest. Defaults to
        ``<recipe>_produced.json`` beside the recipe.

    Returns
    -------
    dict
        The produced-files manifest.
    """

    steps = load_recipe(recipe_path)
    validate(steps, parser, commands)
    logger.info(f'Running {len(steps)} steps from {recipe_path}')

    record = {'recipe': os.path.abspath(recipe_path), 'steps': []}
    for step in steps:
        if prepare is not None:
            prepare(step.parsed)
        logger.info(f'Running {step.label}')
        try:
            code = step.parsed.func(step.parsed)
        except Exception as exc:
            raise PipelineError(f'{step.label} failed: {exc}') from exc
        if code:
            raise PipelineError(f'{step.label} failed with exit code {code}')
        record['steps'].append({'name': step.name, 'argv': step.argv, 'outputs': step.outputs()})

    if produced is None:
        produced = os.path.splitext(os.path.abspath(recipe_path))[0] + '_produced.json'
    with open(produced, 'w') as f:
        json.dump(record, f, indent=2)
        f.write('\n')
    logger.info(f'Wrote produced-files manifest {produced}')
    return record
