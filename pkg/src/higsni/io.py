"""JSON documents for plants, controllers and scenarios.

Floats are written with Python's shortest round-trip repr, so loading a
saved document and saving it again reproduces the same bytes.
"""

import json
import os
from dataclasses import dataclass
from importlib import resources
from typing import Optional

import numpy as np

from .closedloop import InputSignal, SimConfig, Wiring
from .errors import ValidationError
from .higs import controller_from_dict, controller_to_dict
from .plant import PlantModel

__all__ = ['dumps_document', 'load_json', 'load_plant', 'save_plant',
           'load_controller', 'save_controller', 'Scenario', 'load_scenario',
           'bundled_path']


def bundled_path(name):
    """Path of a data file shipped with the package."""
    return resources.files('higsni') / 'data' / name


def _fmt(v):
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _dump(obj, indent):
    pad = '  ' * indent
    if isinstance(obj, dict):
        if not obj:
            return '{}'
        items = [f'{pad}  {json.dumps(k)}: {_dump(v, indent + 1)}'
                 for k, v in obj.items()]
        return '{\n' + ',\n'.join(items) + '\n' + pad + '}'
    if isinstance(obj, (list, tuple, np.ndarray)):
        obj = list(obj)
        if obj and all(isinstance(r, (list, tuple, np.ndarray)) for r in obj):
            rows = [f'{pad}  [' + ', '.join(_fmt(x) for x in r) + ']'
                    for r in obj]
            return '[\n' + ',\n'.join(rows) + '\n' + pad + ']'
        if any(isinstance(x, dict) for x in obj):
            items = [f'{pad}  {_dump(x, indent + 1)}' for x in obj]
            return '[\n' + ',\n'.join(items) + '\n' + pad + ']'
        return '[' + ', '.join(_fmt(x) for x in obj) + ']'
    return _fmt(obj)


def dumps_document(obj):
    """Deterministic JSON text: matrices one row per line, repr floats."""
    return _dump(obj, 0) + '\n'


def load_json(path):
    with open(path, 'r', encoding='utf-8') as fh:
        return json.load(fh)


def _write(path, text):
    with open(path, 'w', encoding='utf-8', newline='\n') as fh:
        fh.write(text)


def load_plant(path):
    return PlantModel.from_dict(load_json(path))


def save_plant(plant, path):
    _write(path, dumps_document(plant.to_dict()))


def load_controller(path, states=None):
    return controller_from_dict(load_json(path), states)


def save_controller(ctrl, path):
    _write(path, dumps_document(controller_to_dict(ctrl)))


@dataclass
class Scenario:
    plant: Optional[PlantModel]
    controller: object
    wiring: Wiring
    input: InputSignal
    sim: SimConfig
    x0: Optional[np.ndarray]
    xh0: Optional[np.ndarray]
    trajectory_path: Optional[str]
    report_path: Optional[str]


def _resolve(base, p):
    return p if p is None or os.path.isabs(p) else os.path.join(base, p)


def load_scenario(path):
    """Read a scenario document.

    Keys: ``plant`` (path or inline matrices, or null), ``controller``
    (fragment, path, or null for the open loop), ``wiring``, ``input``,
    ``sim``, optional ``initial_state`` ``{"x": [...], "x_h": [...]}`` and
    ``outputs`` ``{"trajectory": csv, "report": json}``. Relative paths are
    taken from the scenario's directory.
    """
    d = load_json(path)
    base = os.path.dirname(os.path.abspath(path))
    if not isinstance(d, dict):
        raise ValidationError("scenario must be a JSON object")
    extra = set(d) - {'plant', 'controller', 'wiring', 'input', 'sim',
                      'initial_state', 'outputs'}
    if extra:
        raise ValidationError(f"unknown scenario keys {sorted(extra)}")
    if 'sim' not in d:
        raise ValidationError("scenario needs a 'sim' section")
    p = d.get('plant')
    if isinstance(p, str):
        plant = load_plant(_resolve(base, p))
    elif isinstance(p, dict):
        plant = PlantModel.from_dict(p)
    elif p is None:
        plant = None
    else:
        raise ValidationError("plant must be a path, an object or null")
    init = d.get('initial_state') or {}
    xh0 = init.get('x_h')
    c = d.get('controller')
    if isinstance(c, str):
        c = load_json(_resolve(base, c))
    ctrl = None if c is None else controller_from_dict(c, xh0)
    try:
        wiring = Wiring(d.get('wiring', 'plant_input'))
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    signal = InputSignal.from_dict(d.get('input') or {})
    sim = SimConfig.from_dict(d['sim'])
    outs = d.get('outputs') or {}
    x0 = init.get('x')
    return Scenario(plant, ctrl, wiring, signal, sim,
                    None if x0 is None else np.asarray(x0, dtype=float),
                    None if xh0 is None else np.asarray(xh0, dtype=float),
                    _resolve(base, outs.get('trajectory')),
                    _resolve(base, outs.get('report')))
