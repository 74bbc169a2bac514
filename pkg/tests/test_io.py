import json

import numpy as np
import pytest

from higsni.closedloop import Wiring
from higsni.errors import ValidationError
from higsni.io import (bundled_path, dumps_document, load_controller,
                       load_plant, load_scenario, save_controller, save_plant)


@pytest.mark.parametrize('name', ['mems_model.json', 'mems_controller.json'])
def test_bundled_documents_round_trip_bytes(tmp_path, name):
    src = bundled_path(name)
    out = tmp_path / name
    if name == 'mems_model.json':
        save_plant(load_plant(src), out)
    else:
        save_controller(load_controller(src), out)
    assert out.read_bytes() == src.read_bytes()


def test_dumps_document_layout():
    text = dumps_document({'A': [[1.0, 0.1], [2.0, 3.0]], 'k': [0.5],
                           'flag': True, 'name': 'x', 'n': 3})
    assert json.loads(text) == {'A': [[1.0, 0.1], [2.0, 3.0]], 'k': [0.5],
                                'flag': True, 'name': 'x', 'n': 3}
    assert '    [1.0, 0.1],\n' in text
    assert text.endswith('}\n')


def test_floats_survive_exactly(tmp_path):
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3)) * 10.0 ** rng.integers(-12, 12, size=(3, 3))
    from higsni.plant import PlantModel
    p = PlantModel(M - 100 * np.abs(M).max() * np.eye(3), M[:, :1], M[:1])
    save_plant(p, tmp_path / 'p.json')
    q = load_plant(tmp_path / 'p.json')
    np.testing.assert_array_equal(p.A, q.A)


def test_scenario_paths_and_defaults(tmp_path):
    save_plant(load_plant(bundled_path('mems_model.json')),
               tmp_path / 'plant.json')
    doc = {'plant': 'plant.json',
           'controller': {'type': 'multi', 'k_h': [0.5, 0.6],
                          'omega_h': [1.0, 2.0]},
           'sim': {'t_end': 0.01, 'dt': 1e-5},
           'initial_state': {'x': [0, 0, 0, 1], 'x_h': [0.0, 0.0]},
           'outputs': {'trajectory': 'out/t.csv'}}
    (tmp_path / 's.json').write_text(json.dumps(doc))
    sc = load_scenario(tmp_path / 's.json')
    assert sc.wiring == Wiring.PLANT_INPUT
    assert sc.input.kind == 'zero'
    assert sc.trajectory_path == str(tmp_path / 'out' / 't.csv')
    assert sc.report_path is None
    np.testing.assert_array_equal(sc.x0, [0, 0, 0, 1])


@pytest.mark.parametrize('doc', [
    {'sim': {'t_end': 1.0, 'dt': 0.1}, 'bogus': 1},
    {'plant': None},
    {'plant': 3, 'sim': {'t_end': 1.0, 'dt': 0.1}},
    {'sim': {'t_end': 1.0, 'dt': 0.1}, 'wiring': 'sideways'},
    {'sim': {'t_end': 1.0, 'dt': 2.0}},
])
def test_scenario_errors(tmp_path, doc):
    (tmp_path / 's.json').write_text(json.dumps(doc))
    with pytest.raises(ValidationError):
        load_scenario(tmp_path / 's.json')
