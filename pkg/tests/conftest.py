import pytest

from higsni.io import bundled_path, load_controller, load_plant

from helpers import ACCEPTANCE_LINES


@pytest.fixture(scope='session')
def mems_plant():
    return load_plant(bundled_path('mems_model.json'))


@pytest.fixture
def mems_controller():
    return load_controller(bundled_path('mems_controller.json'))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section('acceptance criteria')
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
