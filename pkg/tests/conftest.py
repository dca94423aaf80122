import json
import os

import numpy as np
import pytest

from dynlab.maps import MapSpec

Z2 = MapSpec.unicritical(2, 0)
CHEB = MapSpec.unicritical(2, -2)
BASILICA = MapSpec.unicritical(2, -1)
LOGISTIC = MapSpec.interval([-4.0, 4.0, 0.0], (0.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write_map(directory, fmap, name=None):
    path = os.path.join(str(directory), name or f"{fmap.hash()[:8]}.json")
    with open(path, "w") as fh:
        json.dump(fmap.to_json(), fh)
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
