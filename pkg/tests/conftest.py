import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT))

from curveflow.geometry import make_test_curve  # noqa: E402
from curveflow.models import CurveSpec  # noqa: E402


@pytest.fixture
def unit_circle():
    return make_test_curve(CurveSpec.circle(1.0, 1, node_count=256))


@pytest.fixture
def double_circle():
    return make_test_curve(CurveSpec.circle(1.0, 2, node_count=256))


@pytest.fixture
def ellipse_curve():
    return make_test_curve(CurveSpec.ellipse(2.0, 1.0, node_count=256))


@pytest.fixture
def blow_up_curve():
    return make_test_curve(CurveSpec.perturbed_n_circle(1.0, 2, 1, 0.2, node_count=256))
