import sys
from pathlib import Path

# Add the parent directory to a Python path to allow imports
current_dir = Path(__file__).parent
parent_dir = current_dir.parent
sys.path.insert(0, str(parent_dir))

import numpy as np
import pytest
from fastapi.testclient import TestClient

from app.main import app
from models.dataset import Dataset
from models.template import TemplateFamily


def make_dataset(n=20, n_points=30, n_signal=10, effect=1.5, seed=7):
    """Two-group design with an intercept; the first n_signal points differ between groups"""
    rng = np.random.default_rng(seed)
    group = np.arange(n) % 2
    design = np.column_stack([np.ones(n), group])
    response = rng.standard_normal((n, n_points))
    response[:, :n_signal] += effect * group[:, None]
    return Dataset(design=design, response=response, contrasts=[[0.0, 1.0]])


def write_matrix(path, values, header=None, row_labels=None):
    """CSV writer for fixtures; repr() keeps every float exact"""
    lines = []
    if header is not None:
        lines.append(",".join(header))
    for i, row in enumerate(np.atleast_2d(values)):
        cells = [repr(float(v)) for v in row]
        if row_labels is not None:
            cells.insert(0, row_labels[i])
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture
def client():
    """FastAPI test client"""
    return TestClient(app)


@pytest.fixture
def rng():
    return np.random.default_rng(20240315)


@pytest.fixture
def small_dataset():
    """n=20 subjects, 30 points, one contrast, signal at points 0..9"""
    return make_dataset()


@pytest.fixture
def three_group_dataset():
    """Cell-means design for three groups with the two successive contrasts"""
    rng = np.random.default_rng(11)
    groups = np.repeat([0, 1, 2], 8)
    response = rng.standard_normal((groups.size, 12))
    response[groups == 2, :4] += 2.0
    return Dataset(
        design=np.eye(3)[groups],
        response=response,
        contrasts=[[-1.0, 1.0, 0.0], [0.0, -1.0, 1.0]]
    )


@pytest.fixture
def linear_family():
    def build(m, size=None):
        return TemplateFamily.linear(m, size)
    return build


@pytest.fixture
def csv_files(tmp_path, small_dataset):
    """The small dataset written as design / response / contrasts CSVs"""
    labels = [f"v{i}" for i in range(small_dataset.n_points)]
    return {
        "design": write_matrix(tmp_path / "design.csv", small_dataset.design, ["intercept", "group"]),
        "response": write_matrix(tmp_path / "response.csv", small_dataset.response, labels),
        "contrasts": write_matrix(tmp_path / "contrasts.csv", small_dataset.contrasts, ["intercept", "group"]),
        "labels": labels,
        "dir": tmp_path,
    }


# Configuration of environment variables for tests
@pytest.fixture(autouse=True)
def setup_test_env(monkeypatch):
    """Configure environment for tests"""
    monkeypatch.setenv("TESTING", "true")
    monkeypatch.setenv("POSTHOC_LOG_LEVEL", "DEBUG")
    yield
