import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from metalcc.geometry import ProjectionGeometry, VoxelGrid  # noqa: E402
from metalcc.phantom import split_metal, standard_phantoms, voxelize  # noqa: E402
from metalcc.pipeline import PROFILES, ExperimentConfig  # noqa: E402
from metalcc.projector import forward_project  # noqa: E402
from metalcc.segsim import gt_masks  # noqa: E402


@pytest.fixture
def small_geom():
    return ProjectionGeometry(detector_cols=24, detector_rows=24, pixel_pitch=12.5, n_views=12)


@pytest.fixture
def small_grid():
    return VoxelGrid(16, 16, 16, 10.0)


@pytest.fixture(scope="session")
def desk():
    return PROFILES["desk"]()


@pytest.fixture(scope="session")
def desk_catalog(desk):
    g = desk["diagnostic_grid"]
    return standard_phantoms(g.nx * g.voxel_size / 2)


@pytest.fixture(scope="session")
def desk_gt(desk, desk_catalog):
    """GT mask stacks (delta 0.6, the pipeline default) for every catalog scene at desk scale."""
    out = {}
    for name, scene in desk_catalog.items():
        with_s, without_s = split_metal(scene)
        pw = forward_project(voxelize(with_s, desk["cc_grid"]), desk["geometry"])
        pwo = forward_project(voxelize(without_s, desk["cc_grid"]), desk["geometry"])
        out[name] = gt_masks(pw, pwo, ExperimentConfig.gt_delta)
    return out


_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        verdict = "PASS" if report.passed else "FAIL"
        _ACCEPTANCE.append(f"{verdict}  {props.get('criterion', report.nodeid)}  {props.get('detail', '')}")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line.rstrip())
