import numpy as np
import pytest

from stainaug import synthetic
from stainaug.imagecore import RgbImage, save_image

_acceptance = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))
    elif report.when == "setup" and report.outcome != "passed" and "test_acceptance.py" in report.nodeid:
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome in _acceptance:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def he_tile():
    """128x128 synthetic H&E tile with the reference stain matrix."""
    return synthetic.two_stain_tile(128, seed=3)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Four synthetic tiles with different stain matrices plus one blank tile."""
    root = tmp_path_factory.mktemp("corpus")
    rng = np.random.default_rng(77)
    for i in range(4):
        tile = synthetic.two_stain_tile(96, seed=200 + i, stains=synthetic.perturbed_stains(rng, 0.25))
        save_image(tile.image, root / f"tile_{i}.png")
    save_image(synthetic.white_tile(96), root / "blank.png")
    return root


def random_image(rng, h=16, w=16, low=0, high=256):
    return RgbImage(rng.integers(low, high, size=(h, w, 3), dtype=np.uint8))
