import pytest
import torch

from continuity_ssl.datakit import SyntheticWorldSpec, generate_synthetic_corpus


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """8 synthetic 40-frame 32x32 videos on disk, with 4 held-out videos."""
    root = tmp_path_factory.mktemp("corpus")
    spec = SyntheticWorldSpec(num_videos=8, frames_per_video=40, resolution=(32, 32),
                              num_shape_classes=2, motion_speed_range=(2.0, 4.0), rng_seed=3)
    train = generate_synthetic_corpus(spec, root, "train")
    test = generate_synthetic_corpus(SyntheticWorldSpec(4, 40, (32, 32), 2, (2.0, 4.0), rng_seed=4),
                                     root, "test")
    return root, train, test


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
