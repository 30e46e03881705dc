import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stegattn.attention import ChannelAttentionParams, SpatialAttentionParams  # noqa: E402
from stegattn.numerics import ConvParams, DenseParams, Tensor  # noqa: E402
from stegattn.pipeline import make_toy_dataset  # noqa: E402


def attention_params(rng, c, hidden=None, scale=0.5):
    hidden = hidden or max(1, c // 8)

    def t(shape, s=scale):
        return Tensor(rng.standard_normal(shape) * s, requires_grad=True)

    cp = ChannelAttentionParams(DenseParams(t((hidden, c)), t((hidden,))),
                                DenseParams(t((c, hidden)), t((c,))))
    sp = SpatialAttentionParams(ConvParams(t((1, 2, 7, 7), 0.2), t((1,))))
    return cp, sp


@pytest.fixture(scope="session")
def toy_dir(tmp_path_factory):
    """Twelve 16x16 synthetic images; enough for the fast pipeline tests."""
    d = tmp_path_factory.mktemp("toy16")
    make_toy_dataset(d, count=12, size=16, seed=3)
    return d


# filled by test_acceptance; repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
