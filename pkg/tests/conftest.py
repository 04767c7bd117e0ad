import numpy as np
import pytest
import torch

from tryon.data import DEFAULT_PALETTE, Batch, generate_synthetic_dataset


def bilinear_oracle(x: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """Per-pixel bilinear sampling with zero padding, written out longhand."""
    c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)

    def at(yi, xi):
        if 0 <= yi < h and 0 <= xi < w:
            return x[:, yi, xi]
        return np.zeros(c)

    for i in range(h):
        for j in range(w):
            sx = j + flow[0, i, j]
            sy = i + flow[1, i, j]
            x0, y0 = int(np.floor(sx)), int(np.floor(sy))
            ax, ay = sx - x0, sy - y0
            out[:, i, j] = ((1 - ax) * (1 - ay) * at(y0, x0) + ax * (1 - ay) * at(y0, x0 + 1)
                            + (1 - ax) * ay * at(y0 + 1, x0) + ax * ay * at(y0 + 1, x0 + 1))
    return out


@pytest.fixture(scope="session")
def palette():
    return DEFAULT_PALETTE


@pytest.fixture(scope="session")
def synth_small():
    """Eight synthetic records at the condition resolution."""
    recs = generate_synthetic_dataset(3, 8, (64, 48), occlusion_prob=0.5)
    return recs


@pytest.fixture(scope="session")
def batch_small(synth_small):
    return Batch.stack(synth_small)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)
    yield


TINY = dict(cond_size=(32, 16), out_size=(64, 32), tocg_widths=(4, 8, 8, 8, 8),
            toig_widths=(8, 8, 4, 4), spade_hidden=8, disc_width=8, synth_n=12,
            synth_test_n=6, batch_tocg=4, batch_toig=2, iters_tocg=4, iters_toig=3)


@pytest.fixture(scope="session")
def tiny_cfg():
    from tryon.config import RunConfig

    return RunConfig(**TINY)


@pytest.fixture(scope="session")
def tiny_run(tiny_cfg, tmp_path_factory):
    """Both stages trained for a handful of iterations."""
    from tryon.train import train_tocg, train_toig

    out = tmp_path_factory.mktemp("tiny_run")
    tocg = train_tocg(tiny_cfg, out)
    toig = train_toig(tiny_cfg, tocg.checkpoint, out)
    return out, tocg, toig


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
