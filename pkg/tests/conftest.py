import numpy as np
import pytest

from eeg_gcnn.dataset import WindowDataset
from eeg_gcnn.graph_builder import default_spatial_adjacency


def make_dataset(n_per_class=12, windows=6, separation=1.0, seed=0) -> WindowDataset:
    """Window table whose healthy subjects carry more alpha power."""
    rng = np.random.default_rng(seed)
    sids, labels, widx, feats, funcs = [], [], [], [], []
    for label, prefix in ((1, "P"), (0, "H")):
        for i in range(n_per_class):
            for w in range(windows):
                f = np.exp(rng.normal(0.0, 0.3, (8, 6)))
                if label == 0:
                    f[:, 2] *= np.exp(separation)
                a = rng.uniform(0.1, 0.6, (8, 8))
                a = (a + a.T) / 2
                np.fill_diagonal(a, 0.0)
                sids.append(f"{prefix}{i:03d}")
                labels.append(label)
                widx.append(w)
                feats.append(f)
                funcs.append(a)
    return WindowDataset(
        subject_ids=np.array(sids, dtype=object),
        labels=np.array(labels),
        window_index=np.array(widx),
        features=np.array(feats),
        functional=np.array(funcs),
        spatial=np.array(default_spatial_adjacency().values),
    )


@pytest.fixture
def small_dataset():
    return make_dataset()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, ok: bool, detail: str) -> None:
    """Log one acceptance line; the terminal summary repeats them all."""
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
