import numpy as np
import pytest

from ex2vec.data import Dataset


def random_dataset(rng, n_users=8, n_items=10, density=0.5, max_events=6, label_p=0.6):
    """Random event set; each (user, item) pair present with prob ``density``."""
    rows = []
    for u in range(n_users):
        for i in range(n_items):
            if rng.random() < density:
                k = int(rng.integers(1, max_events + 1))
                ts = np.sort(rng.choice(1000, size=k, replace=False)).astype(float)
                rows.extend((u, i, t, int(rng.random() < label_p)) for t in ts)
    if not rows:
        rows.append((0, 0, 0.0, 1))
    u, i, t, lab = zip(*rows)
    return Dataset.from_arrays(u, i, t, lab, n_users, n_items)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p
