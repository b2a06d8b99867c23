import os
import struct
from pathlib import Path

import numpy as np
import pytest

from ttfsnet.network import Network, NeuronModel, init_network

REPO = Path(__file__).resolve().parent.parent


def mnist_dir():
    """MNIST location from TTFSNET_DATA_DIR, else ./data/mnist in the repository."""
    env = os.environ.get("TTFSNET_DATA_DIR")
    for candidate in ([Path(env)] if env else []) + [REPO / "data" / "mnist"]:
        if (candidate / "train-labels-idx1-ubyte").exists() or (candidate / "train-labels-idx1-ubyte.gz").exists():
            return candidate
    return None


@pytest.fixture
def mnist_path():
    path = mnist_dir()
    if path is None:
        pytest.skip("MNIST not found (set TTFSNET_DATA_DIR)")
    return path


def random_network(rng, sizes, model="linear", mean=0.3, std=0.5, v_pulse=2.0, delays_std=0.0,
                   vth_std=0.0) -> Network:
    """Small net with optional random delays and thresholds, for property tests."""
    net = init_network(sizes, model, [(mean, std)] * (len(sizes) - 1), int(rng.integers(2**31)),
                       v_pulse, -v_pulse)
    if delays_std == 0 and vth_std == 0:
        return net
    delays = tuple(np.abs(delays_std * rng.standard_normal(w.shape)) for w in net.weights)
    thresholds = tuple(np.maximum(t + vth_std * rng.standard_normal(t.shape), 0.05) for t in net.thresholds)
    return Network(net.layer_sizes, net.weights, thresholds, delays, NeuronModel(model), net.v_pos, net.v_neg)


def random_input(rng, n, tau=5.0, p_silent=0.2):
    t = rng.uniform(0.0, tau, n)
    t[rng.random(n) < p_silent] = np.inf
    return t


def write_idx(path: Path, images: np.ndarray, labels: np.ndarray) -> tuple[Path, Path]:
    """Write an IDX image/label pair (uncompressed)."""
    img_path = path / "train-images-idx3-ubyte"
    lab_path = path / "train-labels-idx1-ubyte"
    write_idx_images(img_path, images)
    write_idx_labels(lab_path, labels)
    return img_path, lab_path


def write_idx_images(path, images):
    n, h, w = images.shape
    path.write_bytes(struct.pack(">IIII", 0x803, n, h, w) + images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    path.write_bytes(struct.pack(">II", 0x801, len(labels)) + np.asarray(labels, np.uint8).tobytes())


def synthetic_digits(rng, n, size=28):
    """Images whose label decides which horizontal band is bright."""
    labels = rng.integers(0, 10, n)
    images = np.zeros((n, size, size), dtype=np.uint8)
    band = size // 10
    for k, y in enumerate(labels):
        images[k, y * band:(y + 1) * band + 2, 4:size - 4] = rng.integers(128, 256)
        images[k] += (rng.random((size, size)) < 0.02).astype(np.uint8) * 60
    return images, labels


@pytest.fixture
def synthetic_mnist(tmp_path):
    """A tiny MNIST-shaped directory with train and test splits."""
    rng = np.random.default_rng(7)
    root = tmp_path / "mnist"
    root.mkdir()
    for split, stem, n in (("train", "train", 120), ("test", "t10k", 40)):
        images, labels = synthetic_digits(rng, n)
        write_idx_images(root / f"{stem}-images-idx3-ubyte", images)
        write_idx_labels(root / f"{stem}-labels-idx1-ubyte", labels)
    return root


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
