import struct

import numpy as np
import pytest

from locpred.datasets import MNIST_IMAGE_MAGIC


def _digit_bank(upscale: int) -> np.ndarray:
    """Digit images from scikit-learn, upscaled by pixel repetition.

    There is no MNIST download in the test environment; these 8x8 digits
    rescaled to 0..255 stand in for it.  Content only matters for the
    training-ordering experiment, geometry tests are content-agnostic.
    """
    from sklearn.datasets import load_digits

    images = load_digits().images  # [1797, 8, 8], float values 0..16
    u8 = np.round(images / 16.0 * 255.0).astype(np.uint8)
    return np.repeat(np.repeat(u8, upscale, axis=1), upscale, axis=2)


@pytest.fixture(scope="session")
def digits28() -> np.ndarray:
    """[N,28,28] u8 digit bank shaped like the official MNIST images."""
    big = _digit_bank(3)  # 24x24
    padded = np.zeros((len(big), 28, 28), dtype=np.uint8)
    padded[:, 2:26, 2:26] = big
    return padded


@pytest.fixture(scope="session")
def digits16() -> np.ndarray:
    """[N,16,16] u8 digit bank for reduced-resolution experiments."""
    return _digit_bank(2)


def write_idx_images(path, images: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", MNIST_IMAGE_MAGIC, *images.shape))
        f.write(images.astype(np.uint8).tobytes())


@pytest.fixture(scope="session")
def mnist_idx_dir(tmp_path_factory, digits28):
    """Directory holding a train-images-idx3-ubyte file built from digits28."""
    d = tmp_path_factory.mktemp("mnist")
    write_idx_images(d / "train-images-idx3-ubyte", digits28)
    return d
