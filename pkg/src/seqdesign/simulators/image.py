"""Image discovery: reconstruct an unknown image from local measurements.

Each design picks a measurement center in the unit square; the simulator
reveals the image through a smooth product-of-sigmoids mask, adds bounded
uniform noise, and clamps to [0, 1].  The parameter theta is itself an image
drawn from a corpus of handwritten digits.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import ConfigError, DomainError
from .base import Simulator, SimulatorSpec, check_finite

MASK_SCALE = 0.1        # s, sigmoid sharpness in pixel units
MASK_HALFWIDTH = 7.0    # h, half-extent of the revealed square (28px images)
NOISE_LEVELS = (0.0, 1e-3, 1e-2)


def _axis_factor(d: torch.Tensor, halfwidth: float, scale: float) -> torch.Tensor:
    """sigmoid((d+h)/s) + sigmoid((h-d)/s) - 1 for signed distance d.

    Evaluated as sigmoid(a)*sigmoid(-c) - sigmoid(-a)*sigmoid(c) with
    a = (d+h)/s, c = (d-h)/s, which is the same quantity without the
    catastrophic cancellation of the literal form in the far tail.
    """
    a = (d + halfwidth) / scale
    c = (d - halfwidth) / scale
    return torch.sigmoid(a) * torch.sigmoid(-c) - torch.sigmoid(-a) * torch.sigmoid(c)


def mask_value(xi_pix: torch.Tensor, coords: torch.Tensor,
               halfwidth: float = MASK_HALFWIDTH, scale: float = MASK_SCALE) -> torch.Tensor:
    """Mask weight at pixel coordinates, in (0, 1).

    `xi_pix` is (..., 2) in pixel units, `coords` is (..., 2); the weight is
    the product over axes of sigmoid((d+h)/s) + sigmoid((h-d)/s) - 1.
    """
    check_finite("mask inputs", xi_pix, coords)
    return _axis_factor(coords - xi_pix, halfwidth, scale).prod(-1)


def design_mask(xi: torch.Tensor, size: int,
                halfwidth: float = MASK_HALFWIDTH, scale: float = MASK_SCALE) -> torch.Tensor:
    """Full (..., size, size) mask for unit-square designs scaled by `size`."""
    grid = torch.arange(size, dtype=xi.dtype, device=xi.device)
    xi_pix = xi * size
    rows = _axis_factor(grid - xi_pix[..., 0:1], halfwidth, scale)
    cols = _axis_factor(grid - xi_pix[..., 1:2], halfwidth, scale)
    return rows.unsqueeze(-1) * cols.unsqueeze(-2)


def simulate(theta: torch.Tensor, xi: torch.Tensor, noise: torch.Tensor,
             noise_level: float, size: int,
             halfwidth: float = MASK_HALFWIDTH, scale: float = MASK_SCALE) -> torch.Tensor:
    """x = clamp(mask * theta + noise_level * noise, 0, 1), pixelwise.

    `theta` is (..., 1, size, size) in [0, 1]; `noise` is a standard U(0, 1)
    draw of the same shape, scaled to U(0, noise_level) here.
    """
    mask = design_mask(xi, size, halfwidth, scale).unsqueeze(-3)
    return (mask * theta + noise_level * noise).clamp(0.0, 1.0)


# ---------------------------------------------------------------------------
# Image corpus handling


def _read_idx(path: Path) -> np.ndarray:
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    zeros, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zeros != 0 or dtype_code != 0x08:
        raise ConfigError(f"{path}: not an unsigned-byte IDX file")
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    arr = np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim)
    return arr.reshape(dims)


def _find_idx(directory: Path, stem_options) -> Path | None:
    for stem in stem_options:
        for suffix in ("", ".gz"):
            cand = directory / f"{stem}{suffix}"
            if cand.exists():
                return cand
    return None


class ImageCorpus:
    """Train/validation image splits, values in [0, 1], shape (N, 1, H, W)."""

    def __init__(self, train: np.ndarray, val: np.ndarray):
        if train.ndim != 4 or val.ndim != 4 or train.shape[1] != 1:
            raise ConfigError("corpus arrays must have shape (N, 1, H, W)")
        if train.min() < 0 or train.max() > 1:
            raise ConfigError("corpus pixel values must lie in [0, 1]")
        self.train = torch.as_tensor(train, dtype=torch.float32)
        self.val = torch.as_tensor(val, dtype=torch.float32)
        self.image_size = train.shape[-1]

    @staticmethod
    def load(path) -> "ImageCorpus":
        """Load a corpus from an .npz file or a directory of IDX files.

        IDX directories are ingested once and cached next to the source
        files as a binary .npz.
        """
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"image corpus path does not exist: {path}")
        if path.is_file():
            return ImageCorpus._from_npz(path)
        cache = path / "corpus_cache.npz"
        if cache.exists():
            return ImageCorpus._from_npz(cache)
        train_f = _find_idx(path, ["train-images-idx3-ubyte", "train-images.idx3-ubyte"])
        val_f = _find_idx(path, ["t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"])
        if train_f is None or val_f is None:
            raise ConfigError(f"no corpus cache or IDX image files under {path}")
        train = _read_idx(train_f).astype(np.float32)[:, None] / 255.0
        val = _read_idx(val_f).astype(np.float32)[:, None] / 255.0
        np.savez_compressed(cache, train=train, val=val)
        return ImageCorpus(train, val)

    @staticmethod
    def _from_npz(path: Path) -> "ImageCorpus":
        with np.load(path) as data:
            if "train" not in data or "val" not in data:
                raise ConfigError(f"{path}: expected arrays 'train' and 'val'")
            return ImageCorpus(data["train"], data["val"])


def make_digits_corpus(path, size: int = 14, val_fraction: float = 0.2) -> ImageCorpus:
    """Build a small handwritten-digit corpus at `size`x`size` and save it.

    Uses the 8x8 digit images bundled with scikit-learn, rescaled to the
    requested resolution; intended for desk-scale runs and tests.
    """
    from scipy.ndimage import zoom
    from sklearn.datasets import load_digits

    images = load_digits().images.astype(np.float32) / 16.0
    factor = size / images.shape[-1]
    scaled = zoom(images, (1.0, factor, factor), order=1).clip(0.0, 1.0)
    scaled = scaled[:, None].astype(np.float32)
    n_val = int(round(val_fraction * len(scaled)))
    train, val = scaled[:-n_val], scaled[-n_val:]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, train=train, val=val)
    return ImageCorpus(train, val)


class ImageDiscoverySimulator(Simulator):
    """Masked-measurement image discovery over a digit corpus."""

    has_likelihood = False

    def __init__(self, noise_level: float = 0.0, image_size: int = 28,
                 halfwidth: float = MASK_HALFWIDTH, scale: float = MASK_SCALE,
                 corpus: ImageCorpus | None = None):
        if not any(abs(noise_level - lv) < 1e-12 for lv in NOISE_LEVELS):
            raise DomainError(f"noise_level must be one of {NOISE_LEVELS}")
        self.noise_level = float(noise_level)
        self.image_size = int(image_size)
        self.halfwidth = float(halfwidth)
        self.scale = float(scale)
        self._corpus = corpus
        hw = self.image_size
        self.spec = SimulatorSpec(
            name="id",
            theta_dim=hw * hw,
            theta_shape=(1, hw, hw),
            design_dim=2,
            obs_shape=(1, hw, hw),
            constants={"noise_level": self.noise_level, "mask_halfwidth": self.halfwidth,
                       "mask_scale": self.scale, "image_size": hw},
            theta_prior="uniform over configured image corpus",
            design_prior="uniform[0,1]^2",
        )

    @property
    def corpus(self) -> ImageCorpus:
        if self._corpus is None:
            raise ConfigError(
                "image corpus not configured; set id.corpus_path in the "
                "config or the SEQDESIGN_ID_CORPUS environment variable"
            )
        return self._corpus

    def sample_prior(self, n, rng):
        pool = self.corpus.train
        idx = torch.randint(len(pool), (n,), generator=rng)
        return pool[idx].clone()

    def validation_images(self) -> torch.Tensor:
        return self.corpus.val

    def sample_design_prior(self, n, rng):
        return torch.rand((n, 2), generator=rng)

    def sample_noise(self, n, rng):
        hw = self.image_size
        return torch.rand((n, 1, hw, hw), generator=rng)

    def simulate(self, theta, xi, noise):
        return simulate(theta, xi, noise, self.noise_level, self.image_size,
                        self.halfwidth, self.scale)

    def design_in_domain(self, xi):
        return bool(torch.isfinite(xi).all() and (xi >= 0).all() and (xi <= 1).all())

    def theta_to_latent(self, theta):
        return 2.0 * theta - 1.0

    def latent_to_theta(self, z):
        # Posterior samples are images; clamp back onto the valid pixel range.
        return ((z + 1.0) / 2.0).clamp(0.0, 1.0)
