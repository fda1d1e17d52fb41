"""The wavelet-domain denoiser.

Each noisy sub-band is concatenated with a constant noise-level plane and
fed through its own stack of conv+ReLU layers (LL deepest, HH shallowest).
The four branch outputs are concatenated and passed through one shared
mapping stack whose last conv emits ``4 * C`` channels: the predicted noise
of LL, LH, HL and HH, in that order. Denoised coefficients are the noisy
coefficients minus that prediction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .engine import Parameter, Tensor, concat_channels, conv2d, relu, split_channels
from .errors import DomainError, ShapeError
from .wavelet import BANDS, FilterBank, SubbandSet, dwt2, idwt2

SIGMA_MAX = 75.0


@dataclass(frozen=True)
class WDnCNNConfig:
    channels: int = 1
    bnm_depths: tuple[int, int, int, int] = (3, 2, 2, 1)
    mapping_depth: int | None = None
    feature_width: int | None = None
    kernel: int = 3
    pad: int = 1

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise DomainError(f"channels must be 1 or 3, got {self.channels}")
        object.__setattr__(self, "bnm_depths", tuple(int(d) for d in self.bnm_depths))
        if self.mapping_depth is None:
            object.__setattr__(self, "mapping_depth", 16 if self.channels == 1 else 13)
        if self.feature_width is None:
            object.__setattr__(self, "feature_width", 72 if self.channels == 1 else 108)
        if len(self.bnm_depths) != 4 or min(self.bnm_depths) < 1:
            raise DomainError(f"bnm_depths needs four depths >= 1, got {self.bnm_depths}")
        if self.mapping_depth < 1 or self.feature_width < 1:
            raise DomainError("mapping_depth and feature_width must be >= 1")
        if (self.kernel, self.pad) != (3, 1):
            raise DomainError("only 3x3 kernels with padding 1 are supported")

    @classmethod
    def miniature(cls, channels: int = 1) -> "WDnCNNConfig":
        return cls(channels=channels, mapping_depth=3, feature_width=8)


def parameter_count(config: WDnCNNConfig) -> int:
    """Closed-form number of scalars in a model built from ``config``."""
    c, f = config.channels, config.feature_width
    k2 = config.kernel * config.kernel
    hidden = f * f * k2 + f
    branches = sum((c + 1) * f * k2 + f + (depth - 1) * hidden for depth in config.bnm_depths)
    if config.mapping_depth == 1:
        mapping = 4 * f * 4 * c * k2 + 4 * c
    else:
        mapping = (4 * f * f * k2 + f) + (config.mapping_depth - 2) * hidden + (f * 4 * c * k2 + 4 * c)
    return branches + mapping


class Conv:
    """A 3x3 convolution layer: weight (Cout, Cin, 3, 3) and bias (Cout,)."""

    def __init__(self, weight: np.ndarray, bias: np.ndarray, name: str):
        self.weight = Parameter(weight, name=f"{name}.weight")
        self.bias = Parameter(bias, name=f"{name}.bias")

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias)


@dataclass
class ModelParameters:
    config: WDnCNNConfig
    branches: list[list[Conv]]
    mapping: list[Conv]
    init_seed: int | None = None
    _named: list[Parameter] = field(init=False, repr=False)

    def __post_init__(self):
        self._named = [p for conv in self.layers() for p in (conv.weight, conv.bias)]

    def layers(self) -> list[Conv]:
        return [conv for branch in self.branches for conv in branch] + list(self.mapping)

    def parameters(self) -> list[Parameter]:
        return list(self._named)

    def count(self) -> int:
        return sum(p.data.size for p in self._named)

    def zero_grad(self) -> None:
        for p in self._named:
            p.zero_grad()

    def digest(self) -> str:
        h = hashlib.sha256()
        for p in self._named:
            h.update(p.name.encode())
            h.update(np.asarray(p.shape, dtype="<i8").tobytes())
            h.update(p.data.astype("<f8").tobytes())
        return h.hexdigest()


def _layer_shapes(config: WDnCNNConfig):
    c, f = config.channels, config.feature_width
    for band, depth in zip(BANDS, config.bnm_depths):
        shapes = [(f, c + 1)] + [(f, f)] * (depth - 1)
        yield f"bnm.{band}", shapes
    if config.mapping_depth == 1:
        yield "mapping", [(4 * c, 4 * f)]
    else:
        yield "mapping", [(f, 4 * f)] + [(f, f)] * (config.mapping_depth - 2) + [(4 * c, f)]


def _assemble(config: WDnCNNConfig, make_weight, seed=None) -> ModelParameters:
    groups = []
    for prefix, shapes in _layer_shapes(config):
        layers = []
        for i, (cout, cin) in enumerate(shapes):
            name = f"{prefix}.{i}"
            layers.append(Conv(make_weight(name, (cout, cin, 3, 3)), np.zeros(cout), name))
        groups.append(layers)
    return ModelParameters(config, groups[:4], groups[4], seed)


def build_model(config: WDnCNNConfig, seed: int) -> ModelParameters:
    """Kaiming-normal weights (one independent stream per layer), zero biases."""
    counter = iter(range(1 << 30))
    return _assemble(config, lambda name, shape: engine.kaiming_normal_init(shape, [seed, next(counter)]), seed)


def zero_model(config: WDnCNNConfig) -> ModelParameters:
    return _assemble(config, lambda name, shape: np.zeros(shape))


def noise_level_map(sigma, height: int, width: int) -> np.ndarray:
    """Constant plane(s) holding the normalised noise level.

    A scalar ``sigma`` gives shape (1, H, W); a length-N array gives
    (N, 1, H, W), one plane per batch item.
    """
    sig = np.asarray(sigma, dtype=np.float64)
    if sig.ndim > 1:
        raise ShapeError(f"sigma must be a scalar or 1-D array, got shape {sig.shape}")
    if np.any(sig < 0) or np.any(sig > SIGMA_MAX / 255.0 + 1e-12):
        raise DomainError(f"normalised sigma must lie in [0, {SIGMA_MAX}/255], got {sigma}")
    if sig.ndim == 0:
        return np.full((1, height, width), float(sig))
    return np.broadcast_to(sig[:, None, None, None], (len(sig), 1, height, width)).copy()


def bnm_forward(subbands: SubbandSet, noise_map: np.ndarray, params: ModelParameters) -> list[Tensor]:
    """Run each band, concatenated with the noise plane, through its own branch."""
    noise = Tensor(noise_map)
    c = params.config.channels
    outs = []
    for band, branch in zip(subbands.bands(), params.branches):
        if noise.shape[-2:] != band.shape[-2:] or noise.data.ndim != np.ndim(band):
            raise ShapeError(f"noise map {noise.shape} does not match sub-band {np.shape(band)}")
        if np.shape(band)[-3] != c:
            raise ShapeError(f"sub-band has {np.shape(band)[-3]} channels, model expects {c}")
        x = concat_channels([band if isinstance(band, Tensor) else Tensor(band), noise])
        for conv in branch:
            x = relu(conv(x))
        outs.append(x)
    return outs


def mapping_forward(band_features: list[Tensor], params: ModelParameters) -> list[Tensor]:
    """Shared mapping stack; returns per-band residual (noise) predictions LL, LH, HL, HH."""
    if len(band_features) != 4:
        raise ShapeError(f"expected four band feature maps, got {len(band_features)}")
    if len({f.shape for f in band_features}) != 1:
        raise ShapeError(f"band feature shapes differ: {[f.shape for f in band_features]}")
    x = concat_channels(band_features)
    *hidden, last = params.mapping
    for conv in hidden:
        x = relu(conv(x))
    c = params.config.channels
    return split_channels(last(x), [c, c, c, c])


def forward(noisy: SubbandSet, sigma, params: ModelParameters) -> SubbandSet:
    """Predict the per-band noise of ``noisy`` given the normalised noise level.

    The returned SubbandSet holds differentiable Tensors; use ``.data`` on
    each band (or :func:`predict_noise`) for plain arrays.
    """
    h0, w0 = noisy.shape[-2:]
    planes = noise_level_map(sigma, h0, w0)
    residual = mapping_forward(bnm_forward(noisy, planes, params), params)
    return SubbandSet(*residual, noisy.original_height, noisy.original_width, noisy.filter_name)


def predict_noise(noisy: SubbandSet, sigma, params: ModelParameters) -> SubbandSet:
    res = forward(noisy, sigma, params)
    return res.replace_bands([b.data for b in res.bands()])


def denoise(
    image: np.ndarray,
    sigma_n: float,
    params: ModelParameters,
    bank: FilterBank,
    clamp: bool = True,
) -> np.ndarray:
    """Denoise a (C, H, W) image in [0, 1] corrupted at level ``sigma_n`` (0-255 scale)."""
    if not 0.0 <= sigma_n <= SIGMA_MAX:
        raise DomainError(f"sigma_n must lie in [0, {SIGMA_MAX}], got {sigma_n}")
    image = np.asarray(image, dtype=np.float64)
    noisy = dwt2(image, bank)
    clean = noisy - predict_noise(noisy, sigma_n / 255.0, params)
    out = idwt2(clean, bank)
    return np.clip(out, 0.0, 1.0) if clamp else out
