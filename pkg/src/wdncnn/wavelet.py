"""Single-level 2-D DWT/IDWT with half-point symmetric boundary extension.

Band naming: the first letter is the filter applied horizontally (along
width, the last axis), the second the filter applied vertically (along
height). So ``lh`` responds to horizontal edges (intensity changing from
row to row) and ``hl`` to vertical edges.

High-pass filters follow the alternating-flip convention
``hi_dec[k] = (-1)**(k+1) * lo_dec[L-1-k]``; reconstruction filters are the
time reverses of the decomposition filters. For Haar this gives
``lo_dec = [1/sqrt2, 1/sqrt2]`` and ``hi_dec = [-1/sqrt2, 1/sqrt2]``.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, IntegrityError, ShapeError, UnknownFilterError

BANDS = ("ll", "lh", "hl", "hh")

# max-abs round-trip error each shipped bank must meet
TOLERANCES = {"haar": 1e-12, "sym8": 1e-10, "dmey": 1e-8}


@dataclass(frozen=True)
class FilterBank:
    name: str
    lo_dec: np.ndarray
    hi_dec: np.ndarray
    lo_rec: np.ndarray
    hi_rec: np.ndarray

    @property
    def length(self) -> int:
        return len(self.lo_dec)

    @classmethod
    def from_lowpass(cls, name: str, lo_dec) -> "FilterBank":
        lo = np.asarray(lo_dec, dtype=np.float64)
        n = len(lo)
        hi = np.array([(-1) ** (k + 1) * lo[n - 1 - k] for k in range(n)])
        for arr in (lo, hi):
            arr.setflags(write=False)
        return cls(name, lo, hi, lo[::-1], hi[::-1])


@dataclass
class SubbandSet:
    """Four coefficient planes of shape (..., H0, W0) plus what is needed to invert them."""

    ll: np.ndarray
    lh: np.ndarray
    hl: np.ndarray
    hh: np.ndarray
    original_height: int
    original_width: int
    filter_name: str

    def __post_init__(self):
        shapes = {b.shape for b in self.bands()}
        if len(shapes) != 1:
            raise ShapeError(f"sub-bands disagree in shape: {sorted(shapes)}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.ll.shape

    def bands(self) -> tuple[np.ndarray, ...]:
        return (self.ll, self.lh, self.hl, self.hh)

    def replace_bands(self, bands) -> "SubbandSet":
        ll, lh, hl, hh = bands
        return SubbandSet(ll, lh, hl, hh, self.original_height, self.original_width, self.filter_name)

    def __sub__(self, other: "SubbandSet") -> "SubbandSet":
        return self.replace_bands([a - b for a, b in zip(self.bands(), other.bands())])

    def __add__(self, other: "SubbandSet") -> "SubbandSet":
        return self.replace_bands([a + b for a, b in zip(self.bands(), other.bands())])

    def scaled(self, factor: float) -> "SubbandSet":
        return self.replace_bands([factor * b for b in self.bands()])

    def energy(self) -> float:
        return float(sum(np.sum(b * b) for b in self.bands()))


def subband_size(n: int, filter_length: int) -> int:
    return (n + filter_length - 1) // 2


def _parse_table(text: str, name: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise IntegrityError(f"filter table for {name!r} is empty")
    header = lines[0].split()
    if len(header) != 2 or header[0] != name:
        raise IntegrityError(f"filter table header {lines[0]!r} does not name bank {name!r}")
    taps = int(header[1])
    coeffs = np.array([float(v) for v in lines[1:]])
    if len(coeffs) != taps:
        raise IntegrityError(f"{name}: header declares {taps} taps, table has {len(coeffs)}")
    return coeffs


def verify_filterbank(bank: FilterBank, tol: float) -> float:
    """Round-trip random 2-D signals through the bank; return the max-abs error or raise."""
    n = bank.length
    rng = np.random.default_rng(20240501)
    worst = 0.0
    for h, w in ((n, n + 1), (n + 3, n + 2)):
        x = rng.standard_normal((h, w))
        err = float(np.max(np.abs(idwt2(dwt2(x, bank), bank) - x)))
        worst = max(worst, err)
    if not worst < tol:
        raise IntegrityError(f"bank {bank.name!r} round-trip error {worst:.3g} exceeds {tol:.1g}")
    return worst


@functools.lru_cache(maxsize=None)
def load_filterbank(name: str) -> FilterBank:
    """Load a shipped bank (haar, sym8 or dmey) and verify perfect reconstruction."""
    if name not in TOLERANCES:
        raise UnknownFilterError(f"unknown filter bank {name!r}; choose from {sorted(TOLERANCES)}")
    text = resources.files("wdncnn").joinpath("filters", f"{name}.txt").read_text()
    bank = FilterBank.from_lowpass(name, _parse_table(text, name))
    if name == "haar":
        if abs(np.sum(bank.lo_dec**2) - 1.0) > 1e-15 or abs(np.dot(bank.lo_dec, bank.hi_dec)) > 1e-15:
            raise IntegrityError("haar bank is not orthonormal")
    verify_filterbank(bank, TOLERANCES[name])
    return bank


# --- 1-D kernels along an arbitrary axis ----------------------------------


def _analysis(x: np.ndarray, filt: np.ndarray, axis: int) -> np.ndarray:
    axis %= x.ndim
    n = x.shape[axis]
    flen = len(filt)
    pad = [(0, 0)] * x.ndim
    pad[axis] = (flen - 1, flen - 1)
    xe = np.pad(x, pad, mode="symmetric")
    windows = sliding_window_view(xe, flen, axis=axis)  # window axis appended last
    idx = [slice(None)] * windows.ndim
    idx[axis] = slice(1, 2 * subband_size(n, flen), 2)
    return np.tensordot(windows[tuple(idx)], filt[::-1], axes=([-1], [0]))


def _synthesis(c: np.ndarray, filt: np.ndarray, axis: int) -> np.ndarray:
    # full convolution of the zero-upsampled signal, keeping the central 2n - L + 2 samples
    axis %= c.ndim
    n = c.shape[axis]
    flen = len(filt)
    shape = list(c.shape)
    shape[axis] = 2 * n
    up = np.zeros(shape)
    idx = [slice(None)] * c.ndim
    idx[axis] = slice(0, 2 * n, 2)
    up[tuple(idx)] = c
    pad = [(0, 0)] * c.ndim
    pad[axis] = (flen - 1, flen - 1)
    windows = sliding_window_view(np.pad(up, pad), flen, axis=axis)
    full = np.tensordot(windows, filt[::-1], axes=([-1], [0]))
    keep = [slice(None)] * c.ndim
    keep[axis] = slice(flen - 2, 2 * n)
    return full[tuple(keep)]


def dwt2(image: np.ndarray, bank: FilterBank) -> SubbandSet:
    """Separable single-level DWT over the last two axes of ``image``."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim < 2:
        raise ShapeError(f"dwt2 needs at least 2 dimensions, got shape {image.shape}")
    h, w = image.shape[-2:]
    if h < bank.length or w < bank.length:
        raise DomainError(f"image {h}x{w} is smaller than the {bank.length}-tap {bank.name} filter")
    lo_w = _analysis(image, bank.lo_dec, axis=-1)
    hi_w = _analysis(image, bank.hi_dec, axis=-1)
    ll = _analysis(lo_w, bank.lo_dec, axis=-2)
    lh = _analysis(lo_w, bank.hi_dec, axis=-2)
    hl = _analysis(hi_w, bank.lo_dec, axis=-2)
    hh = _analysis(hi_w, bank.hi_dec, axis=-2)
    return SubbandSet(ll, lh, hl, hh, h, w, bank.name)


def idwt2(subbands: SubbandSet, bank: FilterBank) -> np.ndarray:
    """Invert ``dwt2``; the result is cropped to the recorded original size."""
    if subbands.filter_name != bank.name:
        raise DomainError(f"sub-bands were made with {subbands.filter_name!r}, not {bank.name!r}")
    lo_w = _synthesis(subbands.ll, bank.lo_rec, -2) + _synthesis(subbands.lh, bank.hi_rec, -2)
    hi_w = _synthesis(subbands.hl, bank.lo_rec, -2) + _synthesis(subbands.hh, bank.hi_rec, -2)
    out = _synthesis(lo_w, bank.lo_rec, -1) + _synthesis(hi_w, bank.hi_rec, -1)
    h, w = subbands.original_height, subbands.original_width
    if out.shape[-2] < h or out.shape[-1] < w:
        raise ShapeError(f"reconstruction {out.shape[-2:]} smaller than recorded size {(h, w)}")
    return np.ascontiguousarray(out[..., :h, :w])


class EnergyReport(NamedTuple):
    ratio: float
    ll_share: float


def subband_energy_ratio(image: np.ndarray, bank: FilterBank) -> EnergyReport:
    """Coefficient-to-pixel energy ratio and the LL band's share of coefficient energy."""
    image = np.asarray(image, dtype=np.float64)
    sub = dwt2(image, bank)
    pixel_energy = float(np.sum(image * image))
    coeff_energy = sub.energy()
    if pixel_energy == 0.0:
        return EnergyReport(1.0, 1.0)
    return EnergyReport(coeff_energy / pixel_energy, float(np.sum(sub.ll * sub.ll)) / coeff_energy)
