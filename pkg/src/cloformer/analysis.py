"""Frequency content of feature maps: centered spectra and radial band energies."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DimensionError, NumericError
from .model import Model, model_forward
from .tensor import Tensor, no_grad

BRANCH_TAPS = ("local.v_s", "local.out", "global.out")


@dataclass
class SpectrumReport:
    log_mag: np.ndarray   # (H, W) log(1 + mean |F|), zero frequency at the center
    power: np.ndarray     # (H, W) mean |F|^2, same layout
    source: str = ""

    @property
    def bands(self) -> np.ndarray:
        return band_energy(self)


def feature_spectrum(f, source: str = "") -> SpectrumReport:
    """Mean-removed 2D DFT of every (sample, channel) plane, averaged and centered."""
    a = f.data if isinstance(f, Tensor) else np.asarray(f)
    if a.ndim != 4:
        raise DimensionError(f"expected an (N, C, H, W) feature map, got shape {a.shape}")
    if a.shape[2] < 2 or a.shape[3] < 2:
        raise DimensionError(f"spatial extent must be at least 2x2, got {a.shape[2]}x{a.shape[3]}")
    a = a.astype(np.float64)
    if not np.isfinite(a).all():
        raise NumericError("feature map contains non-finite values")
    a = a - a.mean(axis=(2, 3), keepdims=True)
    spec = np.fft.fft2(a, axes=(2, 3))
    mag = np.abs(spec)
    mag_mean = np.fft.fftshift(mag.mean(axis=(0, 1)))
    power = np.fft.fftshift((mag ** 2).mean(axis=(0, 1)))
    return SpectrumReport(np.log1p(mag_mean), power, source)


def radius_map(h: int, w: int) -> np.ndarray:
    """Radial frequency of each centered bin, 1.0 at the Nyquist frequency of either axis."""
    fy = np.fft.fftshift(np.fft.fftfreq(h)) * 2.0
    fx = np.fft.fftshift(np.fft.fftfreq(w)) * 2.0
    return np.hypot(fy[:, None], fx[None, :])


def band_energy(r: SpectrumReport, n_bands: int = 8) -> np.ndarray:
    """Share of spectral power in ``n_bands`` equal-width annuli over radius [0, 1].

    Corner bins beyond the Nyquist circle fall into the last band. A spectrum
    with no power at all (a constant map) is reported as entirely in band 0.
    """
    h, w = r.power.shape
    if n_bands < 2:
        raise ArgumentError(f"need at least 2 bands, got {n_bands}")
    if n_bands > min(h, w) // 2:
        raise ArgumentError(f"{n_bands} bands exceed min(H, W)/2 = {min(h, w) // 2}")
    idx = np.minimum((radius_map(h, w) * n_bands).astype(int), n_bands - 1)
    e = np.bincount(idx.ravel(), weights=r.power.ravel(), minlength=n_bands)
    total = e.sum()
    if total <= 0:
        e = np.zeros(n_bands)
        e[0] = 1.0
        return e
    return e / total


def high_band_mass(bands: np.ndarray) -> float:
    """Energy share of the upper half of the bands."""
    return float(bands[len(bands) // 2:].sum())


def branch_spectra(m: Model, x: Tensor, stage: int) -> list[SpectrumReport]:
    """Spectra of the shared-weight output, the full local output and the global output
    of the last block in ``stage`` (2 or 3)."""
    if stage not in (2, 3):
        raise ArgumentError(f"stage must be 2 or 3, got {stage}")
    last = len(m.stages[stage - 1]) - 1
    prefix = f"stage{stage}.block{last}"
    taps = {}
    with no_grad():
        model_forward(x, m, taps=taps)
    reports = []
    for name in BRANCH_TAPS:
        key = f"{prefix}.{name}"
        if key not in taps:
            raise ArgumentError(f"{key} is not produced by this configuration")
        reports.append(feature_spectrum(taps[key], source=key))
    return reports


def write_pgm(r: SpectrumReport, path) -> None:
    """8-bit binary PGM of the log-magnitude, scaled so the maximum maps to 255."""
    lm = r.log_mag
    peak = lm.max()
    img = np.zeros(lm.shape, np.uint8) if peak <= 0 else np.round(lm / peak * 255).astype(np.uint8)
    h, w = img.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_bands_csv(bands: np.ndarray, path) -> None:
    lines = ["band_index,energy"] + [f"{i},{e:.10g}" for i, e in enumerate(bands)]
    Path(path).write_text("\n".join(lines) + "\n")
