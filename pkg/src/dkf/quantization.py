"""Interval quantization of inter-sensor messages.

Estimate vectors are sent through a dithered interval quantizer so the
quantization error behaves like i.i.d. uniform noise independent of the
payload; covariance matrices are quantized plainly (no dither) and the
receiver compensates the resulting loss of consistency by inflating the
diagonal.  A step of 0 disables quantization entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


def quantize(z, delta: float):
    """Map z onto the grid {m*delta} with the half-open cell
    (m - 1/2)*delta <= z < (m + 1/2)*delta.

    Accepts scalars or arrays; requires delta > 0 and finite input.
    """
    if delta <= 0:
        raise ValidationError(f"quantizer step must be positive, got {delta}")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise ValidationError("quantizer input must be finite")
    out = np.floor(z / delta + 0.5) * delta
    return out if out.ndim else float(out)


def dither_quantize_vector(x: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Quantize a vector element-wise after adding fresh uniform dither
    on [-delta/2, delta/2).  delta == 0 returns the input unchanged."""
    x = np.asarray(x, dtype=float)
    if delta == 0:
        return x.copy()
    xi = rng.uniform(-delta / 2, delta / 2, size=x.shape)
    return quantize(x + xi, delta)


def quantize_matrix_plain(p: np.ndarray, delta: float) -> np.ndarray:
    """Element-wise interval quantization without dither; symmetric input
    gives symmetric output exactly."""
    p = np.asarray(p, dtype=float)
    if delta == 0:
        return p.copy()
    return quantize(p, delta)


def compensation_term(delta: float, nbar: int) -> float:
    """Diagonal inflation nbar*delta*(2*delta + 1)/2 that restores
    consistency of a quantized covariance plus dithered-estimate message."""
    return nbar * delta * (2.0 * delta + 1.0) / 2.0


def compensate_covariance(p_check: np.ndarray, delta: float, nbar: int) -> np.ndarray:
    p_check = np.asarray(p_check, dtype=float)
    if delta == 0:
        return p_check.copy()
    return p_check + compensation_term(delta, nbar) * np.eye(nbar)


@dataclass
class Message:
    """A quantized (estimate, covariance) pair broadcast by one sensor."""

    sender: int
    x_check: np.ndarray
    p_check: np.ndarray
    delta: float

    def encode(self) -> str:
        """One-line wire/log form: sender, step, then grid indices
        (value/delta) row-major.  With delta == 0 raw float reprs are
        used instead of indices."""
        if self.delta > 0:
            xs = " ".join(str(int(round(v / self.delta))) for v in self.x_check)
            ps = " ".join(str(int(round(v / self.delta))) for v in self.p_check.ravel())
        else:
            xs = " ".join(repr(float(v)) for v in self.x_check)
            ps = " ".join(repr(float(v)) for v in self.p_check.ravel())
        return f"{self.sender};{self.delta!r};{xs};{ps}"

    @classmethod
    def decode(cls, line: str) -> "Message":
        sender_s, delta_s, xs, ps = line.split(";")
        delta = float(delta_s)
        if delta > 0:
            x = np.array([int(t) * delta for t in xs.split()])
            pflat = np.array([int(t) * delta for t in ps.split()])
        else:
            x = np.array([float(t) for t in xs.split()])
            pflat = np.array([float(t) for t in ps.split()])
        n = x.size
        return cls(int(sender_s), x, pflat.reshape(n, n), delta)
