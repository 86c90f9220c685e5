"""Unitary 2-D discrete Fourier transforms, per channel and per patch.

All transforms use the unitary convention

    X[u, v] = (1 / sqrt(h*w)) * sum_{m,n} x[m, n] * exp(-2j*pi*(m*u/h + n*v/w))

so forward and inverse are adjoints and Parseval holds exactly.  Under this
scaling, the elementwise product of two spectra inverse-transforms to the
circular convolution of the signals divided by sqrt(h*w).

Two evaluation routes are provided:

* ``dft2_reference`` / ``idft2_reference`` evaluate the defining double sum
  directly against a precomputed exponential kernel.  They are the ground
  truth and are only meant for small grids (cost and memory grow as (h*w)^2).
* ``dft2`` / ``idft2`` use numpy's FFT with orthonormal scaling, which
  computes the same quantity fast.  The test suite pins the two routes
  against each other to 1e-12 relative over 10^4 random patches.

Complex intermediate work is always done in complex128, regardless of the
input precision, so the imaginary residue of a physically-real inverse stays
at rounding level.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ShapeError, SpectralResidueError


@lru_cache(maxsize=32)
def _dft_kernel(h: int, w: int) -> np.ndarray:
    """Dense (h, w, h, w) kernel K[u,v,m,n] = exp(-2j*pi*(mu/h + nv/w)) / sqrt(hw)."""
    u = np.arange(h).reshape(h, 1, 1, 1)
    v = np.arange(w).reshape(1, w, 1, 1)
    m = np.arange(h).reshape(1, 1, h, 1)
    n = np.arange(w).reshape(1, 1, 1, w)
    phase = -2j * np.pi * (m * u / h + n * v / w)
    return np.exp(phase) / np.sqrt(h * w)


def dft2_reference(x: np.ndarray) -> np.ndarray:
    """Direct-sum forward transform of one or more real grids (..., h, w)."""
    x = np.asarray(x, dtype=np.float64)
    h, w = x.shape[-2:]
    if h < 1 or w < 1:
        raise ShapeError("dft2 requires extents >= 1")
    kern = _dft_kernel(h, w)
    return np.einsum("uvmn,...mn->...uv", kern, x)


def idft2_reference(X: np.ndarray) -> np.ndarray:
    """Direct-sum inverse transform; returns the complex grid."""
    X = np.asarray(X, dtype=np.complex128)
    h, w = X.shape[-2:]
    kern = _dft_kernel(h, w)
    # The unitary inverse is the conjugate transpose of the forward kernel.
    return np.einsum("uvmn,...uv->...mn", np.conj(kern), X)


def dft2(x: np.ndarray) -> np.ndarray:
    """Forward unitary transform of real grids (..., h, w) -> complex128."""
    x = np.asarray(x)
    if x.shape[-2] < 1 or x.shape[-1] < 1:
        raise ShapeError("dft2 requires extents >= 1")
    if x.dtype != np.float64 and not np.iscomplexobj(x):
        x = x.astype(np.float64)
    return np.fft.fft2(x, axes=(-2, -1), norm="ortho")


def _idft2_complex(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X)
    if X.dtype != np.complex128:
        X = X.astype(np.complex128)
    return np.fft.ifft2(X, axes=(-2, -1), norm="ortho")


def idft2(X: np.ndarray, imag_tol: float | None = None) -> np.ndarray:
    """Inverse transform of a spectrum expected to describe a real signal.

    The imaginary residue is discarded after asserting its maximum magnitude
    is at most ``imag_tol`` (absolute).  ``imag_tol=None`` skips the check,
    for callers that have already bounded it.
    """
    z = _idft2_complex(X)
    if imag_tol is not None:
        residue = float(np.max(np.abs(z.imag))) if z.size else 0.0
        if residue > imag_tol:
            raise SpectralResidueError(
                f"imaginary residue {residue:.3e} exceeds {imag_tol:.3e}; "
                "spectrum is not that of a real signal"
            )
    return np.ascontiguousarray(z.real)


def amp_phase(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Polar decomposition of a complex grid.

    Amplitude is sqrt(re^2 + im^2); phase is the four-quadrant angle in
    (-pi, pi], with the zero bin assigned phase 0.
    """
    X = np.asarray(X)
    amp = np.abs(X)
    pha = np.arctan2(X.imag, X.real)
    # arctan2(-0.0, negative) lands on -pi; fold onto +pi to keep (-pi, pi].
    pha = np.where(pha == -np.pi, np.pi, pha)
    return amp, pha


def from_amp_phase(amp: np.ndarray, pha: np.ndarray) -> np.ndarray:
    """Rebuild the complex grid from amplitude and phase."""
    return amp * np.exp(1j * np.asarray(pha))


def extract_patches(x: np.ndarray, patch: int) -> np.ndarray:
    """Tile (N, C, H, W) into non-overlapping patches (N, C, H/p, W/p, p, p).

    H and W must be multiples of ``patch``; callers pad first.
    """
    if patch < 1:
        raise ShapeError("patch size must be >= 1")
    n, c, h, w = x.shape
    if h % patch or w % patch:
        raise ShapeError(
            f"extents ({h},{w}) are not multiples of patch {patch}; pad the input first"
        )
    t = x.reshape(n, c, h // patch, patch, w // patch, patch)
    return np.ascontiguousarray(t.transpose(0, 1, 2, 4, 3, 5))


def merge_patches(p: np.ndarray, h: int, w: int) -> np.ndarray:
    """Inverse of ``extract_patches``; reassembles (N, C, h, w) exactly."""
    n, c, nh, nw, ph, pw = p.shape
    if nh * ph != h or nw * pw != w:
        raise ShapeError(f"patch grid {p.shape} does not tile ({h},{w})")
    t = p.transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(t.reshape(n, c, h, w))


def patchwise_dft(x: np.ndarray, patch: int) -> np.ndarray:
    """One independent unitary DFT per (batch, channel, patch)."""
    return dft2(extract_patches(x, patch))


def patchwise_idft(
    X: np.ndarray, h: int, w: int, imag_tol: float | None = None
) -> np.ndarray:
    """Invert per-patch spectra and reassemble the (N, C, h, w) grid."""
    real = idft2(X, imag_tol=imag_tol)
    return merge_patches(real, h, w)
