"""Symmetric k-bit static quantizers, int4 packing, GPTQ-style refinement,
and the 1-bit sign+scale baseline.

Conventions, fixed on purpose:

* codes live in [-(2^(k-1)-1), 2^(k-1)-1]; the asymmetric extra code is
  never used, which makes quantize(-m) == -quantize(m) hold exactly;
* rounding is half-away-from-zero;
* scale = max|group| / (2^(k-1)-1), where a group is the whole tensor,
  one row (per-token) or one column (per-channel);
* an all-zero group gets scale 1.0 so downstream scale math never divides
  by zero and reconstruction of zeros is exact.

Granularity is constrained by where scales can be applied around an integer
matmul: activations are per-token or per-tensor (row side), the mid factor
is per-tensor only, and the output-side factor may be per-channel (columns).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, ValidationError

PER_TENSOR = "per-tensor"
PER_TOKEN = "per-token"
PER_CHANNEL = "per-channel"
_GRANULARITIES = (PER_TENSOR, PER_TOKEN, PER_CHANNEL)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest with ties away from zero (platform independent)."""
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


@dataclass(frozen=True)
class ScaleDescriptor:
    """Quantization scales plus the grouping they apply to.

    `scales` is a scalar-shaped array for per-tensor, one value per row for
    per-token, one per column for per-channel. All values positive, finite.
    """

    granularity: str
    scales: np.ndarray  # float32; shape () or (rows,) or (cols,)

    def __post_init__(self):
        if self.granularity not in _GRANULARITIES:
            raise ValidationError(f"unknown granularity {self.granularity!r}")
        s = np.asarray(self.scales, dtype=np.float32)
        if not np.isfinite(s).all() or (s <= 0).any():
            raise ValidationError("scales must be positive and finite")
        object.__setattr__(self, "scales", s)

    def row_col_vectors(self, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
        """Expand to (row_scale, col_scale) factors whose outer product is
        the per-element scale grid."""
        ones_r = np.ones(rows, dtype=np.float32)
        ones_c = np.ones(cols, dtype=np.float32)
        if self.granularity == PER_TENSOR:
            return ones_r * self.scales, ones_c
        if self.granularity == PER_TOKEN:
            return self.scales.astype(np.float32), ones_c
        return ones_r, self.scales.astype(np.float32)


@dataclass(frozen=True)
class QuantGrid:
    """Integer codes with their scale descriptor.

    Codes are stored as int8 regardless of the declared bit width; for
    bits=4 every code fits a signed nibble and pack_int4 produces the
    two-per-byte stored form.
    """

    codes: np.ndarray  # int8, 2-D
    bits: int
    scale: ScaleDescriptor

    def __post_init__(self):
        c = np.asarray(self.codes)
        if c.ndim != 2 or c.dtype != np.int8:
            raise ValidationError("codes must be a 2-D int8 array")
        limit = (1 << (self.bits - 1)) - 1
        if np.abs(c.astype(np.int32)).max(initial=0) > limit:
            raise ValidationError(f"codes exceed symmetric {self.bits}-bit range +-{limit}")

    @property
    def rows(self) -> int:
        return self.codes.shape[0]

    @property
    def cols(self) -> int:
        return self.codes.shape[1]


@dataclass(frozen=True)
class QuantConfig:
    """Bit widths and granularities for the three quantized operands.

    The mid factor of the two-stage pipeline is per-tensor by construction,
    so only the activation side and the output side have a granularity
    choice; the low-rank A factor is always per-tensor.
    """

    bits_x: int = 8
    bits_a: int = 8
    bits_b: int = 8
    gran_x: str = PER_TOKEN
    gran_b: str = PER_CHANNEL

    def __post_init__(self):
        for name, b in (("bits_x", self.bits_x), ("bits_a", self.bits_a), ("bits_b", self.bits_b)):
            if b not in (4, 8):
                raise ValidationError(f"{name} must be 4 or 8, got {b}")
        if self.gran_x not in (PER_TOKEN, PER_TENSOR):
            raise ValidationError(f"gran_x must be per-token or per-tensor, got {self.gran_x!r}")
        if self.gran_b not in (PER_CHANNEL, PER_TENSOR):
            raise ValidationError(f"gran_b must be per-channel or per-tensor, got {self.gran_b!r}")

    @property
    def gran_a(self) -> str:
        return PER_TENSOR

    def tag(self) -> str:
        return f"X{self.bits_x}A{self.bits_a}B{self.bits_b}"


def _group_scales(m: np.ndarray, bits: int, granularity: str) -> np.ndarray:
    limit = float((1 << (bits - 1)) - 1)
    if granularity == PER_TENSOR:
        peak = np.max(np.abs(m), initial=0.0)
        peak = np.asarray(peak, dtype=np.float64)
    elif granularity == PER_TOKEN:
        peak = np.max(np.abs(m), axis=1).astype(np.float64)
    elif granularity == PER_CHANNEL:
        peak = np.max(np.abs(m), axis=0).astype(np.float64)
    else:
        raise ValidationError(f"unknown granularity {granularity!r}")
    scales = peak / limit
    scales = np.where(scales == 0.0, 1.0, scales)  # all-zero group rule
    return scales.astype(np.float32)


def quantize(m: np.ndarray, bits: int, granularity: str) -> QuantGrid:
    """Symmetric static quantization of a finite float32 matrix."""
    if m.ndim != 2:
        raise ShapeError("quantize expects a 2-D matrix")
    if not np.isfinite(m).all():
        raise ValidationError("quantize input contains non-finite values")
    if bits not in (4, 8):
        raise ValidationError(f"bits must be 4 or 8, got {bits}")
    scales = _group_scales(m, bits, granularity)
    desc = ScaleDescriptor(granularity, scales)
    row_s, col_s = desc.row_col_vectors(*m.shape)
    denom = row_s.astype(np.float64)[:, None] * col_s.astype(np.float64)[None, :]
    limit = (1 << (bits - 1)) - 1
    codes = round_half_away(m.astype(np.float64) / denom)
    codes = np.clip(codes, -limit, limit).astype(np.int8)
    return QuantGrid(codes, bits, desc)


def dequantize(q: QuantGrid) -> np.ndarray:
    """Elementwise inverse: code times its group scale, in float32."""
    row_s, col_s = q.scale.row_col_vectors(q.rows, q.cols)
    return (q.codes.astype(np.float32) * row_s[:, None]) * col_s[None, :]


def quantize_with_scales(m: np.ndarray, bits: int, desc: ScaleDescriptor) -> QuantGrid:
    """Quantize against externally fixed scales (static-scale path)."""
    row_s, col_s = desc.row_col_vectors(*m.shape)
    denom = row_s.astype(np.float64)[:, None] * col_s.astype(np.float64)[None, :]
    limit = (1 << (bits - 1)) - 1
    codes = round_half_away(m.astype(np.float64) / denom)
    codes = np.clip(codes, -limit, limit).astype(np.int8)
    return QuantGrid(codes, bits, desc)


# ---------------------------------------------------------------------------
# GPTQ-style refinement of the output-side factor B


def calibration_hessian(m_calib: np.ndarray, damp: float = 0.01) -> np.ndarray:
    """H = M^T M / T + lambda*I with lambda = damp * mean(diag).

    `m_calib` is whatever feeds the B-side matmul during calibration
    (typically the int32 accumulator of the first stage, cast to float).
    """
    m64 = np.asarray(m_calib, dtype=np.float64)
    if m64.ndim != 2:
        raise ShapeError("calibration matrix must be 2-D")
    h = m64.T @ m64 / m64.shape[0]
    mean_diag = float(np.mean(np.diag(h)))
    if mean_diag <= 0:
        mean_diag = 1.0
    h[np.diag_indices_from(h)] += damp * mean_diag
    return h


def gptq_refine(b_init: QuantGrid, b_fp: np.ndarray, hessian: np.ndarray) -> QuantGrid:
    """Sequential quantization of B with error feedback.

    Walks the rank dimension of B (the contraction side of the second
    matmul, which is what the R x R Hessian describes): quantize one slice,
    then push its rounding error into the not-yet-quantized slices through
    the Cholesky factor of H^-1. Scales are taken as-is from `b_init`
    (static), only codes change. With H = I the feedback term vanishes and
    the result equals plain round-to-nearest.
    """
    b_fp = np.asarray(b_fp, dtype=np.float32)
    r, c_out = b_fp.shape
    if b_init.codes.shape != (r, c_out):
        raise ShapeError("b_init and b_fp shapes differ")
    if hessian.shape != (r, r):
        raise ShapeError(f"Hessian must be {r}x{r}, got {hessian.shape}")

    h = np.asarray(hessian, dtype=np.float64)
    h = 0.5 * (h + h.T)
    try:
        np.linalg.cholesky(h)
        h_inv = np.linalg.inv(h)
        h_inv = 0.5 * (h_inv + h_inv.T)
        # Upper factor U with H^-1 = U^T U; row j carries the feedback
        # weights from slice j to the slices after it.
        upper = np.linalg.cholesky(h_inv).T
    except np.linalg.LinAlgError as exc:
        raise ValidationError("Hessian is not positive definite") from exc

    desc = b_init.scale
    row_s, col_s = desc.row_col_vectors(r, c_out)
    scale_grid = row_s.astype(np.float64)[:, None] * col_s.astype(np.float64)[None, :]
    limit = (1 << (b_init.bits - 1)) - 1

    work = b_fp.astype(np.float64).copy()
    codes = np.zeros((r, c_out), dtype=np.int8)
    for j in range(r):
        cj = round_half_away(work[j] / scale_grid[j])
        cj = np.clip(cj, -limit, limit)
        codes[j] = cj.astype(np.int8)
        deq = cj * scale_grid[j]
        err = (work[j] - deq) / upper[j, j]
        if j + 1 < r:
            work[j + 1 :] -= np.outer(upper[j, j + 1 :], err)
    return QuantGrid(codes, b_init.bits, desc)


# ---------------------------------------------------------------------------
# 1-bit sign+scale baseline


def bitdelta_compress(delta: np.ndarray) -> tuple[np.ndarray, float]:
    """Collapse a delta to sign(delta) with one mean-absolute scale.

    sign(0) counts as +1 so the sign grid is strictly +-1.
    """
    if not np.isfinite(delta).all():
        raise ValidationError("delta contains non-finite values")
    scale = float(np.mean(np.abs(delta, dtype=np.float64)))
    signs = np.where(delta < 0, -1, 1).astype(np.int8)
    return signs, scale


def bitdelta_dequantize(signs: np.ndarray, scale: float) -> np.ndarray:
    return (signs.astype(np.float32)) * np.float32(scale)


# ---------------------------------------------------------------------------
# int4 nibble packing (stored form of bits=4 grids)


def pack_int4(codes: np.ndarray) -> bytes:
    """Two codes per byte, row-major; low nibble holds the even column.

    Accepts the full two's-complement nibble range [-8, 7]. For an odd
    number of values the final high nibble is zero.
    """
    flat = np.asarray(codes, dtype=np.int64).reshape(-1)
    if flat.size and (flat.min() < -8 or flat.max() > 7):
        raise ValidationError("int4 codes must lie in [-8, 7]")
    nib = (flat & 0xF).astype(np.uint8)
    if nib.size % 2:
        nib = np.concatenate([nib, np.zeros(1, dtype=np.uint8)])
    lo = nib[0::2]
    hi = nib[1::2]
    return ((hi << 4) | lo).astype(np.uint8).tobytes()


def unpack_int4(data: bytes, rows: int, cols: int) -> np.ndarray:
    """Inverse of pack_int4 with sign extension; validates the pad nibble."""
    n = rows * cols
    expected = (n + 1) // 2
    if len(data) != expected:
        raise ValidationError(f"int4 payload must be {expected} bytes for {rows}x{cols}, got {len(data)}")
    raw = np.frombuffer(data, dtype=np.uint8)
    lo = raw & 0xF
    hi = raw >> 4
    nib = np.empty(raw.size * 2, dtype=np.uint8)
    nib[0::2] = lo
    nib[1::2] = hi
    if n % 2 and nib[n] != 0:
        raise ValidationError("trailing int4 pad nibble must be zero")
    nib = nib[:n]
    signed = nib.astype(np.int16)
    signed[signed >= 8] -= 16
    return signed.astype(np.int8).reshape(rows, cols)
