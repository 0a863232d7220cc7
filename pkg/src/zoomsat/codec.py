"""Zoom-in encoder/decoder pair.

Between transmissions both sides run model copies of the plant; at each
transmission the encoder splits its quantization cell, sends one ternary
symbol per state component, and both sides contract their cell widths by
the same triangular matrix, so the decoder reconstructs the encoder state
exactly despite the channel delay.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass, replace

import numpy as np

from .controller import ControllerParams, control_original
from .errors import (
    ConfigError,
    DecodeError,
    ProtocolError,
    QuantizerOverflowError,
)
from .transforms import CoordMatrix, TransformParams

# absolute floor for containment comparisons: absorbs the subnormal endgame
# when cell widths underflow on long horizons, ~300 orders below any
# configured scale
CONTAIN_FLOOR = 1e-300
CONTAIN_RTOL = 1e-9


@dataclass(frozen=True)
class EncoderState:
    replica: np.ndarray  # copy of the decoder estimate
    estimate: np.ndarray  # encoder state estimate
    cell: np.ndarray  # cell edge widths (mixed coordinates)


@dataclass(frozen=True)
class DecoderState:
    estimate: np.ndarray
    cell: np.ndarray
    next_k: int = 0


@dataclass(frozen=True)
class Packet:
    k: int
    t_sent: float
    symbols: np.ndarray  # int8 entries in {-1, 0, +1}

    def __post_init__(self):
        sym = np.asarray(self.symbols, dtype=np.int8)
        if sym.ndim != 1 or not np.all(np.isin(sym, (-1, 0, 1))):
            raise ConfigError("symbols must be a vector over {-1, 0, +1}")
        object.__setattr__(self, "symbols", sym)

    @property
    def bits(self) -> int:
        return 2 * self.symbols.shape[0]


@dataclass(frozen=True)
class ContractionMatrix:
    """Upper-triangular cell contraction; diagonal 1/2, Schur stable."""

    mat: np.ndarray
    growth: np.ndarray  # per-level growth constants used in the design
    gap_bound: float  # largest inter-update gap the design covers

    def __post_init__(self):
        m = np.asarray(self.mat, dtype=float)
        object.__setattr__(self, "mat", m)
        object.__setattr__(self, "growth", np.asarray(self.growth, dtype=float))


def design_contraction(n: int, growth: np.ndarray, gap_bound: float) -> ContractionMatrix:
    """Build the cell contraction by the backward level recursion.

    Level n contracts by 1/2 alone; each outer level adds a row coupling
    growth[i] * gap_bound * (column sums of the inner block) so that the
    inter-sample drift of the outer error stays inside the next cell.
    """
    growth = np.asarray(growth, dtype=float)
    if growth.shape != (max(n - 1, 0),):
        raise ConfigError(f"need {n - 1} growth constants, got {growth.shape}")
    if np.any(growth < 0) or gap_bound <= 0:
        raise ConfigError("growth constants must be >= 0 and gap_bound > 0")
    lam = np.array([[0.5]])
    for i in range(n - 1, 0, -1):
        top = growth[i - 1] * gap_bound * lam.sum(axis=0)
        lam = np.block(
            [[np.array([[0.5]]), top[None, :]], [np.zeros((lam.shape[0], 1)), lam]]
        )
    return ContractionMatrix(mat=lam, growth=growth, gap_bound=gap_bound)


def default_growth_constants(
    plant, tp: TransformParams, cm: CoordMatrix, density: int | None = None
) -> np.ndarray:
    """Per-level growth constants from the transformed nonlinearity.

    growth[i] = 1 + sup of the max row sum of the Jacobian of the
    transformed nonlinearity over the box |z|_inf <= B, with
    B = max(|2 Phi init_box|_inf, 1), estimated on a uniform grid.  The
    Jacobian is the exact conjugation dilation * Phi J_f Phi^-1 - coupling,
    with the plant Jacobian in closed form.
    """
    n = tp.n
    if n == 1:
        return np.zeros(0)
    if plant.is_chain():
        return np.ones(n - 1)
    box = max(float(np.max(2.0 * (cm.mat @ plant.init_box))), 1.0)
    if density is None:
        density = 21 if n <= 3 else 7
    axis = np.linspace(-box, box, density)
    sup_rows = np.zeros(n)
    for zpt in itertools.product(axis, repeat=n):
        z = np.array(zpt)
        jf = plant.jacobian(cm.inv @ z)
        # chain part conjugates exactly onto the linear coupling; what is
        # left is the Jacobian of the transformed nonlinearity
        jf[np.arange(n - 1), np.arange(1, n)] -= 1.0
        jphi = tp.time_dilation * (cm.mat @ jf @ cm.inv)
        rowsum = np.abs(jphi).sum(axis=1)
        sup_rows = np.maximum(sup_rows, rowsum)
    # level i covers rows i..n-1 of the transformed nonlinearity
    out = np.empty(n - 1)
    for i in range(1, n):
        out[i - 1] = 1.0 + float(np.max(sup_rows[i - 1 : n - 1]))
    return out


# -- jump maps ----------------------------------------------------------------


def _split_increment(cm: CoordMatrix, symbols: np.ndarray, widths: np.ndarray) -> np.ndarray:
    """Common cell-split increment: Phi^-1 diag(symbols) widths / 4."""
    return cm.inv @ (np.asarray(symbols, dtype=float) * widths) / 4.0


def check_containment(cm: CoordMatrix, x, estimate, cell, time=None, k=None):
    mixed = np.abs(cm.mat @ (np.asarray(x, float) - np.asarray(estimate, float)))
    bound = cell / 2.0 * (1 + CONTAIN_RTOL) + CONTAIN_FLOOR
    if np.any(mixed > bound):
        j = int(np.argmax(mixed - bound))
        raise QuantizerOverflowError(
            f"state left its quantization cell (component {j + 1}, "
            f"|residual|={mixed[j]:.3g} > {bound[j]:.3g}); "
            "contraction design is inconsistent with the plant growth",
            time=time,
            k=k,
        )


def check_scaled_containment(err, cell, time=None, k=None):
    """Containment in slowed coordinates: |err_j| <= cell_j / 2."""
    bound = np.asarray(cell, float) / 2.0 * (1 + CONTAIN_RTOL) + CONTAIN_FLOOR
    mag = np.abs(np.asarray(err, float))
    if np.any(mag > bound):
        j = int(np.argmax(mag - bound))
        raise QuantizerOverflowError(
            f"scaled tracking error left its cell (component {j + 1}, "
            f"|err|={mag[j]:.3g} > {bound[j]:.3g})",
            time=time,
            k=k,
        )


def encoder_sample_jump(
    enc: EncoderState,
    x: np.ndarray,
    cm: CoordMatrix,
    lam: ContractionMatrix,
    k: int,
    t: float,
) -> tuple[EncoderState, Packet]:
    """Split the cell around the sampled state and emit the symbols."""
    check_containment(cm, x, enc.estimate, enc.cell, time=t, k=k)
    symbols = np.sign(cm.mat @ (x - enc.estimate)).astype(np.int8)
    new = EncoderState(
        replica=enc.replica,
        estimate=enc.estimate + _split_increment(cm, symbols, enc.cell),
        cell=lam.mat @ enc.cell,
    )
    return new, Packet(k=k, t_sent=t, symbols=symbols)


def decoder_delivery_jump(
    dec: DecoderState, pkt: Packet, cm: CoordMatrix, lam: ContractionMatrix
) -> DecoderState:
    """Apply a delivered packet; cell contraction is symbol-independent."""
    if pkt.k != dec.next_k:
        raise ProtocolError(f"expected packet {dec.next_k}, got {pkt.k}")
    return DecoderState(
        estimate=dec.estimate + _split_increment(cm, pkt.symbols, dec.cell),
        cell=lam.mat @ dec.cell,
        next_k=dec.next_k + 1,
    )


def omega_delivery_jump(
    enc: EncoderState,
    x_delayed: np.ndarray,
    estimate_delayed: np.ndarray,
    cell_delayed: np.ndarray,
    cm: CoordMatrix,
) -> EncoderState:
    """Advance the decoder replica with the delayed split arguments."""
    symbols = np.sign(cm.mat @ (np.asarray(x_delayed, float) - estimate_delayed))
    return replace(
        enc, replica=enc.replica + _split_increment(cm, symbols, cell_delayed)
    )


def skip_sample(dec: DecoderState) -> DecoderState:
    """Advance the expected index past a sample both sides agreed to drop."""
    return replace(dec, next_k=dec.next_k + 1)


# -- flows ---------------------------------------------------------------------


def codec_flow(
    enc: EncoderState,
    dec: DecoderState,
    plant,
    cp: ControllerParams,
    cm: CoordMatrix,
    replica_delayed: np.ndarray,
    dec_estimate_delayed: np.ndarray,
):
    """Model-copy flow of (replica, estimate, decoder estimate).

    Cell widths are constant along the flow.
    """
    d_replica = plant.vector_field(
        enc.replica, control_original(cp, cm, replica_delayed)
    )
    d_estimate = plant.vector_field(enc.estimate, control_original(cp, cm, enc.replica))
    d_dec = plant.vector_field(
        dec.estimate, control_original(cp, cm, dec_estimate_delayed)
    )
    return d_replica, d_estimate, d_dec


def initialize(plant, cm: CoordMatrix) -> tuple[EncoderState, DecoderState]:
    """Zero estimates; cells cover twice the mixed initial box."""
    width = 2.0 * (cm.mat @ plant.init_box)
    n = plant.n
    enc = EncoderState(replica=np.zeros(n), estimate=np.zeros(n), cell=width.copy())
    dec = DecoderState(estimate=np.zeros(n), cell=width.copy(), next_k=0)
    return enc, dec


# -- wire format ----------------------------------------------------------------

_TRIT_CODE = {0: 0b00, 1: 0b01, -1: 0b10}
_TRIT_DECODE = {0b00: 0, 0b01: 1, 0b10: -1}


def serialize_packet(pkt: Packet) -> bytes:
    """4-byte little-endian index, then 2 bits per symbol, MSB-first."""
    if pkt.k < 0 or pkt.k > 0xFFFFFFFF:
        raise ConfigError("packet index out of range for the wire header")
    out = bytearray(struct.pack("<I", pkt.k))
    acc, nbits = 0, 0
    for s in pkt.symbols:
        acc = (acc << 2) | _TRIT_CODE[int(s)]
        nbits += 2
        if nbits == 8:
            out.append(acc)
            acc, nbits = 0, 0
    if nbits:
        out.append(acc << (8 - nbits))
    return bytes(out)


def deserialize_packet(data: bytes, n: int, t_sent: float = float("nan")) -> Packet:
    """Inverse of serialize_packet for a known symbol count."""
    body_len = (2 * n + 7) // 8
    if len(data) != 4 + body_len:
        raise DecodeError(f"expected {4 + body_len} bytes, got {len(data)}")
    (k,) = struct.unpack("<I", data[:4])
    symbols = np.empty(n, dtype=np.int8)
    for i in range(n):
        byte = data[4 + (2 * i) // 8]
        shift = 6 - (2 * i) % 8
        code = (byte >> shift) & 0b11
        if code not in _TRIT_DECODE:
            raise DecodeError(f"invalid symbol code 0b11 at position {i}")
        symbols[i] = _TRIT_DECODE[code]
    tail = 2 * n
    if tail % 8 and (data[-1] & ((1 << (8 - tail % 8)) - 1)):
        raise DecodeError("nonzero padding bits")
    return Packet(k=k, t_sent=t_sent, symbols=symbols)
