"""Bit-exact sparse position codec.

A mask of dimension d is split into blocks of ``1/phi`` coordinates (the
dimension is padded up to a whole number of blocks; padding is always zero and
is discarded on decode).  Within a block each kept coordinate is written as a
marker bit ``1`` followed by its intra-block position in ``log2(1/phi)`` bits,
and every block ends with a terminator bit ``0``.  Per kept coordinate the
cost is therefore ``1 + log2(1/phi)`` bits plus one bit per block, which is
exact whenever ``1/phi`` is a power of two (non-powers round the position
width up to ``ceil(log2(1/phi))``).

Wire layout of a full sparse message:

    d (uint32 LE) | 1/phi (uint32 LE) | nnz (uint32 LE)
    position bitstream, padded with zero bits to a byte boundary,
    most significant bit first within each byte
    nnz raw float64 values, little endian
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DecodeError

HEADER = struct.Struct("<III")


def bit_width(n_symbols: int) -> int:
    """Bits needed to index ``n_symbols`` distinct values."""
    if n_symbols < 1:
        raise ContractViolation("need at least one symbol")
    return (n_symbols - 1).bit_length()


def pick_block_level(dim: int, nnz: int) -> int:
    """Power-of-two block size near dim/nnz, minimizing the encoded size."""
    if dim < 1:
        raise ContractViolation("dimension must be positive")
    if nnz == 0:
        return 1 << bit_width(dim)
    target = max(1, dim // nnz)
    return 1 << (target.bit_length() - 1)


def position_bits(dim: int, inv_phi: int, nnz: int) -> int:
    """Exact length of the position bitstream."""
    nblocks = -(-dim // inv_phi)
    return nnz * (1 + bit_width(inv_phi)) + nblocks


def wire_bits(dim: int, inv_phi: int, nnz: int) -> int:
    """Exact serialized size of a full sparse message, in bits."""
    pos_bytes = -(-position_bits(dim, inv_phi, nnz) // 8)
    return 8 * (HEADER.size + pos_bytes + 8 * nnz)


@dataclass(frozen=True)
class EncodedBlob:
    """Encoded mask positions: the raw bitstream plus its block geometry."""

    bits: np.ndarray  # 0/1 vector, exact length, no byte padding
    dim: int
    inv_phi: int

    def __post_init__(self):
        object.__setattr__(self, "bits", np.asarray(self.bits, dtype=np.uint8))

    @property
    def n_blocks(self):
        return -(-self.dim // self.inv_phi)

    def bit_string(self):
        return "".join("1" if b else "0" for b in self.bits)


def encode_positions(mask, inv_phi: int) -> EncodedBlob:
    """Encode the 1-positions of ``mask`` with block size ``inv_phi``."""
    if inv_phi < 1:
        raise ContractViolation("1/phi must be a positive integer")
    bits_in = np.asarray(mask.bits, dtype=np.uint8)
    d = bits_in.shape[0]
    width = bit_width(inv_phi)
    nblocks = -(-d // inv_phi)
    out = []
    nonzero = np.flatnonzero(bits_in)
    by_block = [[] for _ in range(nblocks)]
    for idx in nonzero:
        by_block[idx // inv_phi].append(idx % inv_phi)
    for block in by_block:
        for pos in block:
            out.append(1)
            for shift in range(width - 1, -1, -1):
                out.append((pos >> shift) & 1)
        out.append(0)
    return EncodedBlob(np.array(out, dtype=np.uint8), d, inv_phi)


def decode_positions(blob: EncodedBlob):
    """Decode a blob back to its mask; raises :class:`DecodeError` on corruption."""
    from .compression import Mask  # local import to avoid a cycle

    bits = blob.bits
    width = bit_width(blob.inv_phi)
    n = bits.shape[0]
    pointer = 0
    block = 0
    found = []
    while pointer < n:
        if block >= blob.n_blocks:
            raise DecodeError("bits extend past the final block", pointer)
        if bits[pointer] == 0:
            block += 1
            pointer += 1
            continue
        if pointer + 1 + width > n:
            raise DecodeError("truncated intra-block position", pointer)
        pos = 0
        for b in bits[pointer + 1: pointer + 1 + width]:
            pos = (pos << 1) | int(b)
        if pos >= blob.inv_phi:
            raise DecodeError("intra-block position out of range", pointer + 1)
        idx = block * blob.inv_phi + pos
        if idx >= blob.dim:
            raise DecodeError("position falls in the padding region", pointer + 1)
        if found and idx <= found[-1]:
            raise DecodeError("positions are not strictly increasing", pointer + 1)
        found.append(idx)
        pointer += 1 + width
    if block != blob.n_blocks:
        raise DecodeError("missing block terminators", pointer)
    out = np.zeros(blob.dim, dtype=np.uint8)
    out[found] = 1
    return Mask(out)


def blob_to_bytes(blob: EncodedBlob, values) -> bytes:
    """Serialize blob plus its nonzero values into the wire layout."""
    values = np.asarray(values, dtype="<f8")
    header = HEADER.pack(blob.dim, blob.inv_phi, values.size)
    packed = np.packbits(blob.bits).tobytes()  # MSB-first, zero padded
    return header + packed + values.tobytes()


def blob_from_bytes(data: bytes):
    """Parse a wire message; returns (mask, values)."""
    if len(data) < HEADER.size:
        raise DecodeError("message shorter than its header", 0)
    dim, inv_phi, nnz = HEADER.unpack_from(data)
    if dim < 1 or inv_phi < 1:
        raise DecodeError("corrupt header", 0)
    n_bits = position_bits(dim, inv_phi, nnz)
    pos_bytes = -(-n_bits // 8)
    expected = HEADER.size + pos_bytes + 8 * nnz
    if len(data) != expected:
        raise DecodeError(f"message length {len(data)} != expected {expected}", 0)
    raw = np.frombuffer(data, dtype=np.uint8,
                        count=pos_bytes, offset=HEADER.size)
    bits = np.unpackbits(raw)
    if np.any(bits[n_bits:]):
        raise DecodeError("nonzero padding after bitstream", n_bits)
    blob = EncodedBlob(bits[:n_bits], dim, inv_phi)
    mask = decode_positions(blob)
    if mask.nnz != nnz:
        raise DecodeError(f"decoded {mask.nnz} positions, header says {nnz}", n_bits)
    values = np.frombuffer(data, dtype="<f8", count=nnz,
                           offset=HEADER.size + pos_bytes).astype(np.float64)
    return mask, values
