"""The sparse position codec, bit by bit.

Reproduces the canonical example: a 24-dimensional mask with nonzeros at
1-based positions 1, 5, 17, encoded with blocks of 8. Each kept coordinate
costs a marker bit plus log2(8) = 3 position bits, and each block ends with a
terminator bit, giving 3*(1+3) + 3 = 15 bits.
"""

import numpy as np

from flwsim import codec
from flwsim.compression import Mask

bits = np.zeros(24, dtype=np.uint8)
bits[[0, 4, 16]] = 1
mask = Mask(bits)
print("mask nonzeros (1-based):", list(mask.indices()))

blob = codec.encode_positions(mask, inv_phi=8)
stream = blob.bit_string()
print("encoded stream:", stream, f"({len(stream)} bits)")

# annotate the stream: markers, positions, terminators
cursor = 0
notes = []
while cursor < len(stream):
    if stream[cursor] == "1":
        notes.append(f"1|{stream[cursor + 1:cursor + 4]} -> position "
                     f"{int(stream[cursor + 1:cursor + 4], 2)} in this block")
        cursor += 4
    else:
        notes.append("0 -> next block")
        cursor += 1
for note in notes:
    print(" ", note)

decoded = codec.decode_positions(blob)
print("decode(encode(mask)) == mask:", decoded == mask)

# full wire message: header + positions + raw values
values = np.array([1.5, -2.0, 0.25])
wire = codec.blob_to_bytes(blob, values)
print("\nwire bytes:", wire.hex())
print("  header: d=24, 1/phi=8, nnz=3 (little-endian u32 each)")
print("  then the 15 position bits packed MSB-first, then 3 raw float64")
back_mask, back_values = codec.blob_from_bytes(wire)
print("round trip ok:", back_mask == mask and np.array_equal(back_values, values))

# cost accounting across block sizes
print("\nbit cost by block size for this mask:")
for inv in (2, 4, 8, 16):
    print(f"  1/phi={inv:3d}: {codec.position_bits(24, inv, 3)} position bits")
