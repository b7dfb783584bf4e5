"""Tour of the gradient compression operators.

Walks through sparsification, quantization, and error feedback on a small
vector, printing what each operator keeps, what it costs on the wire, and the
statistical contract it satisfies.
"""

import numpy as np

from flwsim.compression import (Compressor, CompressorSpec, ErrorState,
                                delta_of, ef_compress, quant_stochastic_uniform,
                                quant_ternary, random_sparsify, scaled_sign,
                                solve_keep_probs, top_k_mask)

rng = np.random.default_rng(0)
g = np.array([0.3, -1.2, 0.7, 0.1, 2.4, -0.2, 0.05, -0.9])
print("gradient:", g)

# --- magnitude selection -----------------------------------------------------
mask = top_k_mask(g, 3)
print("\ntop-3 mask keeps coordinates (1-based):", list(mask.indices()))

# --- variance-controlled random sparsification -------------------------------
# keep probabilities solve: minimize expected nonzeros subject to
# E||output||^2 <= (1 + eps) ||g||^2
p, lam = solve_keep_probs(g, epsilon=1.0)
print("\nrandom sparsification keep probabilities (eps = 1):")
print("  p =", np.round(p, 3), " lambda =", round(lam, 4))
sample = random_sparsify(g, 1.0, rng)
print("  one draw keeps", sample.nnz, "coordinates, rescaled by 1/p")

# unbiasedness: the empirical mean over many draws recovers g
acc = np.zeros_like(g)
for _ in range(20000):
    acc += random_sparsify(g, 1.0, rng).to_dense()
print("  empirical mean error:", np.abs(acc / 20000 - g).max().round(4))

# --- quantizers ---------------------------------------------------------------
q4 = quant_stochastic_uniform(g, 4, rng)
print("\nstochastic uniform (4 levels):", np.round(q4, 3))
qt = quant_ternary(g, rng)
print("ternary draw (values in {-gmax, 0, +gmax}):", np.round(qt, 3))
qs = scaled_sign(g)
print("scaled sign:", np.round(qs, 3))
print("  delta-approximation factor:", round(delta_of(g), 4),
      " identity residual:",
      abs(np.sum((qs - g) ** 2) - (1 - delta_of(g)) * np.sum(g * g)))

# --- error feedback -----------------------------------------------------------
# whatever a biased compressor drops is carried into the next round
comp = Compressor(CompressorSpec("top-k", k=2), g.size)
err = ErrorState.zeros(g.size)
print("\nerror feedback with top-2 over five rounds:")
for t in range(1, 6):
    msg, err = ef_compress(g, err, comp, rng, t)
    sent = [int(i) + 1 for i in np.flatnonzero(msg.dense)]
    print(f"  round {t}: sent coordinates {sent}, residual norm "
          f"{np.linalg.norm(err.residual):.3f}, wire bytes {msg.payload_bytes}")
print("eventually every coordinate gets its turn, despite the bias")
