"""The collaborative training loops and their degenerate reductions.

Runs synchronous gradient averaging, federated averaging with local steps,
compressed training with error feedback, server momentum, and majority-vote
sign descent on one synthetic least-squares task, then demonstrates that the
degenerate parameter settings collapse the loops onto each other bitwise.
"""

import numpy as np

from flwsim.compression import CompressorSpec
from flwsim.numerics import QuadraticLoss, RngStream, make_shards
from flwsim.training import (TrainConfig, make_devices, run_compressed_ef,
                             run_fedavg, run_pssgd, run_signsgd_mv, run_slowmo)

gen = np.random.default_rng(7)
n, d = 48, 12
left, _ = np.linalg.qr(gen.standard_normal((n, d)))
right, _ = np.linalg.qr(gen.standard_normal((d, d)))
A = left * np.linspace(0.5, 1.5, d) @ right.T
b = A @ gen.standard_normal(d)
loss = QuadraticLoss(n, d)
shards = make_shards(A, b, 4, "iid", RngStream(5))
theta_star, *_ = np.linalg.lstsq(A, b, rcond=None)


def fresh():
    return make_devices(shards, d)


cfg = TrainConfig(rounds=120, local_steps=1, lr=0.5, batch_size=0, seed=9)

print("final distance to the least-squares solution after 120 rounds:")
for name, trace in [
    ("synchronous SGD", run_pssgd(cfg, fresh(), loss)),
    ("fedavg, 3 local steps",
     run_fedavg(TrainConfig(rounds=120, local_steps=3, lr=0.125, batch_size=0,
                            seed=9), fresh(), loss)),
    ("top-2 + error feedback",
     run_compressed_ef(TrainConfig(rounds=120, lr=0.5, batch_size=0, seed=9,
                                   uplink=CompressorSpec("top-k", k=2)),
                       fresh(), loss)),
    ("server momentum 0.9",
     run_slowmo(TrainConfig(rounds=120, lr=0.5, batch_size=0, seed=9,
                            slowmo_beta=0.9), fresh(), loss)),
    ("sign majority vote",
     run_signsgd_mv(TrainConfig(rounds=120, lr=0.05, batch_size=0, seed=9),
                    fresh(), loss)),
]:
    err = np.linalg.norm(trace.final_theta - theta_star)
    up = trace.records[0].uplink_bytes
    print(f"  {name:26s} err {err:9.2e}   uplink {up:5d} bytes/round")

print("\nreduction lattice (bitwise, same seed):")
a = run_pssgd(cfg, fresh(), loss)
b2 = run_fedavg(cfg, fresh(), loss)
c = run_compressed_ef(cfg, fresh(), loss)
e = run_slowmo(cfg, fresh(), loss)
print("  fedavg(H=1, full participation) == pssgd:", a == b2)
print("  compressed_ef(identity)         == fedavg:", c == b2)
print("  slowmo(beta=0, alpha=1)         == fedavg:", e == b2)
