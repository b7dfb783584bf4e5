"""Hierarchical averaging over a two-tier radio network.

28 devices in a 750 m disc, seven hexagonal clusters with a small-cell server
each, and a macro server on fast fronthaul links. Devices reach their local
server over short links every round; cluster models are exchanged globally
only every H rounds. Compare against the same devices all reporting to the
macro server directly.
"""

from flwsim.config import parse_config
from flwsim.runner import run_experiment

BASE = """
task.kind = logistic
task.samples = 1400
task.features = 16
devices.count = 28
devices.sharding = iid
train.loop = hfl
train.rounds = 40
train.lr = 0.5
train.batch_size = 10
channel.canned = hfl
"""

flat_cfg = parse_config(BASE + "cluster.count = 1\ntrain.inter_cluster_period = 1\n")
flat, _ = run_experiment(flat_cfg, seed=1)
flat_latency = sum(flat.column("latency_s"))
print("macro-server baseline: every device uploads straight to the center")
print(f"  40 rounds in {flat_latency * 1e3:.2f} ms of simulated air time, "
      f"final accuracy {flat.records[-1].eval_metric:.3f}\n")

print("hierarchical runs (7 clusters, global averaging every H rounds):")
for period in (2, 4, 6):
    cfg = parse_config(BASE + f"cluster.count = 7\n"
                              f"train.inter_cluster_period = {period}\n")
    trace, _ = run_experiment(cfg, seed=1)
    latency = sum(trace.column("latency_s"))
    print(f"  H = {period}: {latency * 1e3:.3f} ms "
          f"({flat_latency / latency:4.1f}x faster), final accuracy "
          f"{trace.records[-1].eval_metric:.3f}")

print("\nshort uplinks and rare fronthaul exchanges buy an order of magnitude "
      "in round latency\nwithout giving up accuracy at this scale.")
