"""Experiment assembly: synthesize tasks, build devices, dispatch loops.

One process runs one experiment; multi-seed sweeps are independent processes.
The run trace is byte-reproducible for a fixed config and seed; the manifest
records the config hash, seed, and wall clock alongside it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import __version__
from .compression import CompressorSpec
from .config import ExperimentConfig
from .errors import ContractViolation
from .numerics import (LogisticLoss, PerceptronLoss, QuadraticLoss, RngStream,
                       make_shards)
from .scheduling import (AgeAwareScheduler, DeadlineScheduler, FullParticipation,
                         LatencyMinScheduler, ProportionalFairScheduler,
                         RandomScheduler, RoundRobinScheduler,
                         UpdateAwareScheduler)
from .topology import (complete_graph, edgeless_graph, graph_from_edge_list,
                       laplacian_weights, path_graph, ring_graph)
from .training import (RunTrace, TrainConfig, make_devices, run_compressed_ef,
                       run_decentralized, run_fedavg, run_hfl, run_pssgd,
                       run_signsgd_mv, run_slowmo, run_sync_sparse_avg)
from .wireless import (HflChannel, canned_channel, hfl_cluster_centers,
                       uniform_disc_positions, HFL_CELL_RADIUS)


# ---------------------------------------------------------------------------
# synthetic tasks
# ---------------------------------------------------------------------------

def synth_task(cfg: ExperimentConfig, seed: int):
    """Build (loss, X, y) for the configured task family."""
    kind = cfg.get("task.kind")
    n = cfg.get("task.samples")
    f = cfg.get("task.features")
    gen = RngStream(seed, "task").generator()
    if kind == "quadratic":
        # random rotation with a controlled singular spectrum in [0.5, 1.5]
        left, _ = np.linalg.qr(gen.standard_normal((n, f)))
        right, _ = np.linalg.qr(gen.standard_normal((f, f)))
        spectrum = np.linspace(0.5, 1.5, f)
        A = left[:, :f] * spectrum @ right.T
        theta_true = gen.standard_normal(f)
        b = A @ theta_true + cfg.get("task.noise") * gen.standard_normal(n)
        return QuadraticLoss(n, f), A, b
    # two Gaussian blobs along a random direction, plus an intercept feature
    direction = gen.standard_normal(f)
    direction /= np.linalg.norm(direction)
    mu = 0.5 * cfg.get("task.class_sep") * direction
    y = (np.arange(n) % 2).astype(np.float64)
    X = gen.standard_normal((n, f)) + np.where(y[:, None] > 0.5, mu, -mu)
    X = np.column_stack([X, np.ones(n)])
    if kind == "logistic":
        return LogisticLoss(f + 1), X, y
    if kind == "mlp":
        return PerceptronLoss(f + 1, cfg.get("task.hidden")), X, y
    raise ContractViolation(f"unknown task kind {kind!r}")


def split_eval(X, y, fraction: float, seed: int):
    """Hold out a fixed fraction for evaluation, chosen by the master seed."""
    gen = RngStream(seed, "eval-split").generator()
    n = len(X)
    order = gen.permutation(n)
    cut = int(round(fraction * n))
    ev, tr = order[:cut], order[cut:]
    eval_set = (X[ev], y[ev]) if cut else None
    return X[tr], y[tr], eval_set


# ---------------------------------------------------------------------------
# manifests and trace files
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    wall_clock_s: float
    canned: tuple
    notes: tuple = ()

    def to_json(self) -> str:
        payload = {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "version": self.version,
            "wall_clock_s": self.wall_clock_s,
            "canned": list(self.canned),
            "notes": list(self.notes),
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        d = json.loads(text)
        return cls(d["config_hash"], d["seed"], d["version"],
                   d["wall_clock_s"], tuple(d["canned"]), tuple(d.get("notes", ())))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _compressor_spec(cfg: ExperimentConfig, side: str) -> CompressorSpec | None:
    scheme = cfg.get(f"compress.{side}.scheme")
    if scheme == "none":
        return None
    known = dict(cfg.values)
    kwargs = {}
    for name in ("k", "r", "levels", "epsilon", "phi", "tau_max",
                 "threshold", "block_size", "rescale"):
        key = f"compress.{side}.{name}"
        if key not in known:
            continue
        value = known[key]
        if name in ("threshold", "rescale"):
            kwargs[name] = value
        elif value:  # zero means "not set" for the optional numeric knobs
            kwargs[name] = value
    return CompressorSpec(scheme=scheme, **kwargs)


def _build_scheduler(cfg: ExperimentConfig):
    policy = cfg.get("scheduler.policy")
    k = cfg.get("scheduler.k")
    if policy == "full":
        return FullParticipation()
    if policy == "random":
        return RandomScheduler(k)
    if policy == "round_robin":
        return RoundRobinScheduler(k)
    if policy == "pf":
        return ProportionalFairScheduler(k)
    if policy == "latency_min":
        return LatencyMinScheduler(k)
    if policy == "p2_age":
        return AgeAwareScheduler(cfg.get("scheduler.r_min"), cfg.get("scheduler.p_max"),
                                 cfg.get("scheduler.alpha_fair"))
    if policy == "p4_deadline":
        return DeadlineScheduler(cfg.get("scheduler.t_max"))
    if policy in ("bc", "bn2", "bc_bn2", "bn2_c"):
        names = {"bc": "BC", "bn2": "BN2", "bc_bn2": "BC-BN2", "bn2_c": "BN2-C"}
        budget = cfg.get("scheduler.budget_bits") or None
        return UpdateAwareScheduler(names[policy], k,
                                    cfg.get("scheduler.k_c") or None, budget)
    raise ContractViolation(f"unknown scheduler policy {policy!r}")


def _build_graph(cfg: ExperimentConfig, n: int):
    kind = cfg.get("topology.kind")
    if kind == "complete":
        return complete_graph(n)
    if kind == "ring":
        return ring_graph(n)
    if kind == "path":
        return path_graph(n)
    if kind == "edgeless":
        return edgeless_graph(n)
    with open(cfg.get("topology.edge_file"), "r", encoding="utf-8") as fh:
        return graph_from_edge_list(fh.read(), n)


def run_experiment(cfg: ExperimentConfig, seed: int | None = None):
    """Run one experiment; returns (RunTrace, RunManifest)."""
    started = time.perf_counter()
    seed = cfg.get("seed") if seed is None else seed
    notes = []
    canned = ()
    loss, X, y = synth_task(cfg, seed)
    Xtr, ytr, eval_set = split_eval(X, y, cfg.get("eval.fraction"), seed)
    n_dev = cfg.get("devices.count")
    shards = make_shards(Xtr, ytr, n_dev, cfg.get("devices.sharding"), RngStream(seed))

    train_cfg = TrainConfig(
        rounds=cfg.get("train.rounds"),
        local_steps=cfg.get("train.local_steps"),
        lr=cfg.get("train.lr"),
        lr_decay_rounds=cfg.get("train.lr_decay_rounds"),
        lr_decay_factor=cfg.get("train.lr_decay_factor"),
        batch_size=cfg.get("train.batch_size"),
        local_momentum=cfg.get("train.local_momentum"),
        uplink=_compressor_spec(cfg, "uplink") or CompressorSpec(),
        downlink=_compressor_spec(cfg, "downlink"),
        slowmo_alpha=cfg.get("train.slowmo_alpha"),
        slowmo_beta=cfg.get("train.slowmo_beta"),
        sync_phi=cfg.get("train.sync_phi"),
        sync_tau_max=cfg.get("train.sync_tau_max"),
        inter_cluster_period=cfg.get("train.inter_cluster_period"),
        seed=seed,
    )

    channel_name = cfg.get("channel.canned")
    channel = None
    positions = None
    if channel_name != "none":
        channel = canned_channel(channel_name)
        canned = (channel_name,)

    loop = cfg.get("train.loop")
    if loop == "hfl" or isinstance(channel, HflChannel):
        n_clusters = cfg.get("cluster.count")
        centers = hfl_cluster_centers()[:n_clusters] if n_clusters > 1 \
            else np.array([(0.0, 0.0)])
        gen = RngStream(seed, "geometry").generator()
        # redraw until every cluster is populated; bounded and seed-deterministic
        for _ in range(100):
            positions = uniform_disc_positions(n_dev, HFL_CELL_RADIUS, gen, 25.0)
            assign = np.argmin(
                np.linalg.norm(positions[:, None, :] - centers[None, :, :], axis=2),
                axis=1)
            if len(set(assign.tolist())) == len(centers):
                break
        else:
            raise ContractViolation("could not populate every cluster; "
                                    "reduce cluster.count or devices.count")
        devices = make_devices(shards, loss.dim, positions)
        clusters = [[d for d, a in zip(devices, assign) if a == l]
                    for l in range(len(centers))]
        trace = run_hfl(train_cfg, clusters, loss, channel=channel,
                        centers=centers, eval_set=eval_set)
    else:
        if channel is not None:
            gen = RngStream(seed, "geometry").generator()
            positions = channel.sample_positions(n_dev, gen)
            if cfg.get("devices.geo_skew"):
                # correlate data with geometry: shard i sits at distance rank i,
                # so label-sorted shards put low labels nearest the server
                radii = np.hypot(positions[:, 0], positions[:, 1])
                positions = positions[np.argsort(radii, kind="stable")]
        devices = make_devices(shards, loss.dim, positions)
        scheduler = _build_scheduler(cfg)
        if loop == "pssgd":
            trace = run_pssgd(train_cfg, devices, loss, eval_set=eval_set)
        elif loop == "fedavg":
            trace = run_fedavg(train_cfg, devices, loss, scheduler, channel, eval_set)
        elif loop == "compressed_ef":
            trace = run_compressed_ef(train_cfg, devices, loss, scheduler, channel, eval_set)
        elif loop == "slowmo":
            trace = run_slowmo(train_cfg, devices, loss, scheduler, channel, eval_set)
        elif loop == "signsgd":
            trace = run_signsgd_mv(train_cfg, devices, loss, eval_set=eval_set)
        elif loop == "sync_sparse":
            trace = run_sync_sparse_avg(train_cfg, devices, loss, eval_set=eval_set)
        elif loop == "decentralized":
            graph = _build_graph(cfg, n_dev)
            if not graph.is_connected():
                notes.append("topology is disconnected; consensus will not "
                             "converge globally")
            trace = run_decentralized(train_cfg, devices,
                                      laplacian_weights(graph), loss, eval_set)
        else:
            raise ContractViolation(f"unknown training loop {loop!r}")

    manifest = RunManifest(cfg.config_hash, seed, __version__,
                           time.perf_counter() - started, canned, tuple(notes))
    return trace, manifest


# ---------------------------------------------------------------------------
# run comparison
# ---------------------------------------------------------------------------

def compare_runs(named_traces, metric: str, groups=None):
    """Align traces on a metric and summarize final values per group.

    ``named_traces`` is a list of (name, RunTrace); ``groups`` optionally maps
    name -> group label (defaults to one group per name).  Returns the
    formatted table as a string.
    """
    if len(named_traces) < 2:
        raise ContractViolation("need at least two traces to compare")
    for _, trace in named_traces:
        if not trace.records:
            raise ContractViolation("cannot compare an empty trace")
    lengths = [len(t.records) for _, t in named_traces]
    horizon = min(lengths)
    lines = []
    if len(set(lengths)) > 1:
        lines.append(f"# aligned on the shortest run: {horizon} rounds "
                     f"(lengths {sorted(set(lengths))})")
    header = "round," + ",".join(name for name, _ in named_traces)
    lines.append(header)
    for i in range(horizon):
        row = [str(named_traces[0][1].records[i].round)]
        for _, trace in named_traces:
            row.append("%.9g" % getattr(trace.records[i], metric))
        lines.append(",".join(row))
    by_group = {}
    for name, trace in named_traces:
        label = (groups or {}).get(name, name)
        by_group.setdefault(label, []).append(getattr(trace.records[horizon - 1], metric))
    lines.append("# final values (mean +/- sd over runs in each group)")
    for label in sorted(by_group):
        vals = np.asarray(by_group[label])
        sd = float(vals.std(ddof=1)) if vals.size > 1 else 0.0
        lines.append(f"{label}: {vals.mean():.6g} +/- {sd:.3g} (n={vals.size})")
    return "\n".join(lines) + "\n"
