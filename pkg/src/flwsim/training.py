"""Collaborative training loops over compressors, topologies, and channels.

Every parameter-server-style loop (plain synchronous SGD, federated
averaging, compressed local SGD with error feedback, server momentum,
hierarchical averaging) runs through one shared round engine, so the
degenerate-parameter reductions between them hold bitwise with equal seeds:
identity compression reduces to federated averaging, one local step with full
participation reduces to synchronous SGD, a single cluster reduces to
federated averaging, and zero server momentum with unit scale reduces to
plain averaging.

Aggregation uses fixed-order pairwise reductions over sorted device ids, so
results are independent of any parallel execution of the per-device work.
All model updates follow the descent convention ``theta - eta * g``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .compression import (CompressorSpec, ErrorState, ef_compress,
                          make_compressor, sign_pm1, sync_mask_schedule,
                          quant_stochastic_uniform)
from .errors import ContractViolation
from .numerics import (DataShard, RngStream, batch_rng, draw_batch,
                       pairwise_mean, pairwise_sum)
from .scheduling import FullParticipation, RoundContext, Scheduler, age_update
from .topology import consensus_step, is_doubly_stochastic


# ---------------------------------------------------------------------------
# configuration and state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    """Knobs shared by all training loops."""

    rounds: int
    local_steps: int = 1
    lr: float = 0.1
    lr_decay_rounds: tuple = ()
    lr_decay_factor: float = 10.0
    batch_size: int = 1                 # 0 draws the full shard, deterministically
    local_momentum: float = 0.0         # device-side heavy-ball factor
    uplink: CompressorSpec = field(default_factory=CompressorSpec)
    downlink: CompressorSpec | None = None
    slowmo_alpha: float = 1.0
    slowmo_beta: float = 0.0
    sync_phi: float = 1.0
    sync_tau_max: int = 1
    inter_cluster_period: int = 1       # hierarchical averaging period
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1 or self.local_steps < 1:
            raise ContractViolation("rounds and local_steps must be >= 1")
        if not self.lr > 0:
            raise ContractViolation("learning rate must be positive")
        if not 0.0 <= self.slowmo_beta < 1.0:
            raise ContractViolation("server momentum must lie in [0, 1)")
        if not 0.0 <= self.local_momentum < 1.0:
            raise ContractViolation("local momentum must lie in [0, 1)")
        if self.batch_size < 0:
            raise ContractViolation("batch size must be nonnegative")
        if self.inter_cluster_period < 1:
            raise ContractViolation("inter-cluster period must be >= 1")

    def lr_at(self, t: int) -> float:
        """Learning rate for 1-based round t under the step-decay rule."""
        drops = sum(1 for r in self.lr_decay_rounds if t > r)
        return self.lr / (self.lr_decay_factor ** drops)


@dataclass
class DeviceState:
    """Per-device simulation state."""

    id: int
    shard: DataShard
    theta: np.ndarray
    error: ErrorState
    age: int = 0
    position: tuple | None = None
    comp_latency_s: float = 0.0


def make_devices(shards, dim, positions=None):
    """Device states with zero models and zero error memories."""
    devs = []
    for i, shard in enumerate(shards):
        pos = tuple(positions[i]) if positions is not None else None
        devs.append(DeviceState(i, shard, np.zeros(dim), ErrorState.zeros(dim, i),
                                position=pos))
    return devs


@dataclass
class GlobalState:
    """Server-side model, momentum, and error memory."""

    theta: np.ndarray
    momentum: np.ndarray
    server_error: ErrorState
    round: int = 0


# ---------------------------------------------------------------------------
# run traces
# ---------------------------------------------------------------------------

TRACE_FIELDS = ("round", "train_loss", "eval_metric", "scheduled_ids",
                "uplink_bytes", "downlink_bytes", "latency_s", "max_age")


def _fmt(x: float) -> str:
    return "%.9g" % x


@dataclass(frozen=True)
class RoundRecord:
    round: int
    train_loss: float
    eval_metric: float
    scheduled_ids: tuple
    uplink_bytes: int
    downlink_bytes: int
    latency_s: float
    max_age: int

    def to_line(self) -> str:
        ids = "|".join(str(i) for i in self.scheduled_ids) or "-"
        return ",".join([str(self.round), _fmt(self.train_loss),
                         _fmt(self.eval_metric), ids,
                         str(self.uplink_bytes), str(self.downlink_bytes),
                         _fmt(self.latency_s), str(self.max_age)])

    @classmethod
    def from_line(cls, line: str) -> "RoundRecord":
        parts = line.rstrip("\n").split(",")
        if len(parts) != len(TRACE_FIELDS):
            raise ContractViolation(f"malformed trace line: {line!r}")
        ids = () if parts[3] == "-" else tuple(int(x) for x in parts[3].split("|"))
        return cls(int(parts[0]), float(parts[1]), float(parts[2]), ids,
                   int(parts[4]), int(parts[5]), float(parts[6]), int(parts[7]))


@dataclass
class RunTrace:
    """Per-round records of one training run.

    ``final_theta`` (and ``final_models`` for the loops that keep per-device
    models) ride along for in-process checks; only the records serialize.
    """

    records: list = field(default_factory=list)
    final_theta: np.ndarray | None = None
    final_models: list | None = None

    def to_text(self) -> str:
        header = "# " + ",".join(TRACE_FIELDS)
        return "\n".join([header] + [r.to_line() for r in self.records]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunTrace":
        records = [RoundRecord.from_line(ln) for ln in text.splitlines()
                   if ln and not ln.startswith("#")]
        return cls(records)

    def column(self, name: str):
        return [getattr(r, name) for r in self.records]

    def participation_counts(self, n_devices: int):
        counts = np.zeros(n_devices, dtype=np.int64)
        for r in self.records:
            for i in r.scheduled_ids:
                counts[i] += 1
        return counts

    def __eq__(self, other):
        return isinstance(other, RunTrace) and self.records == other.records


# ---------------------------------------------------------------------------
# shared device-side work
# ---------------------------------------------------------------------------

def _local_update(loss, dev: DeviceState, theta0, cfg: TrainConfig, t: int):
    """H local SGD steps from theta0; returns the accumulated step sum.

    With ``local_momentum`` set the device runs heavy-ball steps; the
    velocity starts fresh each round (devices pull a new model).
    """
    theta = theta0.copy()
    delta = np.zeros_like(theta0)
    velocity = np.zeros_like(theta0)
    eta = cfg.lr_at(t)
    for h in range(1, cfg.local_steps + 1):
        gen = batch_rng(cfg.seed, dev.id, t, h)
        X, y = draw_batch(dev.shard, cfg.batch_size, gen)
        g = loss.batch_grad(theta, X, y)
        if cfg.local_momentum > 0.0:
            velocity = cfg.local_momentum * velocity + g
            step = -eta * velocity
        else:
            step = -eta * g
        theta += step
        delta += step
    return delta


def _dataset_union(devices):
    X = np.concatenate([d.shard.X for d in devices])
    y = np.concatenate([d.shard.y for d in devices])
    return X, y


def _metric(loss, theta, eval_set):
    if eval_set is None:
        return math.nan
    return loss.eval_metric(theta, eval_set[0], eval_set[1])


# ---------------------------------------------------------------------------
# the parameter-server round engine
# ---------------------------------------------------------------------------

def _quantized_norm_fn(deltas, budget_bits, dim, seed, t):
    """Norm of each update after quantizing to a sole-transmitter bit budget."""
    def qnorm(i):
        if budget_bits is None:
            return float(np.linalg.norm(deltas[i]))
        per_coord = max(1, budget_bits // dim - 1)
        levels = max(1, 2 ** per_coord - 1)
        gen = RngStream(seed, f"qnorm/d{i}/t{t}").generator()
        return float(np.linalg.norm(quant_stochastic_uniform(deltas[i], levels, gen)))
    return qnorm


def _round_channel(channel, devices, t, seed):
    if channel is None:
        return None
    positions = np.array([d.position for d in devices], dtype=np.float64)
    dist = np.hypot(positions[:, 0], positions[:, 1])
    return channel.round_state(dist, t, seed)


def _ps_round(theta, devices, members, cfg, loss, t, state, scheduler,
              up_comp, down_comp, server: GlobalState, server_opt):
    """One synchronous round over ``members``; returns the round's accounting.

    Device work runs per sorted id; the reduction order is fixed, so the
    result does not depend on execution order.
    """
    n = len(members)
    ages = np.array([d.age for d in members])
    ctx = RoundContext(
        t=t, n=n, ages=ages,
        rng=RngStream(cfg.seed, f"sched/t{t}").generator(),
        rates=None, snr_inst=None, gains=None,
        comp_latency=np.array([d.comp_latency_s for d in members]),
        payload_bits=up_comp.nominal_bits(),
        subchannel_bandwidth=1.0,
    )
    if state is not None:
        ctx.gains = state.gains
        ctx.snr_inst = state.snr_inst()
        k_hint = 1 if scheduler.sole_transmitter else getattr(scheduler, "k", n)
        ctx.rates = state.equal_split_rates(k_hint)
        if state.model.use_bandwidth:
            ctx.subchannel_bandwidth = state.model.bandwidth / state.n_subchannels

    deltas = {}
    if scheduler.needs_updates:
        for dev in members:
            deltas[dev.id] = _local_update(loss, dev, theta, cfg, t)
        ctx.norms = np.array([np.linalg.norm(deltas[d.id]) for d in members])
        ctx.quantized_norm_fn = _quantized_norm_fn(
            [deltas[d.id] for d in members],
            getattr(scheduler, "budget_bits", None), theta.size, cfg.seed, t)

    decision = scheduler.select(ctx)
    decision.check_disjoint()
    selected = sorted(decision.order)
    if not selected:
        return decision, None, 0, 0, 0.0

    messages = {}
    up_bytes = 0
    for i in selected:
        dev = members[i]
        delta = deltas.get(i)
        if delta is None:
            delta = _local_update(loss, dev, theta, cfg, t)
        msg, dev.error = ef_compress(
            delta, dev.error, up_comp,
            RngStream(cfg.seed, f"compress/d{dev.id}/t{t}").generator(), t)
        messages[i] = msg
        up_bytes += msg.payload_bytes

    mean_delta = pairwise_mean([messages[i].dense for i in selected])
    if server_opt == "average":
        update = mean_delta
    elif server_opt == "slowmo":
        eta = cfg.lr_at(t)
        pseudo_grad = -mean_delta / eta
        server.momentum = cfg.slowmo_beta * server.momentum + pseudo_grad
        update = -(cfg.slowmo_alpha * eta) * server.momentum
    else:
        raise ContractViolation(f"unknown server optimizer {server_opt!r}")

    if down_comp is not None:
        bmsg, server.server_error = ef_compress(
            update, server.server_error, down_comp,
            RngStream(cfg.seed, f"compress/server/t{t}").generator(), t)
        update = bmsg.dense
        down_bytes = bmsg.payload_bytes
    else:
        down_bytes = theta.size * 8

    latency = 0.0
    if state is not None:
        if decision.latency_s is not None:
            latency = decision.latency_s
        else:
            if decision.resources:
                rates = {i: state.allocated_rate(i, decision.resources[i],
                                                 decision.powers[i])
                         for i in selected}
            else:
                shared = state.equal_split_rates(len(selected))
                rates = {i: float(shared[i]) for i in selected}
            latency = max(members[i].comp_latency_s
                          + messages[i].payload_bits / rates[i]
                          if rates[i] > 0 else math.inf
                          for i in selected)
    return decision, update, up_bytes, down_bytes, latency


def _ps_loop(cfg, devices, loss, scheduler, channel, eval_set, server_opt):
    for i, d in enumerate(devices):
        if d.id != i:
            raise ContractViolation("device ids must match their positions")
    if not devices:
        raise ContractViolation("need at least one device")
    dim = loss.dim
    up_comp = make_compressor(cfg.uplink, dim)
    down_comp = make_compressor(cfg.downlink, dim) if cfg.downlink is not None else None
    theta = devices[0].theta.copy()
    server = GlobalState(theta, np.zeros(dim), ErrorState.zeros(dim, owner=-1))
    union = _dataset_union(devices)
    trace = RunTrace()
    for t in range(1, cfg.rounds + 1):
        state = _round_channel(channel, devices, t, cfg.seed)
        decision, update, up_bytes, down_bytes, latency = _ps_round(
            theta, devices, devices, cfg, loss, t, state, scheduler,
            up_comp, down_comp, server, server_opt)
        if update is not None:
            theta = theta + update
        ages = age_update([d.age for d in devices], decision.order)
        for d, a in zip(devices, ages):
            d.age = int(a)
            d.theta = theta
        trace.records.append(RoundRecord(
            t, loss.batch_loss(theta, *union), _metric(loss, theta, eval_set),
            tuple(decision.order), up_bytes, down_bytes, latency,
            int(ages.max())))
        server.round = t
    trace.final_theta = theta
    return trace


# ---------------------------------------------------------------------------
# public training loops
# ---------------------------------------------------------------------------

def run_pssgd(cfg: TrainConfig, devices, loss, eval_set=None) -> RunTrace:
    """Synchronous gradient averaging: one step, everyone participates."""
    if cfg.local_steps != 1:
        raise ContractViolation("synchronous SGD uses exactly one local step")
    if cfg.uplink.scheme != "identity" or cfg.downlink is not None:
        raise ContractViolation("synchronous SGD sends raw gradients")
    return _ps_loop(cfg, devices, loss, FullParticipation(), None, eval_set, "average")


def run_fedavg(cfg: TrainConfig, devices, loss, scheduler: Scheduler | None = None,
               channel=None, eval_set=None) -> RunTrace:
    """Federated averaging: H local steps on scheduled devices, then average."""
    if cfg.uplink.scheme != "identity" or cfg.downlink is not None:
        raise ContractViolation("federated averaging sends raw models; "
                                "use run_compressed_ef for compression")
    scheduler = scheduler or FullParticipation()
    return _ps_loop(cfg, devices, loss, scheduler, channel, eval_set, "average")


def run_compressed_ef(cfg: TrainConfig, devices, loss, scheduler: Scheduler | None = None,
                      channel=None, eval_set=None) -> RunTrace:
    """Compressed local SGD with error feedback on the uplink and optionally
    on the server broadcast."""
    scheduler = scheduler or FullParticipation()
    return _ps_loop(cfg, devices, loss, scheduler, channel, eval_set, "average")


def run_slowmo(cfg: TrainConfig, devices, loss, scheduler: Scheduler | None = None,
               channel=None, eval_set=None) -> RunTrace:
    """Server momentum over averaged model deltas (pseudo-gradients)."""
    if not cfg.slowmo_alpha > 0:
        raise ContractViolation("server learning-rate scale must be positive")
    scheduler = scheduler or FullParticipation()
    return _ps_loop(cfg, devices, loss, scheduler, channel, eval_set, "slowmo")


def run_signsgd_mv(cfg: TrainConfig, devices, loss, eval_set=None) -> RunTrace:
    """Majority-vote sign descent: devices send signs, the server applies the
    sign of the vote with a fixed learning rate."""
    theta = devices[0].theta.copy()
    union = _dataset_union(devices)
    trace = RunTrace()
    d = loss.dim
    sign_bytes = -(-d // 8)
    for t in range(1, cfg.rounds + 1):
        votes = []
        for dev in devices:
            gen = batch_rng(cfg.seed, dev.id, t, 1)
            X, y = draw_batch(dev.shard, cfg.batch_size, gen)
            votes.append(sign_pm1(loss.batch_grad(theta, X, y)))
        aggregate = sign_pm1(pairwise_sum(votes))
        theta = theta - cfg.lr_at(t) * aggregate
        for dev in devices:
            dev.theta = theta
        trace.records.append(RoundRecord(
            t, loss.batch_loss(theta, *union), _metric(loss, theta, eval_set),
            tuple(range(len(devices))), sign_bytes * len(devices), sign_bytes,
            0.0, 0))
    trace.final_theta = theta
    return trace


def run_sync_sparse_avg(cfg: TrainConfig, devices, loss, eval_set=None,
                        mask_fn=None) -> RunTrace:
    """Shared-mask sparse parameter averaging.

    Each device takes one local step; coordinates selected by the round's
    common mask are replaced by their cross-device average, the rest keep
    their local half-step values.  The cyclic schedule guarantees every
    coordinate is averaged within ``sync_tau_max`` rounds.
    """
    dim = loss.dim
    if mask_fn is None:
        sync_mask_schedule(dim, cfg.sync_phi, cfg.sync_tau_max, 1)  # feasibility
        mask_fn = lambda t: sync_mask_schedule(dim, cfg.sync_phi, cfg.sync_tau_max, t)
    models = [dev.theta.copy() for dev in devices]
    union = _dataset_union(devices)
    trace = RunTrace()
    for t in range(1, cfg.rounds + 1):
        mask = mask_fn(t)
        halves = []
        for dev, theta in zip(devices, models):
            gen = batch_rng(cfg.seed, dev.id, t, 1)
            X, y = draw_batch(dev.shard, cfg.batch_size, gen)
            halves.append(theta + (-cfg.lr_at(t)) * loss.batch_grad(theta, X, y))
        averaged = pairwise_mean(halves)
        keep = mask.bits.astype(bool)
        models = [np.where(keep, averaged, half) for half in halves]
        for dev, m in zip(devices, models):
            dev.theta = m
        mean_model = pairwise_mean(models)
        per_dev_bytes = mask.nnz * 8
        trace.records.append(RoundRecord(
            t, loss.batch_loss(mean_model, *union),
            _metric(loss, mean_model, eval_set),
            tuple(range(len(devices))), per_dev_bytes * len(devices),
            per_dev_bytes, 0.0, 0))
    trace.final_theta = pairwise_mean(models)
    trace.final_models = models
    return trace


def run_decentralized(cfg: TrainConfig, devices, W, loss, eval_set=None) -> RunTrace:
    """Gossip learning: local gradients, neighbor mixing, local descent."""
    W = np.asarray(W, dtype=np.float64)
    if not is_doubly_stochastic(W, tol=1e-9):
        raise ContractViolation("mixing matrix must be doubly stochastic")
    models = [dev.theta.copy() for dev in devices]
    union = _dataset_union(devices)
    trace = RunTrace()
    n = len(devices)
    degrees = [int(np.count_nonzero(W[i]) - (1 if W[i, i] != 0 else 0)) for i in range(n)]
    bytes_per_round = sum(degrees) * loss.dim * 8
    for t in range(1, cfg.rounds + 1):
        eta = cfg.lr_at(t)
        grads = []
        for dev, theta in zip(devices, models):
            gen = batch_rng(cfg.seed, dev.id, t, 1)
            X, y = draw_batch(dev.shard, cfg.batch_size, gen)
            grads.append(loss.batch_grad(theta, X, y))
        mixed = consensus_step(models, W)
        models = [m + (-eta) * g for m, g in zip(mixed, grads)]
        for dev, m in zip(devices, models):
            dev.theta = m
        mean_model = pairwise_mean(models)
        trace.records.append(RoundRecord(
            t, loss.batch_loss(mean_model, *union),
            _metric(loss, mean_model, eval_set),
            tuple(range(n)), bytes_per_round, 0, 0.0, 0))
    trace.final_theta = pairwise_mean(models)
    trace.final_models = models
    return trace


def run_hfl(cfg: TrainConfig, clusters, loss, channel=None, centers=None,
            eval_set=None) -> RunTrace:
    """Hierarchical averaging: per-cluster rounds, periodic global averaging.

    ``clusters`` is a partition of the devices; ``channel`` (when given) is an
    :class:`flwsim.wireless.HflChannel` and ``centers`` the per-cluster server
    positions.  With one cluster this is exactly federated averaging
    orchestrated by that cluster's server.
    """
    if not clusters or any(len(c) == 0 for c in clusters):
        raise ContractViolation("clusters must be non-empty")
    all_devices = [d for cluster in clusters for d in cluster]
    seen = {d.id for d in all_devices}
    if len(seen) != len(all_devices):
        raise ContractViolation("clusters must not overlap")
    dim = loss.dim
    up_comp = make_compressor(cfg.uplink, dim)
    down_comp = make_compressor(cfg.downlink, dim) if cfg.downlink is not None else None
    n_clusters = len(clusters)
    cluster_models = [clusters[0][0].theta.copy() for _ in range(n_clusters)]
    servers = [GlobalState(cluster_models[l], np.zeros(dim),
                           ErrorState.zeros(dim, owner=-(l + 1)))
               for l in range(n_clusters)]
    union = _dataset_union(all_devices)
    trace = RunTrace()
    dists = None
    if channel is not None:
        if centers is None:
            raise ContractViolation("hierarchical channel needs cluster centers")
        dists = []
        for cluster, center in zip(clusters, centers):
            pos = np.array([d.position for d in cluster], dtype=np.float64)
            dists.append(np.hypot(pos[:, 0] - center[0], pos[:, 1] - center[1]))
    payload_bits = up_comp.nominal_bits()
    for t in range(1, cfg.rounds + 1):
        up_bytes = down_bytes = 0
        latencies = []
        mean_up_rates = []
        for l, cluster in enumerate(clusters):
            _, update, ub, db, _ = _ps_round(
                cluster_models[l], cluster, cluster, cfg, loss, t, None,
                FullParticipation(), up_comp, down_comp, servers[l], "average")
            cluster_models[l] = cluster_models[l] + update
            up_bytes += ub
            down_bytes += db
            if channel is not None:
                lat, mean_up = channel.access_round(
                    dists[l], payload_bits, t, cfg.seed,
                    f"mbs{l}" if n_clusters == 1 else f"sbs{l}")
                latencies.append(lat)
                mean_up_rates.append(mean_up)
        latency = max(latencies) if latencies else 0.0
        if t % cfg.inter_cluster_period == 0:
            global_model = pairwise_mean(cluster_models)
            cluster_models = [global_model.copy() for _ in range(n_clusters)]
            if n_clusters > 1:
                up_bytes += n_clusters * dim * 8
                down_bytes += n_clusters * dim * 8
                if channel is not None:
                    hop = channel.fronthaul_latency(
                        dim * 64, float(np.mean(mean_up_rates)))
                    latency += 2.0 * hop
        report = pairwise_mean(cluster_models)
        for cluster, model in zip(clusters, cluster_models):
            for dev in cluster:
                dev.theta = model
        trace.records.append(RoundRecord(
            t, loss.batch_loss(report, *union), _metric(loss, report, eval_set),
            tuple(d.id for d in all_devices), up_bytes, down_bytes, latency, 0))
    trace.final_theta = pairwise_mean(cluster_models)
    trace.final_models = cluster_models
    return trace
