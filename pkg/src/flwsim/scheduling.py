"""Device selection and resource allocation policies.

All policies are pure functions of their round inputs; ties break toward the
lowest device id everywhere, which makes every decision deterministic given
the round's random state.  Device ids are 0-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation


@dataclass
class RoundContext:
    """Round inputs handed to a scheduler by the training engine.

    ``rates``, ``snr_inst``, ``gains`` are None for channel-free runs;
    ``norms`` and ``quantized_norm_fn`` are filled only for schedulers that
    declare ``needs_updates``.
    """

    t: int
    n: int
    ages: np.ndarray
    rng: np.random.Generator
    rates: np.ndarray | None = None
    snr_inst: np.ndarray | None = None
    gains: np.ndarray | None = None
    comp_latency: np.ndarray | None = None
    payload_bits: int = 0
    norms: np.ndarray | None = None
    quantized_norm_fn: object = None
    subchannel_bandwidth: float = 1.0


@dataclass
class ScheduleDecision:
    """Outcome of one round of scheduling.

    ``order`` is the selection sequence (it matters for deadline policies);
    ``resources`` maps device id to a tuple of subchannel ids; ``powers`` maps
    device id to per-subchannel transmit powers aligned with ``resources``.
    """

    order: tuple = ()
    resources: dict = field(default_factory=dict)
    powers: dict = field(default_factory=dict)
    latency_s: float | None = None

    @property
    def selected(self):
        return frozenset(self.order)

    def check_disjoint(self):
        used = []
        for chans in self.resources.values():
            used.extend(chans)
        if len(used) != len(set(used)):
            raise ContractViolation("overlapping subchannel allocation")
        return True


# ---------------------------------------------------------------------------
# age and fairness
# ---------------------------------------------------------------------------

def age_update(ages, scheduled):
    """Scheduled devices reset to 0; everyone else grows one round older."""
    ages = np.asarray(ages, dtype=np.int64)
    out = ages + 1
    sched = list(scheduled)
    if sched and (min(sched) < 0 or max(sched) >= ages.size):
        raise ContractViolation("scheduled set references unknown devices")
    out[sched] = 0
    return out


def fairness_fn(x, alpha_fair: float) -> float:
    """Staleness utility: x^(1-a)/(1-a), or log(1+x) at a = 1."""
    if x < 0:
        raise ContractViolation("fairness argument must be nonnegative")
    if alpha_fair == 1.0:
        return math.log(1.0 + x)
    if x == 0.0 and alpha_fair > 1.0:
        return -math.inf
    return x ** (1.0 - alpha_fair) / (1.0 - alpha_fair)


# ---------------------------------------------------------------------------
# rate helpers (shared with the channel module's conventions)
# ---------------------------------------------------------------------------

def subset_rate(gains, powers, rate_factor=0.5, bandwidth=1.0):
    """Sum-rate over a set of subchannels: sum of b*f*log2(1 + g*p)."""
    gains = np.asarray(gains, dtype=np.float64)
    powers = np.asarray(powers, dtype=np.float64)
    return float(np.sum(bandwidth * rate_factor * np.log2(1.0 + gains * powers)))


def water_fill(gains, p_total):
    """Power split over fixed subchannels maximizing the sum rate."""
    gains = np.asarray(gains, dtype=np.float64)
    if np.any(gains < 0):
        raise ContractViolation("gains must be nonnegative")
    usable = gains > 0
    if not usable.any() or p_total <= 0:
        return np.zeros_like(gains)
    inv = 1.0 / gains[usable]
    order = np.argsort(inv)
    inv_sorted = inv[order]
    # find the water level mu with k active channels: mu = (P + sum inv)/k
    k = inv_sorted.size
    while k > 1:
        mu = (p_total + inv_sorted[:k].sum()) / k
        if mu > inv_sorted[k - 1]:
            break
        k -= 1
    mu = (p_total + inv_sorted[:k].sum()) / k
    alloc_sorted = np.maximum(0.0, mu - inv_sorted)
    alloc = np.zeros_like(inv)
    alloc[order] = alloc_sorted
    out = np.zeros_like(gains)
    out[usable] = alloc
    return out


# ---------------------------------------------------------------------------
# P3: fewest subchannels meeting a rate floor
# ---------------------------------------------------------------------------

def p3_min_subchannels(gains, r_min, p_max, available=None,
                       rate_factor=0.5, bandwidth=1.0):
    """Smallest subchannel set (plus powers) meeting the rate floor.

    Channels are added in decreasing gain order with water-filled power inside
    the chosen set.  Returns ``(channels, powers)`` or ``None`` when even all
    available channels cannot reach ``r_min``.
    """
    gains = np.asarray(gains, dtype=np.float64)
    if np.any(gains < 0):
        raise ContractViolation("gains must be nonnegative")
    if r_min <= 0:
        return (), np.zeros(0)
    avail = np.arange(gains.size) if available is None else np.asarray(sorted(available), dtype=np.int64)
    if avail.size == 0:
        return None
    order = avail[np.argsort(-gains[avail], kind="stable")]
    for count in range(1, order.size + 1):
        chans = order[:count]
        powers = water_fill(gains[chans], p_max)
        if subset_rate(gains[chans], powers, rate_factor, bandwidth) >= r_min:
            sort = np.argsort(chans)
            return tuple(int(c) for c in chans[sort]), powers[sort]
    return None


# ---------------------------------------------------------------------------
# P2: age-aware greedy joint selection and allocation
# ---------------------------------------------------------------------------

def p2_greedy_schedule(ages, gains, n_channels, r_min, p_max, alpha_fair,
                       rate_factor=0.5, bandwidth=1.0) -> ScheduleDecision:
    """Greedy staleness-per-channel scheduling.

    Repeats untilno unscheduled device is feasible: solve the minimal channel
    count for every remaining device over the remaining channels, pick the
    device maximizing f(age) / channel count, and commit its channels.
    """
    ages = np.asarray(ages, dtype=np.int64)
    gains = np.asarray(gains, dtype=np.float64)
    n_dev = ages.size
    if gains.shape != (n_dev, n_channels):
        raise ContractViolation("gains must be (devices x channels)")
    free = set(range(n_channels))
    remaining = list(range(n_dev))
    order, resources, powers = [], {}, {}
    while remaining and free:
        best = None
        for dev in remaining:
            sol = p3_min_subchannels(gains[dev], r_min, p_max, sorted(free),
                                     rate_factor, bandwidth)
            if sol is None:
                continue
            chans, pw = sol
            cost = max(len(chans), 1)  # rate floor of 0 needs no channels
            ratio = fairness_fn(float(ages[dev]), alpha_fair) / cost
            if best is None or ratio > best[0]:
                best = (ratio, dev, chans, pw)
        if best is None:
            break
        _, dev, chans, pw = best
        order.append(dev)
        resources[dev] = chans
        powers[dev] = pw
        free -= set(chans)
        remaining.remove(dev)
    decision = ScheduleDecision(tuple(order), resources, powers)
    decision.check_disjoint()
    return decision


# ---------------------------------------------------------------------------
# P4: deadline-bounded greedy ordering
# ---------------------------------------------------------------------------

def pipeline_latency(comm, comp):
    """Total latency of ordered uploads where computation overlaps.

    Device i starts uploading when both its own computation and all earlier
    uploads are done: T_i = max(T_{i-1}, comp_i) + comm_i, T_0 = 0.
    """
    t = 0.0
    for lc, lp in zip(comm, comp):
        t = max(t, lp) + lc
    return t


def p4_deadline_schedule(comm, comp, t_max) -> ScheduleDecision:
    """Greedy knapsack-style ordering maximizing devices under the deadline.

    Appends whichever remaining candidate increases the pipelined total
    latency the least, while the total stays within ``t_max``.
    """
    comm = np.asarray(comm, dtype=np.float64)
    comp = np.asarray(comp, dtype=np.float64)
    if np.any(comm < 0) or np.any(comp < 0):
        raise ContractViolation("latencies must be nonnegative")
    remaining = list(range(comm.size))
    order = []
    t = 0.0
    while remaining:
        best = None
        for dev in remaining:
            t_new = max(t, comp[dev]) + comm[dev]
            if t_new <= t_max and (best is None or t_new < best[0]):
                best = (t_new, dev)
        if best is None:
            break
        t, dev = best
        order.append(dev)
        remaining.remove(dev)
    return ScheduleDecision(tuple(order), latency_s=t)


# ---------------------------------------------------------------------------
# fixed-count policies
# ---------------------------------------------------------------------------

def random_schedule(n, k, rng: np.random.Generator) -> ScheduleDecision:
    """Uniformly random k-subset."""
    if not 1 <= k <= n:
        raise ContractViolation(f"k={k} out of range for {n} devices")
    picked = np.sort(rng.choice(n, size=k, replace=False))
    return ScheduleDecision(tuple(int(i) for i in picked))


def round_robin_schedule(n, k, t) -> ScheduleDecision:
    """Cycle through a fixed partition into ceil(n/k) groups; t is 1-based.

    When k does not divide n the final group is smaller; it still gets its
    own slot in the cycle.
    """
    if not 1 <= k <= n:
        raise ContractViolation(f"k={k} out of range for {n} devices")
    groups = [tuple(range(i, min(i + k, n))) for i in range(0, n, k)]
    return ScheduleDecision(groups[(t - 1) % len(groups)])


def pf_schedule(snr_inst, snr_avg, k) -> ScheduleDecision:
    """Top-k devices by instantaneous over time-averaged SNR."""
    snr_inst = np.asarray(snr_inst, dtype=np.float64)
    snr_avg = np.asarray(snr_avg, dtype=np.float64)
    if not 1 <= k <= snr_inst.size:
        raise ContractViolation("k out of range")
    ratio = snr_inst / np.maximum(snr_avg, 1e-300)
    picked = np.sort(np.argsort(-ratio, kind="stable")[:k])
    return ScheduleDecision(tuple(int(i) for i in picked))


def latency_min_schedule(rates, k) -> ScheduleDecision:
    """Top-k devices by instantaneous rate (lowest communication latency)."""
    rates = np.asarray(rates, dtype=np.float64)
    if not 1 <= k <= rates.size:
        raise ContractViolation("k out of range")
    picked = np.sort(np.argsort(-rates, kind="stable")[:k])
    return ScheduleDecision(tuple(int(i) for i in picked))


def update_aware_schedule(policy, rates, norms, quantized_norm_fn, k, k_c=None) -> ScheduleDecision:
    """Channel/update-norm hybrid policies.

    BC: best channels.  BN2: best l2 update norms.  BC-BN2: best k of the
    k_c best channels, by norm.  BN2-C: best norms after quantizing each
    update to the bit budget it would get as the sole transmitter
    (``quantized_norm_fn(device) -> norm``).
    """
    if rates is None and policy in ("BC", "BC-BN2"):
        raise ContractViolation(f"{policy} needs channel rates")
    rates = None if rates is None else np.asarray(rates, dtype=np.float64)
    n = (rates if rates is not None else np.asarray(norms)).size
    if not 1 <= k <= n:
        raise ContractViolation("k out of range")
    if policy == "BC":
        picked = np.argsort(-rates, kind="stable")[:k]
    elif policy == "BN2":
        norms = np.asarray(norms, dtype=np.float64)
        picked = np.argsort(-norms, kind="stable")[:k]
    elif policy == "BC-BN2":
        if k_c is None or not k <= k_c <= n:
            raise ContractViolation("BC-BN2 needs k <= k_c <= n")
        norms = np.asarray(norms, dtype=np.float64)
        pool = np.sort(np.argsort(-rates, kind="stable")[:k_c])
        picked = pool[np.argsort(-norms[pool], kind="stable")[:k]]
    elif policy == "BN2-C":
        qnorms = np.array([quantized_norm_fn(i) for i in range(n)])
        picked = np.argsort(-qnorms, kind="stable")[:k]
    else:
        raise ContractViolation(f"unknown update-aware policy {policy!r}")
    picked = np.sort(picked)
    return ScheduleDecision(tuple(int(i) for i in picked))


# ---------------------------------------------------------------------------
# stateful adapters used by the training loops
# ---------------------------------------------------------------------------

class Scheduler:
    """Base interface: select(ctx) -> ScheduleDecision.

    ``ctx`` carries the round index ``t`` (1-based), device count ``n``,
    ``ages``, optional per-device ``rates``/``snr_inst``, per-device
    ``gains`` over subchannels, update ``norms`` when requested, and the
    round ``rng``.  ``sole_transmitter`` marks policies whose devices send
    one at a time over the whole band, so candidate rates are unshared.
    """

    needs_updates = False
    sole_transmitter = False

    def select(self, ctx) -> ScheduleDecision:
        raise NotImplementedError


class FullParticipation(Scheduler):
    def select(self, ctx):
        return ScheduleDecision(tuple(range(ctx.n)))


class RandomScheduler(Scheduler):
    def __init__(self, k):
        self.k = k

    def select(self, ctx):
        return random_schedule(ctx.n, self.k, ctx.rng)


class RoundRobinScheduler(Scheduler):
    def __init__(self, k):
        self.k = k

    def select(self, ctx):
        return round_robin_schedule(ctx.n, self.k, ctx.t)


class ProportionalFairScheduler(Scheduler):
    """PF with an exponential moving average of the observed SNR.

    The average starts at the first observation and then updates with
    factor ``ema`` each round.
    """

    def __init__(self, k, ema=0.1):
        self.k = k
        self.ema = ema
        self.snr_avg = None

    def select(self, ctx):
        inst = np.asarray(ctx.snr_inst, dtype=np.float64)
        if self.snr_avg is None:
            self.snr_avg = inst.copy()
        decision = pf_schedule(inst, self.snr_avg, self.k)
        self.snr_avg = (1.0 - self.ema) * self.snr_avg + self.ema * inst
        return decision


class LatencyMinScheduler(Scheduler):
    def __init__(self, k):
        self.k = k

    def select(self, ctx):
        return latency_min_schedule(ctx.rates, self.k)


class AgeAwareScheduler(Scheduler):
    """P2 greedy selection over the round's subchannel gains."""

    def __init__(self, r_min, p_max, alpha_fair=1.0, rate_factor=1.0):
        self.r_min = r_min
        self.p_max = p_max
        self.alpha_fair = alpha_fair
        self.rate_factor = rate_factor

    def select(self, ctx):
        gains = np.asarray(ctx.gains, dtype=np.float64)
        return p2_greedy_schedule(
            ctx.ages, gains, gains.shape[1],
            self.r_min, self.p_max, self.alpha_fair,
            rate_factor=self.rate_factor, bandwidth=ctx.subchannel_bandwidth)


class DeadlineScheduler(Scheduler):
    """Greedy ordering under a per-round deadline; uploads are sequential."""

    sole_transmitter = True

    def __init__(self, t_max):
        self.t_max = t_max

    def select(self, ctx):
        comm = ctx.payload_bits / np.maximum(np.asarray(ctx.rates, dtype=np.float64), 1e-300)
        return p4_deadline_schedule(comm, ctx.comp_latency, self.t_max)


class UpdateAwareScheduler(Scheduler):
    needs_updates = True

    def __init__(self, policy, k, k_c=None, budget_bits=None):
        self.policy = policy
        self.k = k
        self.k_c = k_c
        self.budget_bits = budget_bits

    def select(self, ctx):
        return update_aware_schedule(self.policy, ctx.rates, ctx.norms,
                                     ctx.quantized_norm_fn, self.k, self.k_c)
