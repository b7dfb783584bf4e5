"""Channel geometry, fading, rates, SINR under random interference, latency.

Rates follow the half-log convention ``rate_factor * log2(1 + SNR)`` per
subchannel with ``rate_factor = 0.5`` by default; scenario configs that work
in physical units switch on the bandwidth multiplier so rates become
``B * log2(1 + SNR)`` bits per second.  Noise given as a density N0 (W/Hz) is
converted to power as ``sigma2 = N0 * bandwidth`` of whatever band slice a
transmission occupies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .errors import ContractViolation
from .numerics import RngStream


# ---------------------------------------------------------------------------
# models and geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChannelModel:
    """Static channel parameters shared by all devices."""

    alpha: float = 4.0                  # path-loss exponent, > 2
    bandwidth: float = 1.0              # total bandwidth in Hz
    noise_density: float | None = None  # W/Hz; used when sigma2 is None
    sigma2: float | None = 1.0          # noise power over the full band
    device_power: float = 1.0
    server_power: float = 1.0
    gamma_star: float = 1.0             # SINR success threshold
    density: float = 1e-4               # interfering-cluster density per unit area
    rate_factor: float = 0.5
    use_bandwidth: bool = False         # multiply rates by occupied bandwidth
    fading: str = "rayleigh"            # "rayleigh" or "none"

    def __post_init__(self):
        if self.alpha <= 2:
            raise ContractViolation("path-loss exponent must exceed 2")
        if self.bandwidth <= 0 or self.gamma_star <= 0:
            raise ContractViolation("bandwidth and gamma_star must be positive")
        if self.sigma2 is None and self.noise_density is None:
            raise ContractViolation("give either sigma2 or noise_density")

    def noise_power(self, band: float | None = None) -> float:
        """Noise power over a band slice (defaults to the full bandwidth)."""
        if self.noise_density is not None:
            return self.noise_density * (self.bandwidth if band is None else band)
        return self.sigma2


@dataclass(frozen=True)
class DeviceGeometry:
    """Planar device positions around one server."""

    positions: np.ndarray               # (n, 2) meters
    server_pos: tuple = (0.0, 0.0)
    exclusion_radius: float = 0.0       # interferers kept outside this radius
    outer_factor: float = 5.0           # PPP disc radius = factor / sqrt(density)

    def distances(self):
        delta = np.asarray(self.positions, dtype=np.float64) - np.asarray(self.server_pos)
        d = np.hypot(delta[:, 0], delta[:, 1])
        if np.any(d <= 0):
            raise ContractViolation("device distances must be positive")
        return d


def uniform_disc_positions(n, radius, rng: np.random.Generator, min_radius=0.0):
    """n points uniform by area in an annulus [min_radius, radius]."""
    r = np.sqrt(rng.random(n) * (radius ** 2 - min_radius ** 2) + min_radius ** 2)
    phi = rng.random(n) * 2.0 * math.pi
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


@dataclass
class NetworkRealization:
    """One round's fading draws and interferer placement."""

    distances: np.ndarray               # (n,) tagged-device distances
    h: np.ndarray                       # (n,) per-device fading power gains
    subchannel_gains: np.ndarray        # (n, n_subchannels) SNR per unit power
    interferer_distances: np.ndarray    # (m,)
    interferer_h: np.ndarray            # (m,)


def sample_realization(model: ChannelModel, geometry: DeviceGeometry,
                       rng: np.random.Generator, n_subchannels: int = 1) -> NetworkRealization:
    """Draw block-fading gains and an interferer placement for one round.

    Fading power gains are unit-mean exponentials (Rayleigh amplitudes),
    independent per device, subchannel, and round.  Interferers follow a
    Poisson process of the model's density over the annulus between the
    geometry's exclusion radius and ``outer_factor / sqrt(density)``.
    """
    d = geometry.distances()
    n = d.size
    if model.fading == "none":
        h = np.ones(n)
        hp = np.ones((n, n_subchannels))
    else:
        h = rng.exponential(1.0, size=n)
        hp = rng.exponential(1.0, size=(n, n_subchannels))
    sigma_sc = model.noise_power(model.bandwidth / n_subchannels)
    # SNR per unit power; with zero noise the raw channel gain is reported
    gains = hp * (d ** -model.alpha)[:, None] / (sigma_sc if sigma_sc > 0 else 1.0)
    outer = geometry.outer_factor / math.sqrt(model.density) if model.density > 0 else 0.0
    if outer > geometry.exclusion_radius and model.density > 0:
        area = math.pi * (outer ** 2 - geometry.exclusion_radius ** 2)
        m = rng.poisson(model.density * area)
        radii = np.sqrt(rng.random(m) * (outer ** 2 - geometry.exclusion_radius ** 2)
                        + geometry.exclusion_radius ** 2)
        ih = np.ones(m) if model.fading == "none" else rng.exponential(1.0, size=m)
    else:
        radii = np.zeros(0)
        ih = np.zeros(0)
    return NetworkRealization(d, h, gains, radii, ih)


# ---------------------------------------------------------------------------
# rates, latency, SINR
# ---------------------------------------------------------------------------

def shannon_rate(gains, powers, allocation, rate_factor=0.5, bandwidth=1.0):
    """Per-device sum rates over disjoint subchannel allocations.

    ``gains`` is (devices x subchannels) SNR per unit power, ``powers`` maps
    device id to per-subchannel powers aligned with ``allocation[device]``.
    """
    gains = np.asarray(gains, dtype=np.float64)
    used = [c for chans in allocation.values() for c in chans]
    if len(used) != len(set(used)):
        raise ContractViolation("overlapping subchannel allocation")
    rates = {}
    for dev, chans in allocation.items():
        p = np.asarray(powers[dev], dtype=np.float64)
        g = gains[dev, list(chans)]
        rates[dev] = float(np.sum(bandwidth * rate_factor * np.log2(1.0 + g * p)))
    return rates


def comm_latency(payload_bits, rate):
    """Transmission time; a zero rate yields an infinite-latency sentinel."""
    if rate <= 0:
        return math.inf
    return payload_bits / rate


def comp_latency(profile, rng: np.random.Generator | None = None):
    """Computation time from a per-device profile: a constant or a sampler."""
    if callable(profile):
        return float(profile(rng))
    value = float(profile)
    if value < 0:
        raise ContractViolation("computation latency must be nonnegative")
    return value


def sinr(device, realization: NetworkRealization, model: ChannelModel):
    """Received SINR of one device against the round's interferers."""
    p = model.device_power
    num = p * realization.h[device] * realization.distances[device] ** -model.alpha
    interference = float(np.sum(
        p * realization.interferer_h * realization.interferer_distances ** -model.alpha))
    return num / (interference + model.noise_power())


# ---------------------------------------------------------------------------
# analytic success probabilities
# ---------------------------------------------------------------------------

def v_integral(gamma_star, alpha, density, power, sigma2,
               abs_tol=1e-9, tail_tol=1e-12):
    """Interference-and-noise factor V used by the closed-form success rates.

    Numeric quadrature of
    ``(sigma2 * g * lam^(1-a/2) / (P * 2^(a-2))) * g^(a/2) *
    integral_0^inf (1 - exp(-(12/(5 pi)) g^(a/2) u)) / (1 + u^(a/2)) du``.
    The head of the integral is resolved adaptively up to where the
    integrable tail bound falls below ``tail_tol``; requires ``alpha > 2``
    for convergence.
    """
    if alpha <= 2:
        raise ContractViolation("V integral diverges for alpha <= 2")
    if gamma_star == 0.0:
        return 0.0
    half = alpha / 2.0
    c = (12.0 / (5.0 * math.pi)) * gamma_star ** half

    def integrand(u):
        return -np.expm1(-c * u) / (1.0 + u ** half)

    # adaptive head plus a transformed tail; splitting keeps quad accurate
    # across the many orders of magnitude between the knee and the tail cut
    knee = max(10.0, 10.0 / c)
    head, _ = integrate.quad(integrand, 0.0, knee, epsabs=abs_tol, limit=400)
    tail, _ = integrate.quad(integrand, knee, np.inf, epsabs=abs_tol, limit=400)
    prefactor = (sigma2 * gamma_star * density ** (1.0 - half)
                 / (power * 2.0 ** (alpha - 2.0))) * gamma_star ** half
    return prefactor * (head + tail)


def success_prob_analytic(policy, k, n, gamma_star, alpha, density, power, sigma2):
    """Closed-form update success probability for one policy.

    RS returns the unconditional time average ``(k/n) / (1 + V)``.
    RR returns the success probability of a scheduled round, ``1 / (1 + V)``
    (multiply by the scheduling fraction for the time average).
    PF returns the alternating binomial sum with the k/n prefactor.
    """
    if not 1 <= k <= n:
        raise ContractViolation("need 1 <= k <= n")
    if policy == "RS":
        v = v_integral(gamma_star, alpha, density, power, sigma2)
        return (k / n) / (1.0 + v)
    if policy == "RR":
        v = v_integral(gamma_star, alpha, density, power, sigma2)
        return 1.0 / (1.0 + v)
    if policy == "PF":
        total = 0.0
        for i in range(1, n - k + 2):
            v = v_integral(i * gamma_star, alpha, density, power, sigma2)
            total += math.comb(n - k + 1, i) * ((-1) ** (i + 1)) * (k / n) / (1.0 + v)
        return total
    raise ContractViolation(f"unknown policy {policy!r}")


def rounds_figure_of_merit(u, rr_fraction=None):
    """Relative round count to reach a fixed accuracy, ``-1 / log(1 - u)``.

    Only meaningful for comparing policies; the optional ``rr_fraction``
    applies the round-robin k/n scaling.
    """
    if not 0.0 < u < 1.0:
        raise ContractViolation("success probability must lie in (0, 1)")
    base = -1.0 / math.log(1.0 - u)
    return base * rr_fraction if rr_fraction is not None else base


# ---------------------------------------------------------------------------
# Monte-Carlo oracle over a multi-cluster layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiClusterConfig:
    """Scenario for the Monte-Carlo success-probability oracle.

    One tagged cluster sits at the origin with ``n_devices`` placed uniformly
    by area in the annulus [cell_r_min, cell_r_max].  Interfering clusters
    form a Poisson process of the given density between the exclusion radius
    and ``outer_factor / sqrt(density)``; each contributes one active
    transmitter placed uniformly in its own cell disc.
    """

    n_devices: int = 10
    k_scheduled: int = 4
    gamma_star: float = 1.0
    alpha: float = 4.0
    density: float = 0.02
    power: float = 1.0
    sigma2: float = 0.25
    cell_r_min: float = 0.95
    cell_r_max: float = 2.05
    exclusion_radius: float = 4.1
    outer_factor: float = 5.0
    pf_ema: float = 0.1
    placement: str = "stratified"  # or "random"; stratified pins area quantiles


@dataclass
class MCStats:
    """Per-device and aggregate outcomes of a Monte-Carlo run."""

    scheduled: np.ndarray       # per-device count of scheduled rounds
    successes: np.ndarray       # per-device count of successful rounds
    rounds: int

    @property
    def u_per_device(self):
        return self.successes / self.rounds

    @property
    def u_mean(self):
        """Time average over devices and rounds (the oracle for RS/PF forms)."""
        return float(self.successes.sum()) / (self.successes.size * self.rounds)

    @property
    def sched_freq(self):
        return self.scheduled / self.rounds

    @property
    def success_given_scheduled(self):
        total = self.scheduled.sum()
        return float(self.successes.sum()) / total if total else 0.0


def success_prob_mc(policy, config: MultiClusterConfig, rounds: int,
                    rng: np.random.Generator, chunk: int = 4096) -> MCStats:
    """Empirical frequency of {scheduled and SINR above threshold} per device."""
    if rounds < 1:
        raise ContractViolation("need at least one round")
    cfg = config
    n, k = cfg.n_devices, cfg.k_scheduled
    r2min, r2max = cfg.cell_r_min ** 2, cfg.cell_r_max ** 2
    if cfg.placement == "stratified":
        quantiles = (np.arange(n) + 0.5) / n
        dist = np.sqrt(quantiles * (r2max - r2min) + r2min)
    else:
        dist = np.sqrt(rng.random(n) * (r2max - r2min) + r2min)
    signal_base = cfg.power * dist ** -cfg.alpha
    outer = cfg.outer_factor / math.sqrt(cfg.density)
    ann_area = math.pi * (outer ** 2 - cfg.exclusion_radius ** 2)
    mean_clusters = cfg.density * ann_area

    scheduled = np.zeros(n, dtype=np.int64)
    successes = np.zeros(n, dtype=np.int64)
    pf_avg = None
    done = 0
    t = 0
    groups = [tuple(range(i, min(i + k, n))) for i in range(0, n, k)]
    while done < rounds:
        b = min(chunk, rounds - done)
        h = rng.exponential(1.0, size=(b, n))
        counts = rng.poisson(mean_clusters, size=b)
        total = int(counts.sum())
        centers = np.sqrt(rng.random(total) * (outer ** 2 - cfg.exclusion_radius ** 2)
                          + cfg.exclusion_radius ** 2)
        off_r = cfg.cell_r_max * np.sqrt(rng.random(total))
        off_phi = rng.random(total) * 2.0 * math.pi
        ix = centers + off_r * np.cos(off_phi)
        iy = off_r * np.sin(off_phi)
        idist = np.hypot(ix, iy)
        ih = rng.exponential(1.0, size=total)
        received = cfg.power * ih * idist ** -cfg.alpha
        bounds = np.zeros(b + 1, dtype=np.int64)
        np.cumsum(counts, out=bounds[1:])
        interference = np.add.reduceat(np.append(received, 0.0), bounds[:-1])
        interference[counts == 0] = 0.0

        gamma = signal_base[None, :] * h / (interference[:, None] + cfg.sigma2)
        ok = gamma > cfg.gamma_star

        if policy == "RS":
            pick = np.argsort(rng.random((b, n)), axis=1)[:, :k]
            sel = np.zeros((b, n), dtype=bool)
            np.put_along_axis(sel, pick, True, axis=1)
        elif policy == "RR":
            sel = np.zeros((b, n), dtype=bool)
            for j in range(b):
                sel[j, list(groups[(t + j) % len(groups)])] = True
        elif policy == "PF":
            sel = np.zeros((b, n), dtype=bool)
            snr = signal_base[None, :] * h / cfg.sigma2
            for j in range(b):
                if pf_avg is None:
                    pf_avg = snr[j].copy()
                ratio = snr[j] / np.maximum(pf_avg, 1e-300)
                top = np.argsort(-ratio, kind="stable")[:k]
                sel[j, top] = True
                pf_avg = (1.0 - cfg.pf_ema) * pf_avg + cfg.pf_ema * snr[j]
        else:
            raise ContractViolation(f"unknown policy {policy!r}")

        scheduled += sel.sum(axis=0)
        successes += (sel & ok).sum(axis=0)
        done += b
        t += b
    return MCStats(scheduled, successes, rounds)


# ---------------------------------------------------------------------------
# scenario wiring for the training loops
# ---------------------------------------------------------------------------

@dataclass
class RoundChannelState:
    """One round's channel view handed to schedulers and the latency model."""

    distances: np.ndarray
    h: np.ndarray                      # (n, n_subchannels)
    gains: np.ndarray                  # SNR per unit power, per subchannel
    model: ChannelModel
    n_subchannels: int

    def snr_inst(self):
        """Full-band instantaneous SNR at full device power (PF ranking)."""
        base = self.model.device_power * self.distances ** -self.model.alpha
        return base * self.h[:, 0] / self.model.noise_power()

    def equal_split_rates(self, n_sharing):
        """Per-device rate when n_sharing devices split the band evenly."""
        share = self.model.bandwidth / max(n_sharing, 1)
        noise = self.model.noise_power(share)
        snr = self.model.device_power * self.h[:, 0] * self.distances ** -self.model.alpha / noise
        if self.model.use_bandwidth:
            return share * np.log2(1.0 + snr)
        return self.model.rate_factor * np.log2(1.0 + snr)

    def allocated_rate(self, dev, channels, powers):
        """Realized rate of one device over explicitly allocated subchannels."""
        if len(channels) == 0:
            return 0.0
        g = self.gains[dev, list(channels)]
        bw = self.model.bandwidth / self.n_subchannels
        factor = bw if self.model.use_bandwidth else self.model.rate_factor
        return float(np.sum(factor * np.log2(1.0 + g * np.asarray(powers))))


@dataclass
class WirelessScenario:
    """Couples a channel model with device geometry for training runs."""

    model: ChannelModel
    cell_radius: float = 500.0
    min_distance: float = 25.0
    n_subchannels: int = 1
    comp_latency_s: float = 0.0

    def sample_positions(self, n, rng: np.random.Generator):
        return uniform_disc_positions(n, self.cell_radius, rng, self.min_distance)

    def round_state(self, distances, t, seed) -> RoundChannelState:
        gen = RngStream(seed, f"channel/t{t}").generator()
        n = distances.size
        if self.model.fading == "none":
            h = np.ones((n, self.n_subchannels))
        else:
            h = gen.exponential(1.0, size=(n, self.n_subchannels))
        sigma_sc = self.model.noise_power(self.model.bandwidth / self.n_subchannels)
        # SNR per unit transmit power; schedulers allocate power explicitly
        gains = h * (distances ** -self.model.alpha)[:, None] / sigma_sc
        return RoundChannelState(distances, h, gains, self.model, self.n_subchannels)


@dataclass
class HflChannel:
    """Two-tier access plus fronthaul latency model for hierarchical runs."""

    model: ChannelModel
    n_subcarriers: int = 600
    subcarrier_hz: float = 30e3
    mu_power: float = 0.2
    sbs_power: float = 6.3
    mbs_power: float = 20.0
    fronthaul_speedup: float = 100.0

    @property
    def total_bandwidth(self):
        return self.n_subcarriers * self.subcarrier_hz

    def _rates(self, distances, tx_power, n_sharing, gen):
        """Uplink-style rates when n_sharing devices split the subcarriers."""
        n_sc = max(1, self.n_subcarriers // max(n_sharing, 1))
        p_sc = tx_power / n_sc
        noise = self.model.noise_density * self.subcarrier_hz
        h = gen.exponential(1.0, size=distances.size) if self.model.fading == "rayleigh" \
            else np.ones(distances.size)
        snr = p_sc * h * distances ** -self.model.alpha / noise
        return n_sc * self.subcarrier_hz * np.log2(1.0 + snr)

    def access_round(self, distances, payload_bits, t, seed, label):
        """(round latency, mean uplink rate) for one cluster or the full cell.

        Uplink: members split the subcarriers; downlink: the serving station
        broadcasts over the whole band.  Latency is the slowest member's
        uplink plus the slowest broadcast leg.
        """
        gen = RngStream(seed, f"hflchan/{label}/t{t}").generator()
        distances = np.asarray(distances, dtype=np.float64)
        up = self._rates(distances, self.mu_power, distances.size, gen)
        power_down = self.mbs_power if label.startswith("mbs") else self.sbs_power
        noise_full = self.model.noise_density * self.total_bandwidth
        h = gen.exponential(1.0, size=distances.size) if self.model.fading == "rayleigh" \
            else np.ones(distances.size)
        snr_down = power_down * h * distances ** -self.model.alpha / noise_full
        down = self.total_bandwidth * np.log2(1.0 + snr_down)
        latency = float(np.max(payload_bits / up) + np.max(payload_bits / down))
        return latency, float(np.mean(up))

    def fronthaul_latency(self, payload_bits, mean_access_rate):
        """One fronthaul hop at ``fronthaul_speedup`` times the access rate."""
        return payload_bits / (self.fronthaul_speedup * mean_access_rate)


# ---------------------------------------------------------------------------
# canned configurations
# ---------------------------------------------------------------------------

def _dbm_to_watt(dbm):
    return 10.0 ** (dbm / 10.0) * 1e-3


def canned_channel(name: str):
    """Named channel setups used by the experiment harness."""
    if name == "fig1":
        # single cell: 100 devices in a 500 m disc, 20 scheduled per round,
        # device power 10 dBm, server power 15 dBm, B = 2e7 Hz,
        # noise density -204 dBW/Hz; spectral rates.
        model = ChannelModel(alpha=4.0, bandwidth=2e7,
                             noise_density=10.0 ** (-204.0 / 10.0), sigma2=None,
                             device_power=_dbm_to_watt(10.0),
                             server_power=_dbm_to_watt(15.0),
                             gamma_star=1.0, density=0.0,
                             rate_factor=1.0, use_bandwidth=True)
        return WirelessScenario(model, cell_radius=500.0, min_distance=25.0,
                                n_subchannels=40)
    if name == "hfl":
        # 7 hexagonal clusters (inscribed diameter 500 m) in a 750 m disc,
        # 600 subcarriers at 30 kHz, powers 20 / 6.3 / 0.2 W, fronthaul 100x.
        model = ChannelModel(alpha=4.0, bandwidth=600 * 30e3,
                             noise_density=10.0 ** (-204.0 / 10.0), sigma2=None,
                             device_power=0.2, server_power=6.3,
                             gamma_star=1.0, density=0.0,
                             rate_factor=1.0, use_bandwidth=True)
        return HflChannel(model)
    if name == "reference":
        return MultiClusterConfig()
    if name == "reference-high":
        # same layout at threshold 100 with power scaled to keep the
        # noise-limited operating point; exercises the high-threshold regime
        base = MultiClusterConfig()
        return replace(base, gamma_star=100.0, power=base.power * 100.0)
    raise ContractViolation(f"unknown canned channel {name!r}")


HFL_CLUSTER_SPACING = 500.0   # adjacent hex centers; inscribed diameter
HFL_CELL_RADIUS = 750.0


def hfl_cluster_centers():
    """Seven hexagonal cluster centers: one at the origin, six on a ring."""
    centers = [(0.0, 0.0)]
    for i in range(6):
        phi = i * math.pi / 3.0
        centers.append((HFL_CLUSTER_SPACING * math.cos(phi),
                        HFL_CLUSTER_SPACING * math.sin(phi)))
    return np.asarray(centers)
