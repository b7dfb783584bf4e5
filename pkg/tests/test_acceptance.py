"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and the logged diagnostic values (analytic-form gaps, greedy
suboptimality rates).
"""

import itertools
import math

import numpy as np
import pytest

from flwsim import codec
from flwsim.compression import (Compressor, CompressorSpec, Mask, delta_of,
                                quant_stochastic_uniform, quant_ternary,
                                random_sparsify, scaled_sign, solve_keep_probs)
from flwsim.config import parse_config
from flwsim.numerics import QuadraticLoss, RngStream, make_shards
from flwsim.runner import run_experiment
from flwsim.scheduling import (fairness_fn, p2_greedy_schedule,
                               p3_min_subchannels, p4_deadline_schedule,
                               pipeline_latency, subset_rate,
                               update_aware_schedule, water_fill)
from flwsim.training import (TrainConfig, make_devices, run_compressed_ef,
                             run_decentralized, run_fedavg, run_hfl,
                             run_pssgd, run_slowmo)
from flwsim.wireless import (canned_channel, success_prob_analytic,
                             success_prob_mc)


def _pass(n, text):
    print(f"\nACCEPTANCE {n}: PASS - {text}")


def quadratic_problem(n=40, d=20, seed=77, n_dev=4):
    gen = np.random.default_rng(seed)
    left, _ = np.linalg.qr(gen.standard_normal((n, d)))
    right, _ = np.linalg.qr(gen.standard_normal((d, d)))
    A = left * np.linspace(0.5, 1.5, d) @ right.T
    b = A @ gen.standard_normal(d)
    shards = make_shards(A, b, n_dev, "iid", RngStream(3))
    return QuadraticLoss(n, d), A, b, shards


def test_criterion_1_compressor_contracts():
    draws = 100_000

    # unbiasedness within 3 sigma of the input for the three random schemes
    g = np.array([1.0, -2.0, 0.5, 3.0])
    gen = np.random.default_rng(101)
    p, _ = solve_keep_probs(g, 1.0)
    acc = np.zeros_like(g)
    for _ in range(draws):
        acc += random_sparsify(g, 1.0, gen).to_dense()
    sigma = np.sqrt(g * g * (1.0 - p) / p / draws)
    assert np.all(np.abs(acc / draws - g) <= 3.0 * sigma + 1e-12)

    u = np.array([3.0, 4.0, -1.0])
    acc = np.zeros_like(u)
    for _ in range(draws):
        acc += quant_stochastic_uniform(u, 4, gen)
    sigma = (np.linalg.norm(u) / 4.0) / 2.0 / math.sqrt(draws)
    assert np.all(np.abs(acc / draws - u) <= 3.0 * sigma)

    t = np.array([1.0, -2.0, 0.5])
    acc = np.zeros_like(t)
    for _ in range(draws):
        acc += quant_ternary(t, gen)
    pb = np.abs(t) / 2.0
    sigma = 2.0 * np.sqrt(pb * (1.0 - pb) / draws)
    assert np.all(np.abs(acc / draws - t) <= 3.0 * sigma)

    # k-contraction at d = 128 for k in {1, 13, 64}
    d = 128
    for k in (1, 13, 64):
        bound = 1.0 - k / d
        top = Compressor(CompressorSpec("top-k", k=k), d)
        rnd = Compressor(CompressorSpec("rand-k", k=k), d)
        ratios = []
        for _ in range(1000):
            x = gen.standard_normal(d)
            sq = float(x @ x)
            assert np.sum((x - top.compress(x, gen).dense) ** 2) / sq <= bound + 1e-12
            inner = [float(np.sum((x - rnd.compress(x, gen).dense) ** 2)) / sq
                     for _ in range(8)]
            ratios.extend(inner)
        ratios = np.asarray(ratios)
        stderr = ratios.std(ddof=1) / math.sqrt(ratios.size)
        assert ratios.mean() <= bound + 3.0 * stderr

    # scaled-sign approximation identity, exact to 1e-12
    for _ in range(1000):
        x = gen.standard_normal(int(gen.integers(1, 50)))
        lhs = float(np.sum((scaled_sign(x) - x) ** 2))
        rhs = (1.0 - delta_of(x)) * float(np.sum(x * x))
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, float(np.sum(x * x)))

    _pass(1, "unbiasedness (3 schemes, 1e5 draws, 3 sigma), k-contraction "
             "(d=128, k in {1,13,64}), scaled-sign identity at 1e-12")


def test_criterion_2_codec_worked_example_and_fuzz():
    bits = np.zeros(24, dtype=np.uint8)
    bits[[0, 4, 16]] = 1
    blob = codec.encode_positions(Mask(bits), 8)
    assert blob.bit_string() == "100011000010000"
    assert len(blob.bits) == 15
    assert codec.decode_positions(blob) == Mask(bits)

    gen = np.random.default_rng(202)
    for _ in range(10_000):
        d = int(gen.integers(1, 80))
        mask = Mask((gen.random(d) < gen.random()).astype(np.uint8))
        inv = int(2 ** gen.integers(0, 5))
        blob = codec.encode_positions(mask, inv)
        assert codec.decode_positions(blob) == mask
        assert len(blob.bits) == mask.nnz * (1 + codec.bit_width(inv)) + blob.n_blocks

    _pass(2, "15-bit worked example bit-for-bit; 1e4 fuzzed masks round-trip "
             "with the exact bit-cost formula")


def test_criterion_3_reduction_lattice():
    loss, A, b, shards = quadratic_problem(d=6)
    cfg = TrainConfig(rounds=15, local_steps=1, lr=0.5, batch_size=0, seed=11)

    runs = {}
    runs["pssgd"] = run_pssgd(cfg, make_devices(shards, loss.dim), loss)
    runs["fedavg"] = run_fedavg(cfg, make_devices(shards, loss.dim), loss)
    runs["ef_id"] = run_compressed_ef(cfg, make_devices(shards, loss.dim), loss)
    runs["slowmo"] = run_slowmo(cfg, make_devices(shards, loss.dim), loss)
    runs["hfl"] = run_hfl(cfg, [make_devices(shards, loss.dim)], loss)

    assert runs["ef_id"] == runs["fedavg"]
    assert np.array_equal(runs["ef_id"].final_theta, runs["fedavg"].final_theta)
    assert runs["fedavg"] == runs["pssgd"]
    assert np.array_equal(runs["fedavg"].final_theta, runs["pssgd"].final_theta)
    assert runs["hfl"] == runs["fedavg"]
    assert np.array_equal(runs["hfl"].final_theta, runs["fedavg"].final_theta)
    assert runs["slowmo"] == runs["fedavg"]
    assert np.array_equal(runs["slowmo"].final_theta, runs["fedavg"].final_theta)

    # uniform mixing with identical shards reproduces the synchronous run
    shard = make_shards(A, b, 1, "iid", RngStream(3))[0]
    same = [shard] * 4
    sync = run_pssgd(cfg, make_devices(same, loss.dim), loss)
    gossip = run_decentralized(cfg, make_devices(same, loss.dim),
                               np.full((4, 4), 0.25), loss)
    assert gossip.column("train_loss") == sync.column("train_loss")
    for model in gossip.final_models:
        assert np.array_equal(model, sync.final_theta)

    _pass(3, "five bitwise reductions: EF(identity)=FedAvg, FedAvg(H=1,full)="
             "PSSGD, HFL(L=1,H=1)=FedAvg, SlowMo(beta=0,alpha=1)=FedAvg, "
             "gossip(J/N, identical shards)=PSSGD")


def test_criterion_4_convergence_oracles():
    loss, A, b, shards = quadratic_problem()
    theta_star, *_ = np.linalg.lstsq(A, b, rcond=None)

    cfg = TrainConfig(rounds=500, lr=0.5, batch_size=0, seed=3)
    trace = run_pssgd(cfg, make_devices(shards, loss.dim), loss)
    err = float(np.linalg.norm(trace.final_theta - theta_star))
    assert err <= 1e-6

    cfg_ef = TrainConfig(rounds=5000, lr=0.5, batch_size=0, seed=3,
                         uplink=CompressorSpec("top-k", k=2))  # phi = 0.1 of d=20
    trace_ef = run_compressed_ef(cfg_ef, make_devices(shards, loss.dim), loss)
    err_ef = float(np.linalg.norm(trace_ef.final_theta - theta_star))
    assert err_ef <= 1e-3

    _pass(4, f"PSSGD reaches {err:.1e} <= 1e-6 of the normal-equation solution "
             f"in 500 rounds; top-k(phi=0.1)+EF reaches {err_ef:.1e} <= 1e-3 "
             f"in 5000 rounds")


FIG1_BASE = """
task.kind = logistic
task.samples = 2000
task.features = 16
task.class_sep = 2.8
devices.count = 40
devices.sharding = label-skew
devices.geo_skew = true
train.loop = fedavg
train.rounds = 150
train.lr = 0.5
train.batch_size = 10
channel.canned = fig1
scheduler.k = 8
"""

FIG1_P2 = """
scheduler.r_min = 6e6
scheduler.p_max = 0.01
scheduler.alpha_fair = 1.0
"""


def test_criterion_5_fig1_bias_phenomenon():
    seeds = (1, 2, 3, 4, 5)
    acc = {}
    cov = {}
    for policy, extra in (("random", ""), ("latency_min", ""),
                          ("p2_age", FIG1_P2)):
        accs, covs = [], []
        for seed in seeds:
            cfg = parse_config(FIG1_BASE + f"scheduler.policy = {policy}\n" + extra)
            trace, _ = run_experiment(cfg, seed=seed)
            counts = trace.participation_counts(40)
            covs.append(counts.std() / counts.mean())
            accs.append(trace.records[-1].eval_metric)
        acc[policy] = float(np.mean(accs))
        cov[policy] = float(np.mean(covs))

    cov_ratio = cov["latency_min"] / cov["random"]
    gap_pts = (acc["random"] - acc["latency_min"]) * 100.0
    p2_pts = (acc["random"] - acc["p2_age"]) * 100.0
    assert cov_ratio >= 3.0
    assert gap_pts >= 3.0
    assert abs(p2_pts) <= 1.0

    _pass(5, f"participation CoV ratio {cov_ratio:.1f}x >= 3x; latency-min "
             f"accuracy {gap_pts:.1f} points below random (>= 3); age-aware "
             f"recovery within {abs(p2_pts):.2f} points (<= 1)")


def test_criterion_6_success_probability_formulas():
    cfg = canned_channel("reference")
    args = (cfg.gamma_star, cfg.alpha, cfg.density, cfg.power, cfg.sigma2)
    k, n = cfg.k_scheduled, cfg.n_devices

    rs_an = success_prob_analytic("RS", k, n, *args)
    rr_an = success_prob_analytic("RR", k, n, *args)
    pf_an = success_prob_analytic("PF", k, n, *args)

    rs = success_prob_mc("RS", cfg, 100_000, np.random.default_rng(5))
    rr = success_prob_mc("RR", cfg, 100_000, np.random.default_rng(6))
    pf = success_prob_mc("PF", cfg, 100_000, np.random.default_rng(7))

    rs_gap = abs(rs_an - rs.u_mean) / rs.u_mean
    rr_gap = abs(rr_an - rr.success_given_scheduled) / rr.success_given_scheduled
    pf_gap = (pf_an - pf.u_mean) / pf.u_mean
    assert rs_gap <= 0.05
    assert rr_gap <= 0.05
    print(f"\n  PF analytic {pf_an:.4f} vs MC {pf.u_mean:.4f}: relative gap "
          f"{pf_gap:+.1%} (logged; the printed form carries documented typos)")

    hi = canned_channel("reference-high")
    rs_h = success_prob_mc("RS", hi, 100_000, np.random.default_rng(8))
    rr_h = success_prob_mc("RR", hi, 100_000, np.random.default_rng(9))
    pf_h = success_prob_mc("PF", hi, 100_000, np.random.default_rng(10))
    rr_dev_avg = float(rr_h.u_per_device.mean())
    assert pf_h.u_mean >= rs_h.u_mean >= rr_dev_avg

    _pass(6, f"RS gap {rs_gap:.1%} and RR gap {rr_gap:.1%} within 5% of Monte "
             f"Carlo; high-threshold ordering U_PF {pf_h.u_mean:.3f} >= U_RS "
             f"{rs_h.u_mean:.3f} >= U_RR {rr_dev_avg:.3f}")


def test_criterion_7_greedy_versus_oracles():
    gen = np.random.default_rng(701)

    # P3: cardinality equals the exhaustive optimum on 200 instances
    for _ in range(200):
        n_ch = int(gen.integers(1, 6))
        gains = gen.exponential(2.0, n_ch)
        r_min = float(gen.uniform(0.1, 2.0))
        p_max = float(gen.uniform(0.5, 3.0))
        sol = p3_min_subchannels(gains, r_min, p_max)
        best = None
        for size in range(1, n_ch + 1):
            feasible = any(
                subset_rate(gains[list(s)], water_fill(gains[list(s)], p_max)) >= r_min
                for s in itertools.combinations(range(n_ch), size))
            if feasible:
                best = size
                break
        assert (sol is None) == (best is None)
        if sol is not None:
            assert len(sol[0]) == best

    # P2: feasibility on 200 instances; optimality gap logged
    p2_hits = 0
    for _ in range(200):
        n_dev = int(gen.integers(1, 5))
        n_ch = int(gen.integers(1, 5))
        gains = gen.exponential(1.5, (n_dev, n_ch))
        ages = gen.integers(0, 9, n_dev)
        decision = p2_greedy_schedule(ages, gains, n_ch, 0.8, 1.0, 1.0)
        decision.check_disjoint()
        for dev in decision.order:
            powers = decision.powers[dev]
            assert powers.sum() <= 1.0 + 1e-9
            assert subset_rate(gains[dev, list(decision.resources[dev])],
                               powers) >= 0.8 - 1e-9
        greedy_util = sum(fairness_fn(float(ages[i]), 1.0) for i in decision.order)
        best_util = 0.0
        for assignment in itertools.product(range(-1, n_dev), repeat=n_ch):
            util, ok = 0.0, True
            for dev in range(n_dev):
                mine = [c for c in range(n_ch) if assignment[c] == dev]
                if not mine:
                    continue
                if subset_rate(gains[dev, mine],
                               water_fill(gains[dev, mine], 1.0)) < 0.8:
                    ok = False
                    break
                util += fairness_fn(float(ages[dev]), 1.0)
            if ok:
                best_util = max(best_util, util)
        assert greedy_util <= best_util + 1e-9
        p2_hits += greedy_util >= best_util - 1e-9

    # P4: feasibility on 200 instances; greedy count never beats the oracle
    p4_hits = 0
    for _ in range(200):
        n_cand = int(gen.integers(1, 8))
        comm = gen.uniform(0.1, 1.0, n_cand)
        comp = gen.uniform(0.0, 1.0, n_cand)
        t_max = float(gen.uniform(0.5, 2.5))
        decision = p4_deadline_schedule(comm, comp, t_max)
        order = list(decision.order)
        assert pipeline_latency(comm[order], comp[order]) <= t_max + 1e-12
        best = 0
        for size in range(n_cand, 0, -1):
            if any(pipeline_latency(comm[list(o)], comp[list(o)]) <= t_max
                   for s in itertools.combinations(range(n_cand), size)
                   for o in itertools.permutations(s)):
                best = size
                break
        assert len(order) <= best
        p4_hits += len(order) == best

    print(f"\n  greedy-optimal rates (logged): P2 {p2_hits}/200, P4 {p4_hits}/200")
    _pass(7, "P3 cardinality matches exhaustive search on 200 instances; "
             "P2 and P4 greedy decisions feasible on 200 instances each")


def test_criterion_8_update_aware_identities():
    gen = np.random.default_rng(801)
    for _ in range(100):
        n = int(gen.integers(4, 24))
        k = int(gen.integers(1, n + 1))
        rates = gen.uniform(0.1, 3.0, n)
        norms = gen.uniform(0.0, 5.0, n)
        bc = update_aware_schedule("BC", rates, norms, None, k)
        via_kc_k = update_aware_schedule("BC-BN2", rates, norms, None, k, k)
        assert bc.order == via_kc_k.order
        bn2 = update_aware_schedule("BN2", rates, norms, None, k)
        via_kc_n = update_aware_schedule("BC-BN2", rates, norms, None, k, n)
        assert bn2.order == via_kc_n.order
        lossless = update_aware_schedule("BN2-C", rates, norms,
                                         lambda i: norms[i], k)
        assert bn2.order == lossless.order
    _pass(8, "BC-BN2 collapses to BC at k_c=k and to BN2 at k_c=n; BN2-C with "
             "an unbounded budget equals BN2 on 100 random rounds")


HFL_BASE = """
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


def test_criterion_9_hfl_latency_claim():
    flat_cfg = parse_config(HFL_BASE + "cluster.count = 1\n"
                                       "train.inter_cluster_period = 1\n")
    flat, _ = run_experiment(flat_cfg, seed=1)
    flat_latency = sum(flat.column("latency_s"))
    flat_acc = flat.records[-1].eval_metric
    speedups = []
    for period in (2, 4, 6):
        cfg = parse_config(HFL_BASE + "cluster.count = 7\n"
                                      f"train.inter_cluster_period = {period}\n")
        trace, _ = run_experiment(cfg, seed=1)
        latency = sum(trace.column("latency_s"))
        speedups.append(flat_latency / latency)
        assert flat_latency >= 2.0 * latency
        assert abs(trace.records[-1].eval_metric - flat_acc) <= 0.02
    _pass(9, "hierarchical runs (H in {2,4,6}) finish 40 rounds "
             f"{min(speedups):.1f}-{max(speedups):.1f}x faster than the "
             "single-server baseline (floor 2x) at matching accuracy")


def test_criterion_10_determinism():
    text = FIG1_BASE + "scheduler.policy = random\n"
    cfg = parse_config(text.replace("train.rounds = 150", "train.rounds = 20"))
    t1, _ = run_experiment(cfg, seed=4)
    t2, _ = run_experiment(cfg, seed=4)
    assert t1.to_text().encode() == t2.to_text().encode()
    t3, _ = run_experiment(cfg, seed=5)
    assert t1.to_text() != t3.to_text()
    _pass(10, "same config and seed give byte-identical traces; a different "
              "seed changes the trace")
