"""Experiment configuration: a flat ``dotted.key = value`` text format.

Grammar: one ``key = value`` assignment per line; ``#`` starts a comment;
blank lines are ignored.  Unknown keys, malformed values, range violations,
and unresolved canned names are all collected (with line numbers) and raised
together as one :class:`flwsim.errors.ConfigError`, so a bad file reports
every problem at once.  Parsing is total: it either yields a fully defaulted
config or the complete error list, never partial state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigError

_LOOPS = ("pssgd", "fedavg", "compressed_ef", "signsgd", "sync_sparse",
          "slowmo", "decentralized", "hfl")
_POLICIES = ("full", "random", "round_robin", "pf", "latency_min",
             "p2_age", "p4_deadline", "bc", "bn2", "bc_bn2", "bn2_c")
_SCHEMES = ("identity", "random-p", "top-k", "rand-k", "r-top-k", "sync-mask",
            "stochastic-uniform", "ternary", "sign", "thresholded-1bit",
            "scaled-sign", "block-scaled-sign")
_CANNED = ("none", "fig1", "hfl", "reference")

# name -> (type, default, constraint)
# types: int, float, bool, str, ints (comma-separated integers)
# constraint: tuple of allowed strings, or (lo, hi) numeric bounds (inclusive,
# None = unbounded)
_SCHEMA = {
    "task.kind": ("str", "logistic", ("quadratic", "logistic", "mlp")),
    "task.samples": ("int", 200, (2, None)),
    "task.features": ("int", 16, (1, None)),
    "task.hidden": ("int", 8, (1, 32)),
    "task.class_sep": ("float", 2.8, (0.0, None)),
    "task.noise": ("float", 0.1, (0.0, None)),
    "devices.count": ("int", 4, (1, None)),
    "devices.sharding": ("str", "iid", ("iid", "label-skew")),
    "devices.geo_skew": ("bool", False, None),
    "train.loop": ("str", "fedavg", _LOOPS),
    "train.rounds": ("int", 50, (1, None)),
    "train.local_steps": ("int", 1, (1, None)),
    "train.lr": ("float", 0.1, (0.0, None)),
    "train.lr_decay_rounds": ("ints", (), None),
    "train.lr_decay_factor": ("float", 10.0, (1.0, None)),
    "train.batch_size": ("int", 1, (0, None)),
    "train.local_momentum": ("float", 0.0, (0.0, 0.999999)),
    "train.slowmo_alpha": ("float", 1.0, (0.0, None)),
    "train.slowmo_beta": ("float", 0.0, (0.0, 0.999999)),
    "train.sync_phi": ("float", 1.0, (0.0, 1.0)),
    "train.sync_tau_max": ("int", 1, (1, None)),
    "train.inter_cluster_period": ("int", 1, (1, None)),
    "compress.uplink.scheme": ("str", "identity", _SCHEMES),
    "compress.uplink.k": ("int", 0, (0, None)),
    "compress.uplink.r": ("int", 0, (0, None)),
    "compress.uplink.levels": ("int", 0, (0, None)),
    "compress.uplink.epsilon": ("float", 0.0, (0.0, None)),
    "compress.uplink.phi": ("float", 0.0, (0.0, 1.0)),
    "compress.uplink.tau_max": ("int", 0, (0, None)),
    "compress.uplink.threshold": ("float", 0.0, None),
    "compress.uplink.block_size": ("int", 0, (0, None)),
    "compress.uplink.rescale": ("bool", False, None),
    "compress.downlink.scheme": ("str", "none", ("none",) + _SCHEMES),
    "compress.downlink.k": ("int", 0, (0, None)),
    "compress.downlink.levels": ("int", 0, (0, None)),
    "compress.downlink.phi": ("float", 0.0, (0.0, 1.0)),
    "compress.downlink.tau_max": ("int", 0, (0, None)),
    "topology.kind": ("str", "complete", ("complete", "ring", "path", "edgeless", "file")),
    "topology.edge_file": ("str", "", None),
    "cluster.count": ("int", 1, (1, 7)),
    "channel.canned": ("str", "none", _CANNED),
    "scheduler.policy": ("str", "full", _POLICIES),
    "scheduler.k": ("int", 0, (0, None)),
    "scheduler.k_c": ("int", 0, (0, None)),
    "scheduler.alpha_fair": ("float", 1.0, (0.0, None)),
    "scheduler.r_min": ("float", 0.0, (0.0, None)),
    "scheduler.p_max": ("float", 0.0, (0.0, None)),
    "scheduler.t_max": ("float", 0.0, (0.0, None)),
    "scheduler.budget_bits": ("int", 0, (0, None)),
    "eval.fraction": ("float", 0.2, (0.0, 0.9)),
    "seed": ("int", 0, None),
    "out": ("str", "traces", None),
}

_NEEDS_K = ("random", "round_robin", "pf", "latency_min", "bc", "bn2", "bc_bn2", "bn2_c")


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated, fully defaulted experiment description."""

    values: tuple  # sorted (key, value) pairs; hashable and order-stable

    def get(self, key):
        return dict(self.values)[key]

    def with_values(self, **overrides) -> "ExperimentConfig":
        mapping = {k.replace("__", "."): v for k, v in overrides.items()}
        merged = dict(self.values)
        for key, value in mapping.items():
            if key not in _SCHEMA:
                raise ConfigError([(0, f"unknown key {key!r}")])
            merged[key] = value
        return ExperimentConfig(tuple(sorted(merged.items())))

    def serialize(self) -> str:
        lines = []
        for key, value in self.values:
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, tuple):
                text = ",".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()


def _parse_value(kind, raw):
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind == "ints":
        raw = raw.strip()
        return tuple(int(p) for p in raw.split(",") if p != "") if raw else ()
    return raw


def _check_range(key, value, constraint):
    if constraint is None:
        return None
    if isinstance(constraint, tuple) and constraint and isinstance(constraint[0], str):
        if value not in constraint:
            if key == "channel.canned":
                return f"{key}: unresolved canned name {value!r}"
            return f"{key}: {value!r} is not one of {constraint}"
        return None
    lo, hi = constraint
    if lo is not None and value < lo:
        return f"{key}: {value} is below the minimum {lo}"
    if hi is not None and value > hi:
        return f"{key}: {value} is above the maximum {hi}"
    return None


def _cross_checks(values):
    errors = []
    policy = values["scheduler.policy"]
    loop = values["train.loop"]
    if policy in _NEEDS_K and values["scheduler.k"] < 1:
        errors.append((0, f"scheduler.k is required by scheduler.policy = {policy}"))
    if policy == "bc_bn2" and values["scheduler.k_c"] < 1:
        errors.append((0, "scheduler.k_c is required by scheduler.policy = bc_bn2"))
    if policy == "p2_age" and values["scheduler.r_min"] <= 0:
        errors.append((0, "scheduler.r_min is required by scheduler.policy = p2_age"))
    if policy == "p2_age" and values["scheduler.p_max"] <= 0:
        errors.append((0, "scheduler.p_max is required by scheduler.policy = p2_age"))
    if policy == "p4_deadline" and values["scheduler.t_max"] <= 0:
        errors.append((0, "scheduler.t_max is required by scheduler.policy = p4_deadline"))
    if loop == "pssgd" and values["train.local_steps"] != 1:
        errors.append((0, "train.loop = pssgd requires train.local_steps = 1"))
    if loop in ("pssgd", "fedavg", "slowmo") and values["compress.uplink.scheme"] != "identity":
        errors.append((0, f"train.loop = {loop} sends uncompressed updates; "
                          "use train.loop = compressed_ef"))
    if loop != "compressed_ef" and values["compress.downlink.scheme"] != "none":
        errors.append((0, "downlink compression is only available with compressed_ef"))
    if values["train.lr"] <= 0:
        errors.append((0, "train.lr must be positive"))
    if loop == "sync_sparse" and values["train.sync_phi"] <= 0:
        errors.append((0, "train.loop = sync_sparse requires train.sync_phi > 0"))
    if values["topology.kind"] == "file" and not values["topology.edge_file"]:
        errors.append((0, "topology.kind = file requires topology.edge_file"))
    if values["devices.geo_skew"] and values["channel.canned"] == "none":
        errors.append((0, "devices.geo_skew needs a channel (set channel.canned)"))
    channel_bound = ("latency_min", "p2_age", "pf", "p4_deadline", "bc", "bc_bn2")
    if policy in channel_bound and values["channel.canned"] == "none":
        errors.append((0, f"scheduler.policy = {policy} needs a channel "
                          "(set channel.canned)"))
    if loop == "hfl" and values["cluster.count"] > 1 and values["channel.canned"] not in ("hfl", "none"):
        errors.append((0, "multi-cluster runs take channel.canned = hfl"))
    return errors


def parse_config(text: str) -> ExperimentConfig:
    """Parse and fully validate a config; raises ConfigError with every problem."""
    values = {key: default for key, (_, default, _) in _SCHEMA.items()}
    errors = []
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            errors.append((ln, f"expected 'key = value', got {stripped!r}"))
            continue
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _SCHEMA:
            errors.append((ln, f"unknown key {key!r}"))
            continue
        kind, _, constraint = _SCHEMA[key]
        try:
            value = _parse_value(kind, raw)
        except ValueError:
            errors.append((ln, f"{key}: cannot parse {raw!r} as {kind}"))
            continue
        problem = _check_range(key, value, constraint)
        if problem:
            errors.append((ln, problem))
            continue
        values[key] = value
    if not errors:
        errors.extend(_cross_checks(values))
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(tuple(sorted(values.items())))


def default_config() -> ExperimentConfig:
    return parse_config("")
