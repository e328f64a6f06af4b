"""Deterministic FIFO link model.

A packet of ``size`` bits occupies the link for ``size / throughput`` seconds.
Packets are serialized in order: one cannot start before the previous one has
left the sender. Propagation delay is added once per packet after it leaves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError

DEFAULT_BUDGET_S = 0.005


@dataclass(frozen=True)
class LinkConfig:
    throughput: float  # bits per second
    propagation_delay: float = 0.0
    budget: float = DEFAULT_BUDGET_S
    loss_rate: float = 0.0
    jitter: float = 0.0

    def __post_init__(self):
        if not self.throughput > 0:
            raise DomainError("throughput must be positive")
        if self.propagation_delay < 0 or self.budget < 0:
            raise DomainError("delays and budgets must be non-negative")
        if self.loss_rate or self.jitter:
            raise NotImplementedError("stochastic loss and jitter are not modeled")


@dataclass(frozen=True)
class TxRecord:
    frame_id: int
    size_bits: int
    tau: float
    send_time: float
    arrival_time: float
    within_budget: bool

    @property
    def latency(self) -> float:
        return self.arrival_time - self.send_time


def transmit_sizes(frame_ids, sizes_bytes, send_times, link: LinkConfig) -> list[TxRecord]:
    records = []
    link_free = -np.inf
    for fid, size, send in zip(frame_ids, sizes_bytes, send_times):
        bits = int(size) * 8
        tau = bits / link.throughput
        depart = max(link_free, send) + tau
        link_free = depart
        arrival = depart + link.propagation_delay
        records.append(TxRecord(int(fid), bits, tau, float(send), arrival, arrival - send <= link.budget))
    return records


def transmit(packets, link: LinkConfig) -> list[TxRecord]:
    """Send packets in list order; send times come from the pose timestamps (us)."""
    packets = list(packets)
    return transmit_sizes(
        [p.frame_id for p in packets],
        [p.size_bytes for p in packets],
        [p.pose.timestamp * 1e-6 for p in packets],
        link,
    )


@dataclass
class LatencySummary:
    frame_ids: list
    tau_ratio: list
    latency_ratio: list
    rf_pass_rate: float
    baseline_pass_rate: float

    @property
    def mean_tau_ratio(self) -> float:
        return float(np.mean(self.tau_ratio))


def compare_latency(rf_records, baseline_records) -> LatencySummary:
    rf_records, baseline_records = list(rf_records), list(baseline_records)
    if [r.frame_id for r in rf_records] != [b.frame_id for b in baseline_records]:
        raise DomainError("record streams cover different frame ids")
    if not rf_records:
        raise DomainError("no records to compare")
    tau = [r.tau / b.tau if b.tau > 0 else np.inf for r, b in zip(rf_records, baseline_records)]
    lat = [r.latency / b.latency if b.latency > 0 else np.inf for r, b in zip(rf_records, baseline_records)]
    return LatencySummary(
        [r.frame_id for r in rf_records],
        tau,
        lat,
        float(np.mean([r.within_budget for r in rf_records])),
        float(np.mean([b.within_budget for b in baseline_records])),
    )


TX_FIELDS = ["frame_id", "size_bits", "tau_s", "arrival_s", "within_budget"]


def write_tx_csv(records, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TX_FIELDS)
        for r in records:
            w.writerow([r.frame_id, r.size_bits, repr(r.tau), repr(r.arrival_time), int(r.within_budget)])
