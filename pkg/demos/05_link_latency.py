"""
Link latency
============

Push key frames and residual packets through a 50 Mbit/s FIFO link and count
how many arrive within a 5 ms budget.
"""

from rfcodec.netsim import LinkConfig, compare_latency, transmit_sizes

link = LinkConfig(throughput=50e6, propagation_delay=0.0, budget=0.005)

# %% Two single packets: one fits the budget, one does not.
for size in (25_000, 80_000):
    (r,) = transmit_sizes([0], [size], [0.0], link)
    print(f"{size:6d} B -> {r.tau * 1e3:.3f} ms on the wire, within budget: {r.within_budget}")

# %% A 30 fps stream of 60 KB key frames against 3 KB residuals.
ids = list(range(30))
sends = [k / 30 for k in ids]
baseline = transmit_sizes(ids, [60_000] * 30, sends, link)
rf = transmit_sizes(ids, [3_000] * 30, sends, link)
summary = compare_latency(rf, baseline)
print(f"mean tau ratio {summary.mean_tau_ratio:.3f}; pass rate rf {summary.rf_pass_rate:.0%}, baseline {summary.baseline_pass_rate:.0%}")

# %% A burst of frames sent at once queues behind one another.
burst = transmit_sizes(range(5), [20_000] * 5, [0.0] * 5, link)
print("burst arrival times (ms):", [round(r.arrival_time * 1e3, 2) for r in burst])
