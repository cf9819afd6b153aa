"""Distribution of the layer imbalance under Xavier-Gaussian initialization."""
import math

import numpy as np

from ._core import ExperimentResult, Table, check, trial_rng


def exp_q_init_distribution(m, h, n, samples=1000, seed=0, bins=40):
    """U ~ N(0, 1/h), V ~ N(0, 1/n); Q = Tr[U^T U - V V^T] has mean m - h.

    The halved convention is reported next to it; the verdict uses the trace.
    """
    m, h, n, samples = int(m), int(h), int(n), int(samples)
    if samples < 100:
        raise ValueError("need at least 100 samples")
    if min(m, h, n) < 1:
        raise ValueError("dimensions must be >= 1")
    rng = trial_rng(seed, 0)
    q = np.empty(samples)
    for s in range(samples):
        U = rng.standard_normal((m, h)) / math.sqrt(h)
        V = rng.standard_normal((h, n)) / math.sqrt(n)
        q[s] = float(np.sum(U * U) - np.sum(V * V))

    summary = Table(["convention", "mean", "std_error", "expected", "z_score"])
    for name, factor in (("trace", 1.0), ("half_trace", 0.5)):
        vals = factor * q
        se = float(np.std(vals, ddof=1)) / math.sqrt(samples)
        expected = factor * (m - h)
        summary.rows.append([name, float(vals.mean()), se, expected,
                             (float(vals.mean()) - expected) / se])

    counts, edges = np.histogram(q, bins=bins)
    hist = Table(["bin_lo", "bin_hi", "count"],
                 [[float(edges[i]), float(edges[i + 1]), int(counts[i])] for i in range(bins)])
    draws = Table(["sample", "q_trace", "q_half_trace"],
                  [[s, float(q[s]), 0.5 * float(q[s])] for s in range(samples)])

    z = abs(summary.rows[0][4])
    verdicts = [check("mean_within_4_se", z, 4.0, "<=", "summary")]
    config = {"m": m, "h": h, "n": n, "samples": samples, "seed": int(seed), "bins": int(bins)}
    return ExperimentResult("q-init", {"summary": summary, "histogram": hist, "samples": draws},
                            verdicts, config)
