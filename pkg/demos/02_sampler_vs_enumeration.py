"""Compare MCMC partition frequencies with the exact posterior on six points.

Six points give 203 partitions, few enough to enumerate.  Each sampler's
visit frequencies should match the exact probabilities.
Run: python demos/02_sampler_vs_enumeration.py
"""

import numpy as np

from mfm.models import DiagonalGaussianModel
from mfm.partitions import Geometric, PriorConfig
from mfm.processes import rng_stream
from mfm.samplers import SamplerSchedule, run_chain
from mfm.summaries import exact_posterior_enum

x = np.array([-4.0, -3.5, -3.0, 0.0, 3.5, 4.0])
model = DiagonalGaussianModel(1, a=3.0, b=0.5, c=0.02)
prior = PriorConfig.mfm(Geometric(0.1))
labels, p = exact_posterior_enum(x, model, prior)
index = {tuple(row): i for i, row in enumerate(labels.tolist())}


def canonical(z):
    seen = {}
    return tuple(seen.setdefault(int(c), len(seen)) for c in z)


def frequencies(sm_moves, gibbs_scans, iters=20_000):
    counts = np.zeros(len(labels))

    def tally(it, state):
        counts[index[canonical(state.z)]] += 1

    sched = SamplerSchedule(sm_moves=sm_moves, gibbs_scans=gibbs_scans, iters=iters, thin_full=iters)
    run_chain(x, model, prior, sched, rng_stream(1), progress=tally)
    return counts / counts.sum()


runs = {"Gibbs": frequencies(0, 1), "split-merge": frequencies(1, 0), "both": frequencies(1, 1)}
top = np.argsort(p)[::-1][:6]
print("partition        exact   " + "  ".join(f"{k:>11s}" for k in runs))
for i in top:
    print(f"{''.join(map(str, labels[i]))}           {p[i]:.4f}   " + "  ".join(f"{f[i]:11.4f}" for f in runs.values()))
for k, f in runs.items():
    print(f"total variation, {k}: {0.5 * np.abs(f - p).sum():.4f}")
