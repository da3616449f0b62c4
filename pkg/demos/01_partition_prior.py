"""How the MFM and the DPM spread prior mass over the number of clusters.

Draws partitions of n items from both restaurant processes, compares the
MFM draws with the exact p(t) = V_n(t) S_gamma(n, t), and shows p(k | t).
Run: python demos/01_partition_prior.py
"""

import numpy as np

from mfm.partitions import Geometric, PriorConfig, build_vn_table, gen_stirling_log_row, k_given_t_pmf
from mfm.processes import rng_stream, sample_prior_partition

n = 100
mfm = PriorConfig.mfm(Geometric(0.1), gamma=1.0)
dpm = PriorConfig.dpm(1.0)
table = build_vn_table(n, n, mfm)

exact = np.exp(table.log_v[0, : n + 1] + gen_stirling_log_row(n, mfm.gamma))
draws = {}
for name, prior in (("MFM", mfm), ("DPM", dpm)):
    labels = sample_prior_partition(n, prior, rng=rng_stream(0), size=20_000)
    draws[name] = np.bincount(labels.max(axis=1) + 1, minlength=n + 1) / len(labels)

print(f"prior p(t) for n = {n}")
print("  t   MFM exact  MFM draws  DPM draws")
for t in range(1, 16):
    print(f"{t:3d}  {exact[t]:9.4f}  {draws['MFM'][t]:9.4f}  {draws['DPM'][t]:9.4f}")

print("\nMFM p(k | t) for t = 3: the extra components are ones no item was seated at")
pk = k_given_t_pmf(3, n, mfm, table, kmax=8)
print("  " + "  ".join(f"k={k}: {p:.4f}" for k, p in enumerate(pk) if k >= 3))
