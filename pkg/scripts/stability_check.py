"""Monitored functional at the recommended steps, and the empirical blow-up step of the partially explicit scheme.

    python3 scripts/stability_check.py [contrast]
"""

import sys

import numpy as np

from cemsplit.complement import compute_constants, recommend_tau
from cemsplit.experiments import ExperimentConfig, build_spaces
from cemsplit.splitting import SchemeConfig, init_split, reduce, run


def blowup_step(red, s0, lo=1e-6, hi=1e-3, steps=1000, iters=12):
    for _ in range(iters):
        mid = np.sqrt(lo * hi)
        lo, hi = (lo, mid) if run(SchemeConfig("partial_explicit", mid, steps), red, s0).blowup else (mid, hi)
    return lo, hi


def main(argv):
    contrast = float(argv[0]) if argv else 1e8
    sp = build_spaces(ExperimentConfig(streak_value=contrast))
    mesh = sp.system.mesh
    u0 = np.random.default_rng(0).standard_normal(mesh.node_count)
    u0[mesh.boundary] = 0.0
    for choice, V2 in sp.V2.items():
        rep = compute_constants(sp.system, sp.decomp, sp.V1, V2)
        red = reduce(sp.system, sp.V1, V2)
        s0 = init_split(u0, red)
        print(f"{choice}: gamma={rep.gamma:.4f} beta={rep.beta:.4f} supG_V2={rep.supG_V2:.4e}")
        for mode in ("thm32", "thm33"):
            tau = recommend_tau(rep, mode=mode)
            E = np.array(run(SchemeConfig("partial_explicit", tau, 500), red, s0, gamma=rep.gamma).monitor)
            print(f"  {mode}: tau={tau:.3e}  max relative change per step {np.max(np.diff(E) / E[:-1]):.3e}")
        lo, hi = blowup_step(red, s0)
        naive = 2.0 / (rep.supG_V2 * sp.decomp.N**2)
        print(f"  empirical blow-up step in [{lo:.4e}, {hi:.4e}]; 2/(supG_V2 H^-2) = {naive:.4e}; "
              f"thm32 step is {lo / rep.tau_thm32:.0f}x smaller")


if __name__ == "__main__":
    main(sys.argv[1:])
