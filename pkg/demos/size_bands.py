"""
Size bands that split the offered load evenly
=============================================

The size-banded policy needs n-1 size thresholds m_1 < ... < m_{n-1} chosen
so that each of the n bands carries an equal slice of the offered load, plus
spill limits c_i = m_i / sqrt(1 - rho). Band edges come from inverting the
partial-load function of the size law, so heavy tails push the upper
thresholds far out while most tasks stay in the bottom bands.
"""

from dispatchsim.analysis import WeibullDistribution, band_loads, card_thresholds
from dispatchsim.workload import fit_weibull

n, rho = 4, 0.8

for cov in (1.0, 10.0):
    dist = WeibullDistribution(fit_weibull(1.0, cov))
    th = card_thresholds(dist, n, rho)
    print(f"\ncov={cov:g}: thresholds m={tuple(round(m, 4) for m in th.m)}")
    print(f"         spill limits c={tuple(round(c, 4) for c in th.c)}")

    # each band should hold 1/n of the load; the half-band below m_1 holds 1/(2n)
    loads = band_loads(dist, th)
    print(f"{'band':>6} {'upper edge':>12} {'load share':>11}")
    for i, load in enumerate(loads):
        edge = f"{th.m[i]:.4f}" if i < len(th.m) else "inf"
        print(f"{i:>6} {edge:>12} {load:>11.4f}")

    # what fraction of tasks (not load) falls below each threshold
    fractions = [1.0 - dist.ccdf(m) for m in th.m]
    print("task fraction below each m:", [round(f, 4) for f in fractions])
