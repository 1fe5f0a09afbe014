import numpy as np
from scipy.integrate import simpson

ACCEPTANCE_LINES: list[str] = []


def grid_moments(logpdf, lo, hi, n=2001, coarse=4001, span=60.0):
    """Mean and variance of an unnormalized 1-D log density on an ``n``-point grid.

    The support is first narrowed by repeated coarse scans to the region where the
    density is within ``exp(-40)`` of its peak.
    """
    a = max(lo, -span) if np.isfinite(lo) else -span
    b = min(hi, span) if np.isfinite(hi) else span
    for _ in range(3):
        x = np.linspace(a, b, coarse)
        lp = logpdf(x)
        keep = np.flatnonzero(lp >= lp.max() - 40.0)
        step = x[1] - x[0]
        a, b = max(a, x[keep[0]] - step), min(b, x[keep[-1]] + step)
    g = np.linspace(a, b, n)
    lp = logpdf(g)
    p = np.exp(lp - lp.max())
    Z = simpson(p, x=g)
    mean = simpson(g * p, x=g) / Z
    var = simpson((g - mean) ** 2 * p, x=g) / Z
    return float(mean), float(var)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
