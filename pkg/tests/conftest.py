import os
import warnings

import numpy as np
import pytest

from didkit.panel import PanelDataset


def pytest_configure(config):
    warnings.filterwarnings("ignore", category=UserWarning, module="didkit")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def cell_panel(means: dict, n_per_group: int = 1000, groups=(2014, "never"), periods=(2013, 2014)):
    """Binary-outcome panel whose (group, period) cell means are exactly ``means``.

    ``means[(group, period)]`` must be a multiple of ``1 / n_per_group``.
    """
    unit, time, y, group = [], [], [], []
    for g in groups:
        for i in range(n_per_group):
            for t in periods:
                ones = round(means[(g, t)] * n_per_group)
                unit.append(f"{g}-{i:05d}")
                time.append(t)
                y.append(1.0 if i < ones else 0.0)
                group.append(g)
    return PanelDataset.from_arrays(unit, time, y, group=group)


@pytest.fixture
def reference_cells():
    """Treated 0.736 -> 0.729, controls 0.737 -> 0.753 (G = 2014 vs G = never)."""
    means = {(2014, 2013): 0.736, (2014, 2014): 0.729, ("never", 2013): 0.737, ("never", 2014): 0.753}
    return cell_panel(means)


def random_2x2(rng, n_max=500, balanced=False, covariate=False):
    """Random two-group, two-period panel with arbitrary outcomes."""
    n = int(rng.integers(8, n_max + 1))
    share = rng.uniform(0.2, 0.8)
    treated = rng.random(n) < share
    treated[0], treated[1] = True, False
    unit = np.repeat(np.arange(n), 2)
    time = np.tile([2013, 2014], n)
    group = np.where(treated, 2014.0, np.inf)[unit]
    y = rng.normal(size=2 * n) * rng.uniform(0.1, 3) + rng.normal() * (time - 2013) + 2 * group.clip(0, 1)
    keep = np.ones(2 * n, dtype=bool)
    if not balanced:
        keep = rng.random(2 * n) > 0.2
        keep[:4] = True
        # both groups need records in both periods
        for g in (True, False):
            first = np.flatnonzero(treated == g)[0]
            keep[2 * first : 2 * first + 2] = True
    covs = None
    if covariate:
        x = rng.normal(size=n) + 1.5 * treated
        covs = {"x": x[unit][keep]}
    return PanelDataset.from_arrays(unit[keep], time[keep], y[keep], group=group[keep], covariates=covs)


@pytest.fixture
def threads():
    return os.cpu_count() or 1
