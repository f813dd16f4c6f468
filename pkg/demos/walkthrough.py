"""Staggered adoption, end to end.

Simulates a panel where three cohorts adopt a policy in successive years
and the effect grows with time since adoption, then:

1. estimates every group-time ATT with not-yet-treated controls,
2. aggregates them into an event-time curve and an overall ATT,
3. attaches cluster-bootstrap percentile intervals,
4. runs the joint pre-trend test on the placebo estimates.

Run with ``python3 demos/walkthrough.py``.
"""

from didkit.did import EstimatorConfig
from didkit.pipeline import run_estimate
from didkit.simgen import ByEventTime, DgpConfig, generate_panel

dgp = DgpConfig(
    n_units=2000,
    periods=(2012, 2017),
    group_shares={2014: 0.25, 2015: 0.25, 2016: 0.25, "never": 0.25},
    effect=ByEventTime({0: -0.05, 1: -0.10, 2: -0.15, 3: -0.20}),
    time_effects={2013: 0.02, 2014: 0.03, 2015: 0.01, 2016: 0.04, 2017: 0.05},
    noise_sd=0.3,
    seed=2024,
)
data, truth = generate_panel(dgp)
print(f"{data.n_units} units, periods {data.periods[0]}-{data.periods[-1]}, cohorts {data.treated_groups}\n")

result = run_estimate(data, EstimatorConfig(), reps=499, seed=7, include_pre=True, pretest=True)

print("group-time ATTs (post-treatment)")
print(f"{'g':>5} {'t':>5} {'w':>3} {'estimate':>9} {'95% CI':>20} {'truth':>7}")
for a in result.atts:
    if a.w < 0:
        continue
    ci = f"[{a.ci_low:+.3f}, {a.ci_high:+.3f}]"
    print(f"{a.g:>5} {a.t:>5} {a.w:>3} {a.estimate:>+9.3f} {ci:>20} {truth.att[(a.g, a.t)]:>+7.3f}")

agg = result.aggregation
print("\nevent-time curve (groups weighted by size)")
for w, e in sorted(agg.event_curve.items()):
    target = truth.event_curve.get(w, 0.0)
    flag = " (partial)" if e.partial else ""
    print(f"  w={w:+d}: {e.estimate:+.3f} [{e.ci_low:+.3f}, {e.ci_high:+.3f}]  truth {target:+.3f}{flag}")

lo, hi = agg.overall_ci
print(f"\noverall ATT {agg.overall:+.3f} [{lo:+.3f}, {hi:+.3f}]  truth {truth.overall:+.3f}")

wald = result.pretest.wald
print(f"pre-trend Wald test: chi2({wald.df}) = {wald.statistic:.2f}, p = {wald.p_value:.3f}")
