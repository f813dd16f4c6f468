"""Why a single two-way fixed effects coefficient can mislead.

With effects that grow after adoption, early adopters serve as controls for
late adopters after their own effects have kicked in. The TWFE coefficient
then mixes in negatively weighted comparisons and can land far from any
average of the true effects, even on the wrong side of zero. Aggregating
clean group-time comparisons does not have this problem.

Without never-treated units the latest cohort has no clean controls once
it adopts, so only some (g, t) pairs are identified; the comparison below
averages the truth over the same event times.

Run with ``python3 demos/twfe_bias.py``.
"""

import warnings

from didkit.did import aggregate_event, att_gt_all, group_sizes, twfe_estimate
from didkit.simgen import ByEventTime, Constant, DgpConfig, generate_panel

scenarios = {
    "constant effect": Constant(0.5),
    "growing effect": ByEventTime({0: 0.0, 1: 1.0, 2: 2.0, 3: 3.0, 4: 4.0}),
}

for label, effect in scenarios.items():
    dgp = DgpConfig(
        n_units=3000,
        periods=(2012, 2017),
        group_shares={2013: 0.6, 2016: 0.4},  # no never-treated units
        effect=effect,
        noise_sd=0.2,
        seed=11,
    )
    data, truth = generate_panel(dgp)
    twfe = twfe_estimate(data)
    with warnings.catch_warnings(record=True) as skipped:
        warnings.simplefilter("always")
        agg = aggregate_event(att_gt_all(data), group_sizes(data))
    identified = [w for w in agg.event_curve if w >= 0]
    target = sum(truth.event_curve[w] for w in identified) / len(identified)
    print(label)
    print(f"  {len(skipped)} (g, t) pairs lack clean controls; identified event times {identified}")
    print(f"  true ATT over those     {target:+.3f}")
    print(f"  group-time aggregation  {agg.overall:+.3f}")
    print(f"  TWFE coefficient        {twfe.coefficient:+.3f} [{twfe.ci_low:+.3f}, {twfe.ci_high:+.3f}]")
    print()

print(f"caveat attached to every TWFE result: {twfe.caveat}")
