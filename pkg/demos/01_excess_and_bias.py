"""From raw weekly death counts to under-reporting bias metrics.

Builds a small synthetic registry (5 baseline years + an epidemic year +
partially reported official counts), estimates excess mortality against the
baseline mean, and computes both bias metrics together with the
logit-transformed model response.

Run: python demos/01_excess_and_bias.py
"""

import numpy as np

import epibias

rng = np.random.default_rng(1)

provinces = epibias.ProvinceIndex.from_ids(["North", "Coast", "Hills", "South"])
n_t = 10

# Weekly all-cause deaths: a stable level per province plus noise. The
# epidemic year adds a wave that peaks mid-period; officials catch only a
# province-dependent fraction of the epidemic deaths.
level = np.array([220.0, 140.0, 90.0, 160.0])
wave = np.array([np.exp(-0.5 * ((j - 4.5) / 2.0) ** 2) for j in range(n_t)])
epidemic_deaths = np.outer([180.0, 60.0, 25.0, 95.0], wave)
reporting_rate = np.array([0.75, 0.55, 0.35, 0.6])[:, None]

baseline_panels = []
for year in range(2015, 2020):
    weeks = epibias.WeekIndex.from_range(year, 9, n_t)
    counts = level[:, None] + rng.normal(0, 6.0, size=(4, n_t))
    baseline_panels.append(
        epibias.MortalityPanel(provinces, weeks, np.maximum(counts, 0), year)
    )

weeks_2020 = epibias.WeekIndex.from_range(2020, 9, n_t)
allcause_2020 = epibias.MortalityPanel(
    provinces,
    weeks_2020,
    level[:, None] + epidemic_deaths + rng.normal(0, 6.0, size=(4, n_t)),
    2020,
)
official = epibias.MortalityPanel(
    provinces, weeks_2020, epidemic_deaths * reporting_rate, 2020
)
population = epibias.PopulationTable(
    provinces, np.array([850_000.0, 430_000.0, 210_000.0, 560_000.0])
)

# 1. Baseline = cell-wise mean of 2015-2019; excess = smoothed 2020 - baseline.
baseline = epibias.compute_baseline(baseline_panels)
excess = epibias.compute_excess(allcause_2020, baseline, window=3)
print("Estimated excess deaths (rows = provinces, cols = weeks):")
print(np.round(excess.dhat, 1))

# 2. Additive bias: unreported epidemic mortality per 1000 inhabitants.
additive = epibias.additive_bias(excess, official, population)
print("\nAdditive bias (per-mille unreported mortality), weekly mean per province:")
for pid, row in zip(provinces.ids, additive.values):
    print(f"  {pid:6s} {row.mean():+.4f}")

# 3. Multiplicative bias: share of excess deaths missing from official data.
#    Cells without positive excess are undefined and later treated as 0.
multiplicative = epibias.multiplicative_bias(excess, official)
print("\nMultiplicative bias (unreported share), weekly mean per province:")
for pid, row in zip(provinces.ids, multiplicative.values):
    print(f"  {pid:6s} {np.nanmean(row):.3f}   (true unreported share "
          f"{1 - reporting_rate[provinces.position(pid), 0]:.2f})")

# 4. Model response: negatives/undefined -> 0, clamp to [eps, 1-eps], logit.
response = epibias.prepare_response(multiplicative, eps=1e-4)
print(f"\nResponse vector length: {response.y.size} (province-major)")
print(f"Cells clamped during preparation: {len(response.clamped_cells)}")
for i, j, orig in response.clamped_cells[:5]:
    print(f"  ({provinces.ids[i]}, week {weeks_2020.weeks[j][1]}): "
          f"{orig if not np.isnan(orig) else 'undefined'} -> {response.prepared[i, j]:.4f}")
