"""Walk through the variance machinery: value, gradient, and the linear
cuts that enforce a variance cap inside a MILP.

Usage: python demos/variance_cuts.py
"""

from agrochain import LossPoint, perspective_cut, variance_gradient, variance_value
from agrochain.risk import variance_gradient_pooled, week_variances

rho = (0.35, 0.15, 0.5)

# A reference point: week 1 loses 5 units in scenarios 1 and 3, week 2
# loses nothing. Hand arithmetic: the week-1 scenario mean is
# 0.35*5 + 0.5*5 = 4.25, the week-1 second moment is 0.85*25 = 21.25,
# so week-1 variance is 21.25 - 4.25^2 = 3.1875 and the two-week average
# is 1.59375.
point = LossPoint(((5.0, 0.0, 5.0), (0.0, 0.0, 0.0)))
var = variance_value(point, rho)
print(f"variance at reference point: {var}  (expected 1.59375, "
      f"exact={var == 1.59375})")
print(f"per-week variances: {week_variances(point, rho)}")

grad = variance_gradient(point, rho)
print(f"\ngradient (per-week form), entry (week 1, scenario 1): {grad[0, 0]}")
print("full gradient:")
print(grad)

# The per-week form differs from differentiating a pooled mean-of-all-cells
# estimator once two or more weeks carry losses; the cap is on the mean of
# per-week variances, so the per-week gradient is the correct one.
two_lossy = LossPoint(((5.0, 0.0, 5.0), (1.0, 2.0, 3.0)))
per_week = variance_gradient(two_lossy, rho)[0, 0]
pooled = variance_gradient_pooled(two_lossy, rho)[0, 0]
print(f"\nwith two lossy weeks, entry (week 1, scenario 1): "
      f"per-week {per_week:.4f} vs pooled {pooled:.4f} -> pooled is wrong here")

# Cuts. At any generating point, evaluating the cut there gives exactly
# Var(point) - cap, so points over the cap are always separated.
cap = 1.0
gen = two_lossy
gen_var = variance_value(gen, rho)
for style in ("perspective", "plain"):
    cut = perspective_cut(gen, rho, cap, style=style)[0]
    lhs = cut.value_at(gen)
    print(f"\n{style} cut: lhs at generating point = {lhs:.6f}, "
          f"rhs = {cut.rhs:.6f}")
    print(f"  lhs - rhs = {lhs - cut.rhs:.10f}  vs  Var - cap = "
          f"{gen_var - cap:.10f}")
    print(f"  violated at generating point: {lhs > cut.rhs}")

# The perspective style scales each week's offset by that week's loss
# indicator delta. A solution with delta_t = 0 has zero losses in week t,
# and for all such model-consistent (losses, delta) pairs the cut holds
# whenever the variance is under the cap:
cut = perspective_cut(gen, rho, cap, style="perspective")[0]
under = LossPoint(((2.0, 0.0, 2.0), (0.0, 0.0, 0.0)))   # Var 0.255 <= cap
over = LossPoint(((5.0, 0.0, 5.0), (0.0, 0.0, 0.0)))    # Var 1.59375 > cap
for name, pt in (("under-cap", under), ("over-cap", over)):
    lhs = cut.value_at(pt, [1, 0])  # week 2 switched off, losses zeroed
    print(f"{name} point with delta=[1,0]: lhs {lhs:.6f} vs rhs {cut.rhs:g} "
          f"-> {'cut off' if lhs > cut.rhs else 'kept'} "
          f"(variance {variance_value(pt, rho):.6g})")

# A flat point (equal losses in every scenario) has zero variance and a
# zero gradient, so its cut can never separate anything and is dropped.
flat = LossPoint(((3.0, 3.0, 3.0), (3.0, 3.0, 3.0)))
trivial = perspective_cut(flat, rho, cap)[0]
print(f"\nflat point: variance={variance_value(flat, rho)}, "
      f"cut trivial={trivial.is_trivial}")
