"""Expected third derivative of the logistic loss under Gaussian features.

E[gamma(<x,theta>) x (x) x (x) x] = a(t) theta^{(x)3} + b(t) sym(I (x) theta), t = ||theta||.
The raw moments E[Z^3 gamma(tZ)] and E[Z gamma(tZ)] are negative, b(t) is
negative, and a(t) turns out positive; what stays negative is the
contraction along theta.
"""
import numpy as np

import dropkit as dk
from dropkit.certificate import population_third_moments

print("   t      a(t)       b(t)    E[Z^3 g]   E[Z g]")
for t in (0.25, 0.5, 1.0, 2.0, 4.0):
    a, b = dk.population_third_coeffs(t)
    a_star, b_star = population_third_moments(t)
    print(f"{t:5.2f} {a:+.5f} {b:+.5f} {a_star:+.5f} {b_star:+.5f}")

# Monte Carlo check of the closed form against an empirical third-derivative tensor
rng = np.random.default_rng(0)
theta = np.array([1.0, 0.0, 0.0])
v = np.array([0.6, 0.8, 0.0])
m = 1_000_000
data = dk.Dataset(rng.standard_normal((m, 3)), np.zeros(m))
empirical = dk.third_directional(data, dk.LossSpec("logistic"), theta, v) @ v / m
closed = dk.population_third_contraction(theta, v)
print("\nT(v, v, .) empirical", np.round(empirical, 5), " closed form", np.round(closed, 5))
print("<T(v, v, .), theta> =", float(closed @ theta))
