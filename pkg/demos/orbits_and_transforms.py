"""Closed magnetic orbits on a bumpy torus, and what their ray transforms see.

Run with ``python3 demos/orbits_and_transforms.py`` (about 15 s).
"""
import numpy as np

from magray.geometry import ConformalSurface, ForceField, ModeField
from magray.tensors import dmu, norm, ps_decompose, random_pair
from magray.xray import orbit_set, ray_transform_pair

L = 2 * np.pi
phi = ModeField.from_list([{"kx": 1, "re": 0.05}, {"ky": 1, "im": 0.03}], L, L)
surface = ConformalSurface(L, L, 32, 32, phi)

# an exact field, b dVol = d(alpha), so orbits can be found by minimizing the action
alpha1 = ModeField.from_list([{"ky": 1, "re": 0.1}], L, L)
alpha2 = ModeField.from_list([{"kx": 1, "ky": 1, "re": 0.05}], L, L)
field = ForceField.exact(surface, alpha1, alpha2)

orbits = orbit_set(surface, field, pmax=1)
print(f"{len(orbits)} closed orbits")
for o in orbits:
    print(f"  class ({o.homotopy.p:+d},{o.homotopy.q:+d})  period {o.period:.6f}  "
          f"action {o.action:.6f}  closure {o.closure_defect:.1e}")

rng = np.random.default_rng(0)

# potential pairs are invisible ...
a = random_pair(surface, 0, rng, kmax=3)
f = dmu(surface, field, a)
print("max |I(D a)| :", max(abs(ray_transform_pair(surface, field, o, f)) for o in orbits))

# ... while a generic pair is not, and only its solenoidal part matters
g = random_pair(surface, 1, rng, kmax=3)
H = ps_decompose(surface, field, g).H
for o in orbits[:3]:
    print(f"  I(g) = {ray_transform_pair(surface, field, o, g):+.8f}   "
          f"I(H) = {ray_transform_pair(surface, field, o, H):+.8f}")
print("|H| / |g| =", norm(surface, H) / norm(surface, g))
