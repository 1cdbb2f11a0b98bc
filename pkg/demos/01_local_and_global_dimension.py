"""Local and global intrinsic dimension on shapes whose answer we know.

The local estimator looks only at each point's two nearest neighbours, so it
sees whatever the data looks like at the finest scale. The global estimator
compares the whole distribution of geodesic distances with that of a
hypersphere and returns an integer.

A thick swiss roll separates the two: up close it is a 3-d slab, but its
geodesic distance profile is that of a 2-d sheet.

Run:  python demos/01_local_and_global_dimension.py   (about a minute)
"""

import time

from repdim import estimate_global_id, estimate_local_id
from repdim.data import generate_hypercube, generate_hypersphere, generate_swiss_roll


def show(name, cloud, global_too=True):
    t = time.perf_counter()
    loc = estimate_local_id(cloud)
    line = f"{name:<28} local {loc.dimension:5.2f}  [{loc.ci_low:.2f}, {loc.ci_high:.2f}]"
    if global_too:
        glo = estimate_global_id(cloud, d_max=10)
        line += f"   global {glo.dimension:g}  (CI {glo.ci_low:g}..{glo.ci_high:g})"
    print(f"{line}   {time.perf_counter() - t:.1f}s")


print("Uniform cubes: local ID should track the cube dimension.")
for d in (1, 2, 3, 5):
    show(f"cube [0,1]^{d}, N=3000", generate_hypercube(3000, d, seed=d), global_too=False)

print("\nSpheres: the global estimate is an integer and should be exact.")
for d in (1, 2, 3):
    show(f"sphere S^{d}, N=1500", generate_hypersphere(1500, d, seed=d))

print("\nSwiss rolls: thickness raises the local estimate, not the global one.")
show("roll, thickness 0, N=3000", generate_swiss_roll(3000, 0.0, seed=0))
show("roll, thickness 1.5, N=6000", generate_swiss_roll(6000, 1.5, seed=0))
