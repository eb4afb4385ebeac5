"""How fast the IG Riemann sum approaches the completeness target.

Runs on an untrained (randomly initialised) classifier, so it needs no data
and finishes in a few seconds. The sum of attributions should approach
C(x) - C(baseline) as the number of midpoint steps doubles.
"""

import numpy as np

from cfbaselines.attribution import IgConfig, integrated_gradients
from cfbaselines.models import Classifier

clf = Classifier(seed=0)
rng = np.random.default_rng(0)
x = rng.uniform(size=(1, 64, 64)).astype(np.float32)
baseline = np.zeros_like(x)

p = clf.predict_proba(np.stack([x, baseline]))[:, 1].astype(np.float64)
delta = p[0] - p[1]
print(f"C(x) - C(baseline) = {delta:+.6f}")
print("steps   sum(IG)      |residual|")
for steps in (1, 2, 4, 8, 16, 32, 64, 128, 256):
    total = integrated_gradients(x, baseline, clf, IgConfig(steps, target=1)).raw.sum(dtype=np.float64)
    print(f"{steps:5d}   {total:+.6f}   {abs(total - delta):.2e}")

# For a model that is linear in its input the midpoint rule is exact at any
# step count, which is what the linear-scorer tests rely on.
