"""Why a zero baseline fails when missing signal is the finding.

Usage:
    python demos/missingness_walkthrough.py [RUN_DIR]

RUN_DIR is a finished ``cfbaselines run`` output directory. Without it a small
band dataset and quick models are trained on the spot (about a minute), so the
numbers are rougher than those of the full reference configuration.
"""

import sys
from pathlib import Path

import numpy as np

from cfbaselines.attribution import BaselineContext, BaselineSpec, IgConfig, attribute
from cfbaselines.counterfactual import find_counterfactual
from cfbaselines.metrics import fpar, roc_auc, spatial_spread
from cfbaselines.models import TrainConfig, load_checkpoint, train_classifier, train_vae
from cfbaselines.render import write_strip
from cfbaselines.synth import PATHOLOGICAL, generate_band_dataset, load_dataset, split_dataset

if len(sys.argv) > 1:
    run = Path(sys.argv[1])
    data = load_dataset(run / "data")
    clf = load_checkpoint(run / "classifier" / "checkpoint")
    vae = load_checkpoint(run / "vae" / "checkpoint")
else:
    data = split_dataset(generate_band_dataset(200, seed=3), (0.6, 0.1, 0.3), seed=3)
    clf, _ = train_classifier(data, TrainConfig(lr=3e-3, epochs=15, batch_size=32, seed=1))
    vae, _ = train_vae(data, TrainConfig(lr=1e-3, epochs=15, batch_size=32, beta=2.0, seed=2), latent_dim=16)

# A pathological band: the stripe has a vertical gap of zero intensity.
test = data.indices("test")
sid = int(test[data.labels[test] == PATHOLOGICAL][0])
x, mask = data.images[sid], data.masks[sid].astype(bool)
print(f"sample {sid}: P(pathological) = {clf.predict_proba(x[None])[0, PATHOLOGICAL]:.3f}")

# The counterfactual search walks the VAE latent space until the classifier
# calls the decoded image normal. The gap should be filled in.
res = find_counterfactual(x, clf, vae)
print(f"counterfactual: converged={res.converged} after {res.iterations_used} steps, "
      f"P(normal) = {res.final_confidence:.3f}")
print(f"mean intensity in the gap: input {x[0][mask].mean():.3f} -> counterfactual {res.x_star[0][mask].mean():.3f}")

# Pixels in the gap are already zero, so (x - 0) vanishes there and IG from a
# black image cannot assign them anything. The counterfactual baseline differs
# from x exactly where the evidence is.
ctx = BaselineContext(data.images[data.indices("train")], clf, vae, cf_result=res)
maps = {}
for variant in ("zeros", "uniform", "blurred", "cf"):
    amap = attribute(x, BaselineSpec(variant, seed=0), ctx, clf, IgConfig(64), target=PATHOLOGICAL)
    maps[variant] = amap.normalized
    print(f"{variant:8s} ROC-AUC {roc_auc(amap.normalized, mask):.3f}  FPAR {fpar(amap.normalized, mask):.3f}  "
          f"spread {spatial_spread(amap.normalized):.3f}")

out = Path("missingness_walkthrough.pgm")
write_strip(out, [x, res.x_star, mask.astype(float)] + [maps[v] for v in ("zeros", "cf")])
print(f"wrote {out}: input | counterfactual | gap mask | IG(zeros) | IG(CF)")
