"""
The three continuity losses
===========================

Evaluate the justification, localization and missing-section approximation
losses on hand-made inputs, compare them with the scalar reference loops and
look at how the approximation loss reacts to its embeddings.
"""

# +
import math

import torch

from continuity_ssl import oracles
from continuity_ssl.losses import (
    LossConfig,
    loss_approximation,
    loss_justification,
    loss_localization,
)

torch.manual_seed(0)

# -
# Uniform logits give the entropy of the uniform distribution.
z = torch.zeros(4, 2, dtype=torch.float64)
print("L_J uniform", float(loss_justification(z, z)), "2 ln 2 =", 2 * math.log(2))
logits = torch.zeros(4, 15, dtype=torch.float64)
print("L_L uniform", float(loss_localization(logits, torch.tensor([0, 3, 7, 14]))),
      "ln 15 =", math.log(15))

# -
# Random batch against the scalar loops.
cfg = LossConfig()
e_d, e_m, e_c = (torch.randn(8, 128, dtype=torch.float64) for _ in range(3))
batched = [float(v) for v in loss_approximation(e_d, e_m, e_c, cfg)]
scalar = oracles.approximation(e_d.tolist(), e_m.tolist(), e_c.tolist(),
                               cfg.omega, cfg.gamma, cfg.tau)
print("L_E batched", batched)
print("L_E scalar ", list(scalar))

# -
# Pulling e_d towards its missing section lowers the triplet term. The
# contrastive term takes the continuous clip of the same video as its
# positive, so it grows as e_d drifts away from e_c.
for alpha in (0.0, 0.5, 0.9):
    d = (1 - alpha) * e_d + alpha * e_m
    _, trip, con = loss_approximation(d, e_m, e_c, cfg)
    print(f"alpha={alpha}: triplet {float(trip):.4f} contrastive {float(con):.4f}")
