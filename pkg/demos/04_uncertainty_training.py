"""Train the degradation-regression head and score its uncertainty output.

The head is a small manually-differentiated MLP that predicts how far a
feature vector has drifted from its clean version; the prediction maps to
a bounded uncertainty via U = 1 - exp(-d).
"""

import numpy as np
from scipy.stats import spearmanr

from rangefuse.synthetic import uncertainty_pairs
from rangefuse.uncertainty import (
    gradients,
    init_params,
    mlp_forward,
    train_step,
    uncertainty_score,
)


def main():
    feats, targets, levels = uncertainty_pairs(3000, dim=8, seed=5)
    train_f, train_t = feats[:2400], targets[:2400]
    held_f, held_t = feats[2400:], targets[2400:]
    held_lv = levels[2400:]

    params = init_params(8, seed=5)
    _, loss = gradients(params, train_f, train_t)
    print(f"initial loss {loss:.4f}")
    for step in range(1, 501):
        params, loss = train_step(params, train_f, train_t, lr=0.05)
        if step % 100 == 0:
            print(f"step {step:3d}: loss {loss:.4f}")

    pred = mlp_forward(params, held_f)
    rho = spearmanr(pred, held_t).correlation
    print(f"held-out Spearman(d_pred, d_gt) = {rho:.3f}")

    print("mean predicted uncertainty per severity level:")
    for lv in np.unique(held_lv):
        u = uncertainty_score(pred[held_lv == lv]).mean()
        print(f"  severity {lv}: U = {u:.3f}")
    print(f"anchors: U(0) = {uncertainty_score(0.0):.1f}, "
          f"U(ln 2) = {uncertainty_score(np.log(2.0)):.2f}")


if __name__ == "__main__":
    main()
