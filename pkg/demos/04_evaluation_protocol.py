"""The evaluation protocol on a hand-checkable fixture.

Shows how PA%K point adjustment changes F1: at K=0 a single detected point
inside a labeled segment credits the whole segment; at K=100 no adjustment
happens and the raw point-wise metric is reported. Both use best-F1 threshold
search over the unique score values.
"""

import numpy as np

from comet.evaluation import auc_pr, auc_roc, best_f1, point_adjust

labels = np.array([0, 1, 1, 0])
preds = np.array([0, 1, 0, 0])  # one hit inside the two-step segment

print("labels:            ", labels.tolist())
print("raw predictions:   ", preds.tolist())
print("adjusted at K=0:   ", point_adjust(preds, labels, 0).tolist())
print("adjusted at K=100: ", point_adjust(preds, labels, 100).tolist())

scores = preds.astype(float)
f1_lenient, theta_0 = best_f1(scores, labels, k_percent=0)
f1_strict, theta_100 = best_f1(scores, labels, k_percent=100)
print("\nbest F1(K=0)   =", f1_lenient, " at threshold", theta_0)
print("best F1(K=100) =", round(f1_strict, 6), " at threshold", theta_100)

# ranking metrics on a slightly larger example
rng = np.random.default_rng(0)
y = (rng.random(200) < 0.15).astype(int)
s = rng.normal(size=200) + 2.5 * y  # anomalies score higher on average
print("\nauc_roc =", round(auc_roc(s, y), 4))
print("auc_pr  =", round(auc_pr(s, y), 4))

# rank metrics ignore monotone rescaling of the scores
print("invariant under exp():", auc_roc(np.exp(s), y) == auc_roc(s, y))
