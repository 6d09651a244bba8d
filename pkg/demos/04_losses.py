"""The training losses and their analytic gradients.

Every loss returns its gradient alongside the value; this script spells
out the hand cases and verifies one gradient against central finite
differences, the same check the test suite runs at scale.
"""

import math

import numpy as np

from pplr import (
    LossWeights,
    PseudoLabels,
    aals_loss,
    build_camera_proxies,
    cross_entropy,
    inter_camera_loss,
    softmax_forward,
    softmax_triplet_loss,
    total_loss,
)

# Cross-entropy against a uniform pair of predictions is log 2.
loss, grad = cross_entropy(np.array([0.5, 0.5]), np.array([0.5, 0.5]))
print(f"H(u, u) = {loss:.6f} (log 2 = {math.log(2):.6f}), grad = {grad}")

# The smoothing loss interpolates between hard cross-entropy (alpha=1)
# and the uniform KL term (alpha=0).
probs = softmax_forward(np.array([2.0, 0.5, -1.0])).probs
for alpha in (1.0, 0.5, 0.0):
    value, _ = aals_loss(0, alpha, probs)
    print(f"aals_loss(label=0, alpha={alpha:3.1f}) = {value:.4f}")

# Hard-mined triplet: equal positive and negative distances give log 2.
feats = np.array([[0.0, 0.0], [0.0, 2.0], [2.0, 0.0]])
labels = np.array([0, 0, 1])
value, grad, skipped = softmax_triplet_loss(feats, labels)
print(f"\ntriplet loss = {value:.4f} (skipped anchors without pos/neg: {skipped})")

# Camera-aware proxies: centroids per (camera, cluster) pair.
rng = np.random.default_rng(8)
bank_feats = rng.standard_normal((12, 4))
bank_feats /= np.linalg.norm(bank_feats, axis=1, keepdims=True)
pseudo = PseudoLabels(labels=np.repeat([0, 1, 2], 4), k_clusters=3)
cams = np.tile([0, 1], 6)
proxies = build_camera_proxies(bank_feats, pseudo, cams)
print(f"proxies: {proxies.n_proxies} for 3 clusters x 2 cameras")

w = LossWeights(tau=0.4, n_hard_negatives=3)
value, grad, was_skipped = inter_camera_loss(bank_feats[0], 0, 0, proxies, w)
print(f"inter-camera loss for sample 0: {value:.4f} (skipped={was_skipped})")

# Finite-difference check of that gradient, coordinate by coordinate.
step = 1e-6
fd = np.zeros_like(bank_feats[0])
for d in range(fd.size):
    probe = bank_feats[0].copy()
    probe[d] += step
    up, _, _ = inter_camera_loss(probe, 0, 0, proxies, w)
    probe[d] -= 2 * step
    down, _, _ = inter_camera_loss(probe, 0, 0, proxies, w)
    fd[d] = (up - down) / (2 * step)
print(f"max |analytic - finite difference| = {np.abs(grad - fd).max():.2e}")

print(
    "\ntotal (pplr mode):",
    total_loss({"aals": 1.2, "pglr": 0.8, "triplet": 0.3, "cam": 2.0}, LossWeights(lambda_cam=0.5)),
)
