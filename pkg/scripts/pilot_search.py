"""Desk-scale pilot: short denoise-only search, then grid eval vs identity."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from cirnas import degrade, metrics
from cirnas.extract import Extractor
from cirnas.trainer import TrainConfig, run_search

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000
lam1 = float(sys.argv[2]) if len(sys.argv) > 2 else 5e-8
lam2 = float(sys.argv[3]) if len(sys.argv) > 3 else 1e-2

cfg = TrainConfig(lambda1=lam1, lambda2=lam2, batch_size=8, patch_size=48,
                  iterations=steps, blocks=4, channels=16, corpus_size=50,
                  corpus_image_size=64, seed=0, active_types=[1],
                  log_every=200)
t0 = time.time()
model, controller, consensus, trace = run_search(cfg, progress=True)
print(f"train time {time.time() - t0:.1f}s for {steps} steps")
print("final:", trace[-1])

ex = Extractor(model, controller, consensus)
spec = ex.spec_for_task([0.0, 0.5, 0.0])
print("prefix_len", consensus.prefix_len(), "active", spec.active_counts())

test_set = []
for i in range(5):
    clean = degrade.procedural_image(["gradient", "checker", "blobs"][i % 3],
                                     64, 500 + i)
    noisy = degrade.degrade(clean, [0.0, 0.5, 0.0], 900 + i)
    test_set.append((f"t{i}", noisy, clean))

ident = metrics.eval_grid(None, test_set)
t0 = time.time()
trained = metrics.eval_grid(ex, test_set)
print(f"eval time {time.time() - t0:.1f}s")
print("identity best PSNR", ident["mean_best_psnr"])
print("trained  best PSNR", trained["mean_best_psnr"])
print("gain", trained["mean_best_psnr"] - ident["mean_best_psnr"])
