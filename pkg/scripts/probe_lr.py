"""Check whether the plain restoration objective learns at desk scale,
and how fast, for a few base learning rates (no resource penalties)."""

import sys

sys.path.insert(0, "src")

from cirnas import degrade, metrics
from cirnas.extract import Extractor
from cirnas.trainer import TrainConfig, run_search

test_set = []
for i in range(5):
    kind = ["gradient", "checker", "blobs"][i % 3]
    clean = degrade.procedural_image(kind, 64, 500 + i)
    noisy = degrade.degrade(clean, [0.0, 0.5, 0.0], 900 + i)
    test_set.append((f"t{i}", noisy, clean))
ident = metrics.eval_grid(None, test_set)
print("identity best PSNR", ident["mean_best_psnr"], flush=True)

for lr in (1e-4, 5e-4, 1e-3):
    cfg = TrainConfig(lambda1=0.0, lambda2=0.0, lr=lr, batch_size=8,
                      patch_size=48, iterations=2000, blocks=4, channels=16,
                      corpus_size=50, corpus_image_size=64, seed=0,
                      active_types=[1], log_every=1000)
    model, controller, consensus, trace = run_search(cfg)
    ex = Extractor(model, controller, consensus)
    trained = metrics.eval_grid(ex, test_set)
    print(f"lr={lr:g} final l1={trace[-1]['l1']:.4f} "
          f"best PSNR={trained['mean_best_psnr']:.3f} "
          f"gain={trained['mean_best_psnr'] - ident['mean_best_psnr']:+.3f}",
          flush=True)
