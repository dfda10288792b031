"""Short probes of gate-logit dynamics under different lambda1 values."""

import sys

import numpy as np

sys.path.insert(0, "src")

from cirnas.trainer import TrainConfig, run_search
from cirnas.extract import Extractor

for lam1 in (0.0, 5e-8, 5e-7, 2e-6):
    cfg = TrainConfig(lambda1=lam1, lambda2=1e-2, batch_size=8, patch_size=48,
                      iterations=1200, blocks=4, channels=16, corpus_size=50,
                      corpus_image_size=64, seed=0, active_types=[1],
                      log_every=400)
    model, controller, consensus, trace = run_search(cfg)
    ex = Extractor(model, controller, consensus)
    counts = []
    for t in np.random.default_rng(0).uniform(0, 1, (5, 3)):
        counts.append(sum(ex.spec_for_task(t).active_counts()))
    zs = ex.task_logits([0.0, 0.5, 0.0])
    print(f"lam1={lam1:g} final r1={trace[-1]['r1']:.3e} "
          f"l1={trace[-1]['l1']:.4f} prefix={consensus.prefix_len()} "
          f"active(mean of 224)={np.mean(counts):.1f} "
          f"logit mean={zs.mean():.3f} min={zs.min():.3f}", flush=True)
