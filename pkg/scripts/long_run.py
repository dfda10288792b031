"""Generate the cached search artifacts used by the acceptance suite:
the 20k-step gain run and the three 1500-step paired trend runs. Prints
the grid-eval gain over the identity baseline at the end."""

import sys

sys.path.insert(0, "src")
sys.path.insert(0, "tests")

from cirnas import degrade, metrics
from test_acceptance import cached_search, desk_cfg, searched_flops

short = dict(iterations=1500, checkpoint_every=1500)
for tag, cfg in (("short-l1l2", desk_cfg(**short)),
                 ("short-l1", desk_cfg(lambda2=0.0, **short)),
                 ("short-nol1", desk_cfg(lambda1=0.0, lambda2=0.0, **short))):
    ex = cached_search(tag, cfg)
    print(tag, "prefix", ex.consensus.prefix_len(),
          "searched MFLOPs", round(searched_flops(ex) / 1e6, 3), flush=True)

ex = cached_search("denoise20k", desk_cfg(resource_warmup=5000))
print("prefix_len", ex.consensus.prefix_len())
spec = ex.spec_for_task([0.0, 0.5, 0.0])
print("active", sum(spec.active_counts()), "of",
      ex.model.config.num_sites * ex.model.config.channels)

test_set = []
for i in range(5):
    kind = ["gradient", "checker", "blobs"][i % 3]
    clean = degrade.procedural_image(kind, 64, 500 + i)
    noisy = degrade.degrade(clean, [0.0, 0.5, 0.0], 900 + i)
    test_set.append((f"t{i}", noisy, clean))

ident = metrics.eval_grid(None, test_set)
trained = metrics.eval_grid(ex, test_set)
print("identity best PSNR", ident["mean_best_psnr"])
print("trained  best PSNR", trained["mean_best_psnr"])
print("gain", trained["mean_best_psnr"] - ident["mean_best_psnr"])
