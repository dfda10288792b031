"""Joint search/training loop for the super network and the architecture
controller, with consensus bookkeeping, checkpointing, and TOML config."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field, asdict

import numpy as np

from . import controller as ctl
from . import cost as costmod
from . import degrade
from . import tensor as T
from .checkpoint import save as ckpt_save, load as ckpt_load
from .controller import ControllerNet, ConsensusState
from .supernet import SuperNet, SuperNetConfig
from .tensor import Tensor

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib


@dataclass
class TrainConfig:
    # objective balance and consensus hyperparameters
    lambda1: float = 0.0
    lambda2: float = 0.0
    alpha: float = 0.9
    gamma: float = 0.9
    # optimization
    batch_size: int = 8
    patch_size: int = 64
    lr: float = 1e-4
    iterations: int = 20000
    lr_decay_step: int = -1  # -1 means half of `iterations`
    resource_warmup: int = 0  # steps before the FLOPs penalty engages
    grad_clip: float = 10.0
    seed: int = 0
    sampling_mode: str = "relative"
    active_types: list = field(default_factory=lambda: [0, 1, 2])
    # desk-scale data source
    corpus_size: int = 50
    corpus_image_size: int = 64
    corpus_dir: str = ""  # optional PNG directory overriding the procedural set
    # model
    blocks: int = 4
    channels: int = 16
    controller_hidden: int = 64
    # bookkeeping
    checkpoint_every: int = 5000
    log_every: int = 200

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1/lambda2 must be >= 0")
        if not (0 < self.alpha < 1 and 0 < self.gamma < 1):
            raise ValueError("alpha/gamma must lie in (0,1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_decay_step < 0:
            self.lr_decay_step = self.iterations // 2

    def supernet_config(self) -> SuperNetConfig:
        return SuperNetConfig(blocks=self.blocks, channels=self.channels)

    @staticmethod
    def from_toml(path) -> "TrainConfig":
        with open(path, "rb") as f:
            data = tomllib.load(f)
        return TrainConfig(**data)


def lr_schedule(iteration: int, cfg: TrainConfig) -> float:
    """Base rate until the decay step (default: half of training), then /10."""
    return cfg.lr if iteration < cfg.lr_decay_step else cfg.lr / 10.0


def load_corpus(cfg: TrainConfig):
    if cfg.corpus_dir:
        from PIL import Image
        import os
        out = []
        for name in sorted(os.listdir(cfg.corpus_dir)):
            if name.lower().endswith(".png"):
                img = np.asarray(Image.open(
                    os.path.join(cfg.corpus_dir, name)).convert("RGB"))
                out.append((name, img))
        if not out:
            raise FileNotFoundError(f"no PNG files in {cfg.corpus_dir}")
        return out
    return degrade.procedural_corpus(cfg.corpus_size, cfg.corpus_image_size,
                                     cfg.seed + 1000)


def draw_batch(corpus, cfg: TrainConfig, rng):
    """One mini-batch of SamplePairs, strategies cycled for equal population."""
    pairs = []
    for i in range(cfg.batch_size):
        idx = int(rng.integers(len(corpus)))
        source_id, img = corpus[idx]
        img = _crop(img, cfg.patch_size, rng)
        pairs.append(degrade.sample_training_pair(
            img, cfg.sampling_mode, rng, source_id=source_id,
            strategy=i % 3, active_types=cfg.active_types))
    return pairs


def _crop(img, patch: int, rng):
    h, w = img.shape[:2]
    if h == patch and w == patch:
        return img
    if h < patch or w < patch:
        raise ValueError(f"image {h}x{w} smaller than patch {patch}")
    y = int(rng.integers(h - patch + 1))
    x = int(rng.integers(w - patch + 1))
    return img[y:y + patch, x:x + patch]


def batch_tensors(pairs, dtype=np.float32):
    x = np.stack([p.input_img for p in pairs]).transpose(0, 3, 1, 2) / 255.0
    y = np.stack([p.target_img for p in pairs]).transpose(0, 3, 1, 2) / 255.0
    t = np.stack([p.task for p in pairs])
    return (Tensor(x.astype(dtype)), Tensor(y.astype(dtype)),
            Tensor(t.astype(dtype)))


def train_step(model: SuperNet, controller: ControllerNet,
               consensus: ConsensusState, pairs, cfg: TrainConfig,
               adam: T.AdamState, iteration: int) -> dict:
    """One optimization step of the joint objective
    L1 + lambda1*R1 + lambda2*R2, followed by consensus bookkeeping."""
    x, target, t = batch_tensors(pairs)
    n_sites = model.config.num_sites
    C = model.config.channels

    zs = controller.predict_zs(t)
    gates = ctl.site_gates(zs, n_sites, C)
    # the forward mirrors extraction semantics: conditioning is dropped
    # inside the current task-agnostic prefix so the weights adapt to the
    # structure they will be extracted into
    pred = model.forward(x, t, gates,
                         prefix_task_free=consensus.prefix_len())
    l1 = T.l1_loss(pred, target)
    loss = l1
    r1_val = 0.0
    r2_val = 0.0
    # the resource penalty only engages once restoration is being learned;
    # pressure from step 0 prunes channels before they can earn their keep
    if cfg.lambda1 > 0 and iteration >= cfg.resource_warmup:
        r1 = costmod.r1_surrogate(zs, model.config,
                                  (cfg.patch_size, cfg.patch_size),
                                  consensus.phi, epsilon=controller.flops())
        r1_val = r1.item()
        loss = loss + T.scale(r1, cfg.lambda1)
    if cfg.lambda2 > 0:
        r2 = ctl.r2_penalty(zs, consensus.z_a, consensus.phi, n_sites, C)
        r2_val = r2.item()
        loss = loss + T.scale(r2, cfg.lambda2)

    total = loss.item()
    if not np.isfinite(total):
        raise T.NumericError(
            f"non-finite loss at step {iteration}: "
            f"l1={l1.item()} r1={r1_val} r2={r2_val}")

    params = model.parameters() + controller.parameters()
    for p in params:
        p.zero_grad()
    loss.backward()
    T.clip_grad_norm(params, cfg.grad_clip)
    T.adam_step(params, adam, lr_schedule(iteration, cfg))

    # consensus bookkeeping, once per step, after the parameter update
    ctl.consensus_step(consensus, zs.data.reshape(len(pairs), n_sites, C))

    return {"loss": total, "l1": l1.item(), "r1": r1_val, "r2": r2_val,
            "prefix_len": consensus.prefix_len()}


def save_checkpoint(path, model, controller, consensus, adam, iteration,
                    cfg: TrainConfig, rng):
    header = {
        "type": "search",
        "train_config": asdict(cfg),
        "supernet": model.config.to_dict(),
        "controller": {"hidden": controller.hidden},
        "consensus": consensus.to_dict(),
        "iteration": iteration,
        "adam_step": adam.step,
        "rng_state": rng.bit_generator.state,
    }
    blobs = {}
    params = {**{f"theta.{k}": v for k, v in model.params.items()},
              **{f"psi.{k}": v for k, v in controller.params.items()}}
    for name, p in params.items():
        blobs[name] = p.data
    flat = list(params.values())
    for i in range(len(flat)):
        blobs[f"adam.m.{i}"] = adam.m[i]
        blobs[f"adam.v.{i}"] = adam.v[i]
    ckpt_save(path, header, blobs)


def load_checkpoint(path):
    """Rebuild (model, controller, consensus, adam, iteration, cfg, rng)."""
    header, blobs = ckpt_load(path)
    cfg = TrainConfig(**header["train_config"])
    model = SuperNet(SuperNetConfig.from_dict(header["supernet"]), seed=cfg.seed)
    controller = ControllerNet(model.config.task_dim, model.config.num_sites,
                               model.config.channels,
                               hidden=header["controller"]["hidden"],
                               seed=cfg.seed + 1)
    for k, p in model.params.items():
        p.data = blobs[f"theta.{k}"].copy()
    for k, p in controller.params.items():
        p.data = blobs[f"psi.{k}"].copy()
    consensus = ConsensusState.from_dict(header["consensus"])
    params = model.parameters() + controller.parameters()
    adam = T.AdamState(params)
    adam.step = header["adam_step"]
    for i in range(len(params)):
        adam.m[i] = blobs[f"adam.m.{i}"].copy()
        adam.v[i] = blobs[f"adam.v.{i}"].copy()
    rng = np.random.default_rng(cfg.seed)
    rng.bit_generator.state = header["rng_state"]
    return model, controller, consensus, adam, header["iteration"], cfg, rng


def run_search(cfg: TrainConfig, checkpoint_path=None, resume=None,
               metrics_path=None, progress=False):
    """Full search loop. Returns (model, controller, consensus, trace)."""
    if resume:
        model, controller, consensus, adam, start, cfg, rng = load_checkpoint(resume)
    else:
        sn_cfg = cfg.supernet_config()
        model = SuperNet(sn_cfg, seed=cfg.seed)
        controller = ControllerNet(sn_cfg.task_dim, sn_cfg.num_sites,
                                   sn_cfg.channels, hidden=cfg.controller_hidden,
                                   seed=cfg.seed + 1)
        consensus = ConsensusState.fresh(sn_cfg.num_sites, sn_cfg.channels,
                                         cfg.alpha, cfg.gamma)
        adam = T.AdamState(model.parameters() + controller.parameters())
        start = 0
        rng = np.random.default_rng(cfg.seed)

    corpus = load_corpus(cfg)
    trace = []
    metrics_f = open(metrics_path, "w") if metrics_path else None
    try:
        for it in range(start, cfg.iterations):
            pairs = draw_batch(corpus, cfg, rng)
            stats = train_step(model, controller, consensus, pairs, cfg, adam, it)
            if it % cfg.log_every == 0 or it == cfg.iterations - 1:
                record = {"step": it, **stats,
                          "s": [round(float(v), 6) for v in consensus.s]}
                trace.append(record)
                if metrics_f:
                    metrics_f.write(json.dumps(record) + "\n")
                    metrics_f.flush()
                if progress:
                    print(f"step {it}: loss={stats['loss']:.5f} "
                          f"l1={stats['l1']:.5f} prefix={stats['prefix_len']}",
                          file=sys.stderr)
            if checkpoint_path and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, model, controller, consensus,
                                adam, it + 1, cfg, rng)
        if checkpoint_path:
            save_checkpoint(checkpoint_path, model, controller, consensus,
                            adam, cfg.iterations, cfg, rng)
    finally:
        if metrics_f:
            metrics_f.close()
    return model, controller, consensus, trace
