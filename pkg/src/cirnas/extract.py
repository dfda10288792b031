"""Extraction of concrete pruned networks from a trained search state and
feature-reuse inference across multiple imagery effects.

Execution is organized as a sequence of steps, each owning the CS site
that decides its prefix membership, so a run can be cut at any site
boundary: the prefix part is computed once per image and cached, the
task-specific tail re-runs per task vector. Weight slicing is physical for
the middle CS site of each residual block; block-external sites stay as
masks so skip-connection widths remain consistent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import checkpoint as ckpt
from . import cost as costmod
from . import tensor as T
from .controller import ControllerNet, ConsensusState, gate_forward
from .supernet import SuperNet, SuperNetConfig
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class ArchSpec:
    """A concrete extracted architecture: per-site binary masks, the
    shared-prefix length in CS sites, and the task it was derived for
    (None for the shared part)."""
    masks: list
    shared_prefix_len: int
    task: np.ndarray | None
    config: SuperNetConfig

    def active_counts(self):
        return [int(m.sum()) for m in self.masks]

    def to_dict(self):
        return {"masks": [m.astype(int).tolist() for m in self.masks],
                "shared_prefix_len": self.shared_prefix_len,
                "task": None if self.task is None else
                        [float(v) for v in self.task],
                "supernet": self.config.to_dict()}

    @staticmethod
    def from_dict(d):
        return ArchSpec(
            masks=[np.array(m, dtype=bool) for m in d["masks"]],
            shared_prefix_len=int(d["shared_prefix_len"]),
            task=None if d["task"] is None else np.array(d["task"]),
            config=SuperNetConfig.from_dict(d["supernet"]))


def _clamp_mask(mask: np.ndarray, logits: np.ndarray, site: int) -> np.ndarray:
    """An all-zero mask would create a zero-width layer; keep the single
    highest-logit channel active instead."""
    if mask.any():
        return mask
    out = np.zeros_like(mask)
    out[int(np.argmax(logits))] = True
    log.warning("site %d mask was empty; clamped to channel %d",
                site, int(np.argmax(logits)))
    return out


class Extractor:
    """Derives pruned networks from a trained (model, controller, consensus)
    triple and serves feature-reuse inference."""

    def __init__(self, model: SuperNet, controller: ControllerNet,
                 consensus: ConsensusState):
        self.model = model
        self.controller = controller
        self.consensus = consensus
        self._tail_cache = {}

    @staticmethod
    def from_checkpoint(path) -> "Extractor":
        from .trainer import load_checkpoint
        model, controller, consensus, _, _, _, _ = load_checkpoint(path)
        return Extractor(model, controller, consensus)

    # -- architecture derivation -------------------------------------------

    def task_logits(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64).reshape(1, -1)
        zs = self.controller.predict_zs(Tensor(t.astype(np.float32)))
        cfg = self.model.config
        return zs.data.reshape(cfg.num_sites, cfg.channels).astype(np.float64)

    def spec_for_task(self, t) -> ArchSpec:
        """Prefix sites keep the consensus masks, tail sites take the
        controller's task-conditional masks."""
        cfg = self.model.config
        prefix_len = self.consensus.prefix_len()
        zs = self.task_logits(t)
        za = self.consensus.z_a
        masks = []
        for n in range(cfg.num_sites):
            logits = za[n] if n < prefix_len else zs[n]
            masks.append(_clamp_mask(gate_forward(logits).astype(bool), logits, n))
        return ArchSpec(masks=masks, shared_prefix_len=prefix_len,
                        task=np.asarray(t, dtype=np.float64), config=cfg)

    def shared_spec(self) -> ArchSpec:
        """The task-agnostic prefix alone (empty when phi is all zero)."""
        cfg = self.model.config
        prefix_len = self.consensus.prefix_len()
        masks = []
        for n in range(prefix_len):
            logits = self.consensus.z_a[n]
            masks.append(_clamp_mask(gate_forward(logits).astype(bool), logits, n))
        return ArchSpec(masks=masks, shared_prefix_len=prefix_len,
                        task=None, config=cfg)

    # -- execution ---------------------------------------------------------

    def _steps(self, spec: ArchSpec, sliced: bool):
        """Ordered execution steps; each is (prefix_site, fn(state, task))
        where prefix membership is prefix_site < shared_prefix_len (None
        means always tail). State keys: x, trunk, head_out, mid."""
        cfg = self.model.config
        m = self.model
        masks = spec.masks
        prefix_len = spec.shared_prefix_len
        pad = cfg.kernel // 2

        def mask_mul(arr, site):
            return arr * masks[site].reshape(1, -1, 1, 1)

        def head(state, t):
            w, b = m.head[0].data, m.head[1].data
            if sliced:
                keep = masks[0]
                out = _np_conv(state["x"], w[keep], b[keep], 2, pad)
                out = _scatter(out, keep)
            else:
                out = mask_mul(_np_conv(state["x"], w, b, 2, pad), 0)
            state["trunk"] = out
            state["head_out"] = out

        steps = [(0, head)]

        for bi in range(cfg.blocks):
            s_in, s_mid, s_out = 3 * bi + 1, 3 * bi + 2, 3 * bi + 3
            conv1, conv2, scale_w = self.model.blocks[bi]

            def conv1_step(state, t, bi=bi, s_in=s_in, s_mid=s_mid,
                           conv1=conv1):
                w, b = conv1[0].data, conv1[1].data
                if sliced:
                    keep_in, keep_mid = masks[s_in], masks[s_mid]
                    out = _np_conv(state["trunk"][:, keep_in],
                                   w[keep_mid][:, keep_in], b[keep_mid], 1, pad)
                    state["mid"] = np.maximum(out, 0)  # stays sliced
                else:
                    z = _np_conv(mask_mul(state["trunk"], s_in), w, b, 1, pad)
                    state["mid"] = mask_mul(np.maximum(z, 0), s_mid)

            def conv2_step(state, t, bi=bi, s_mid=s_mid, s_out=s_out,
                           conv2=conv2, scale_w=scale_w):
                w, b = conv2[0].data, conv2[1].data
                if sliced:
                    keep_mid, keep_out = masks[s_mid], masks[s_out]
                    z = _np_conv(state["mid"], w[keep_out][:, keep_mid],
                                 b[keep_out], 1, pad)
                    z = _scatter(z, keep_out)
                else:
                    z = mask_mul(_np_conv(state["mid"], w, b, 1, pad), s_out)
                if not s_out < prefix_len:
                    # conditioned residual scale, dropped inside the prefix
                    scale = (scale_w.data @ t).reshape(1, -1, 1, 1)
                    z = z * scale.astype(z.dtype)
                state["trunk"] = state["trunk"] + z
                state["mid"] = None

            steps.append((s_mid, conv1_step))
            steps.append((s_out, conv2_step))

        gsite = 3 * cfg.blocks
        s_tail = gsite + 1

        def global_step(state, t):
            trunk = state["trunk"]
            if not gsite < prefix_len:
                scale = (m.global_scale.data @ t)
                trunk = trunk * scale.reshape(1, -1, 1, 1).astype(trunk.dtype)
            state["trunk"] = state["head_out"] + trunk

        def tail1_step(state, t):
            up = _np_pixel_shuffle(state["trunk"], cfg.upscale)
            w1, b1 = m.tail1[0].data, m.tail1[1].data
            if sliced:
                keep = masks[s_tail]
                z = np.maximum(_np_conv(up, w1[keep], b1[keep], 1, pad), 0)
                state["z_tail"] = _scatter(z, keep)
            else:
                state["z_tail"] = mask_mul(
                    np.maximum(_np_conv(up, w1, b1, 1, pad), 0), s_tail)

        def tail2_step(state, t):
            out = _np_conv(state["z_tail"], m.tail2[0].data,
                           m.tail2[1].data, 1, pad)
            state["out"] = out + state["x"]

        steps.append((gsite, global_step))
        steps.append((s_tail, tail1_step))
        steps.append((None, tail2_step))
        return steps

    @staticmethod
    def _task_vec(t):
        t = np.asarray(t, dtype=np.float32)
        if t.shape != (3,) or np.any(t < 0) or np.any(t > 1):
            raise ValueError(f"task vector out of range: {t}")
        return t

    def run_full(self, spec: ArchSpec, x: np.ndarray, t, sliced=False):
        """End-to-end single-effect inference, [1,3,H,W] float in [0,1]."""
        t = self._task_vec(t)
        state = {"x": x.astype(np.float32)}
        for _, fn in self._steps(spec, sliced):
            fn(state, t)
        return state["out"]

    def run_prefix(self, spec: ArchSpec, x: np.ndarray, sliced=False) -> dict:
        """Run the task-agnostic prefix once; returns the cached state."""
        state = {"x": x.astype(np.float32), "_next": 0}
        steps = self._steps(spec, sliced)
        for i, (site, fn) in enumerate(steps):
            if site is None or not site < spec.shared_prefix_len:
                state["_next"] = i
                break
            fn(state, None)
            state["_next"] = i + 1
        return state

    def run_tail(self, spec: ArchSpec, prefix_state: dict, t, sliced=False):
        """Continue from a cached prefix state for one task vector."""
        t = self._task_vec(t)
        state = dict(prefix_state)
        steps = self._steps(spec, sliced)
        for site, fn in steps[state.pop("_next"):]:
            fn(state, t)
        if "out" not in state:
            raise RuntimeError("tail execution did not reach the output")
        return state["out"]

    # -- feature-reuse inference ------------------------------------------

    def _cached_spec(self, t) -> ArchSpec:
        key = tuple(int(round(v * 1000)) for v in np.asarray(t, dtype=np.float64))
        if key not in self._tail_cache:
            self._tail_cache[key] = self.spec_for_task(t)
        return self._tail_cache[key]

    def infer_with_reuse(self, x: np.ndarray, tasks, resolution=None,
                         sliced=False):
        """Compute the shared feature once, then one tail per task vector.
        Returns (list of [1,3,H,W] outputs, CostReport)."""
        if len(tasks) < 1:
            raise ValueError("need at least one task vector")
        if resolution is None:
            resolution = x.shape[2:]
        cfg = self.model.config
        eps = float(self.controller.flops())
        shared = self.shared_spec()
        specs = [self._cached_spec(t) for t in tasks]
        prefix_len = shared.shared_prefix_len
        # the prefix masks are shared, so any task's spec can host the run
        prefix_state = self.run_prefix(specs[0], x, sliced)
        outputs = [self.run_tail(spec, prefix_state, t, sliced)
                   for spec, t in zip(specs, tasks)]

        prefix_flops, _ = costmod.supernet_flops_split(
            cfg, resolution, specs[0].masks, prefix_len)
        tails = [costmod.supernet_flops_split(cfg, resolution, s.masks,
                                              prefix_len)[1] for s in specs]
        report = costmod.CostReport(
            flops_first=prefix_flops + tails[0] + eps,
            flops_subsequent=float(np.mean(tails)) + eps,
            epsilon=eps,
            prefix_flops=prefix_flops,
            resolution=tuple(resolution),
            tails=list(tails))
        return outputs, report

    # -- serialization -----------------------------------------------------

    def save_pruned(self, path, spec: ArchSpec):
        """Store the extracted network in the checkpoint container with the
        ArchSpec embedded in the header."""
        header = {"type": "pruned", "pruned": True,
                  "supernet": self.model.config.to_dict(),
                  "controller": {"hidden": self.controller.hidden},
                  "consensus": self.consensus.to_dict(),
                  "arch_spec": spec.to_dict()}
        blobs = {**{f"theta.{k}": v.data for k, v in self.model.params.items()},
                 **{f"psi.{k}": v.data for k, v in self.controller.params.items()}}
        ckpt.save(path, header, blobs)


def _np_conv(x, w, b, stride, padding):
    """Plain-numpy conv used by inference paths (no tape)."""
    out = T.conv2d(Tensor(x.astype(np.float32)),
                   Tensor(w.astype(np.float32)),
                   Tensor(b.astype(np.float32)), stride, padding)
    return out.data


def _np_pixel_shuffle(x, s):
    n, c, h, w = x.shape
    cout = c // (s * s)
    return (x.reshape(n, cout, s, s, h, w)
            .transpose(0, 1, 4, 2, 5, 3)
            .reshape(n, cout, h * s, w * s))


def _scatter(x, keep):
    """Expand a channel-sliced activation back to full width with zeros."""
    n, _, h, w = x.shape
    out = np.zeros((n, keep.size, h, w), dtype=x.dtype)
    out[:, keep] = x
    return out
