"""FLOPs accounting and latency benchmarking.

Conventions: 1 MAC = 2 FLOPs; elementwise ops (skip adds, activations,
channel scaling) cost 1 FLOP per output element; biases are free. These
are the conventions under which the published CResMD FLOPs table is
reproducible.

Both the exact counter and the differentiable surrogate evaluate the same
per-layer cost program, so they agree exactly on binary gates.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .supernet import SuperNetConfig, conv_layers


def conv_out_hw(h: int, w: int, kernel: int, stride: int, padding: int):
    return ((h + 2 * padding - kernel) // stride + 1,
            (w + 2 * padding - kernel) // stride + 1)


def layer_flops(kind: str, active_in: int, active_out: int,
                h_out: int = 1, w_out: int = 1, kernel: int = 1) -> float:
    """FLOPs for one layer at the given active channel counts."""
    if active_in < 0 or active_out < 0:
        raise ValueError("negative channel count")
    if kind == "conv":
        return 2.0 * kernel * kernel * active_in * active_out * h_out * w_out
    if kind == "fc":
        return 2.0 * active_in * active_out
    if kind == "elementwise":
        return float(active_out * h_out * w_out)
    raise ValueError(f"unknown layer kind: {kind}")


@dataclass(frozen=True)
class CostTerm:
    """One additive cost contribution: base FLOPs at full width, scaled by
    the active fraction of up to two CS sites. `prefix_site` decides prefix
    membership; terms with `drop_in_prefix` (the task-conditioning machinery)
    vanish inside the task-agnostic prefix."""
    name: str
    base: float
    in_site: int | None
    out_site: int | None
    prefix_site: int | None
    drop_in_prefix: bool = False


def cost_program(config: SuperNetConfig, resolution) -> list[CostTerm]:
    """The full additive FLOPs decomposition of one super-net inference."""
    h, w = resolution
    fh, fw = conv_out_hw(h, w, config.kernel, 2, config.kernel // 2)
    C, D = config.channels, config.task_dim
    terms = []
    for name, cin, cout, k, stride, in_site, out_site, full_res in conv_layers(config):
        hh, ww = (h, w) if full_res else (fh, fw)
        terms.append(CostTerm(name, layer_flops("conv", cin, cout, hh, ww, k),
                              in_site, out_site, out_site))
    site = 1
    for b in range(config.blocks):
        ew = layer_flops("elementwise", 0, C, fh, fw)
        terms.append(CostTerm(f"block{b}.relu", ew, None, site + 1, site + 1))
        terms.append(CostTerm(f"block{b}.cond.fc", layer_flops("fc", D, C),
                              None, site + 2, site + 2, drop_in_prefix=True))
        terms.append(CostTerm(f"block{b}.cond.mul", ew, None, site + 2, site + 2,
                              drop_in_prefix=True))
        terms.append(CostTerm(f"block{b}.skip", ew, None, None, site + 2))
        site += 3
    gsite = 3 * config.blocks  # global connection rides with the last block site
    few = layer_flops("elementwise", 0, C, fh, fw)
    terms.append(CostTerm("global.cond.fc", layer_flops("fc", D, C),
                          None, None, gsite, drop_in_prefix=True))
    terms.append(CostTerm("global.cond.mul", few, None, None, gsite,
                          drop_in_prefix=True))
    terms.append(CostTerm("global.feat_skip", few, None, None, gsite))
    terms.append(CostTerm("tail.relu", layer_flops("elementwise", 0, C, h, w),
                          None, site, site))
    terms.append(CostTerm("global.img_skip", layer_flops("elementwise", 0, 3, h, w),
                          None, None, None))
    return terms


def _fractions(masks, num_sites: int, channels: int):
    """Active fraction per site; None means fully active."""
    if masks is None:
        return np.ones(num_sites)
    return np.array([float(np.sum(m)) / channels for m in masks])


def supernet_flops_split(config: SuperNetConfig, resolution,
                         masks=None, prefix_len: int = 0):
    """(prefix_flops, tail_flops) for one inference, split at the CS-site
    prefix length."""
    frac = _fractions(masks, config.num_sites, config.channels)
    prefix = tail = 0.0
    for term in cost_program(config, resolution):
        in_prefix = term.prefix_site is not None and term.prefix_site < prefix_len
        if in_prefix and term.drop_in_prefix:
            continue
        val = term.base
        for site in (term.in_site, term.out_site):
            if site is not None:
                val *= frac[site]
        if in_prefix:
            prefix += val
        else:
            tail += val
    return prefix, tail


def arch_flops(config: SuperNetConfig, resolution, masks=None,
               prefix_len: int = 0, controller_flops: float = 0.0):
    """(prefix_flops, tail_flops, epsilon) for a concrete architecture."""
    prefix, tail = supernet_flops_split(config, resolution, masks, prefix_len)
    return prefix, tail, float(controller_flops)


def total_flops(config: SuperNetConfig, resolution, masks=None,
                controller_flops: float = 0.0) -> float:
    p, t, e = arch_flops(config, resolution, masks, 0, controller_flops)
    return p + t + e


def amortized_cost(prefix_flops: float, tail_flops_per_task, epsilon: float,
                   m: int) -> float:
    """Average per-effect cost over m effects: (1/m) prefix +
    (1/m) sum(tail + epsilon). Tails may be one value or a list of m."""
    if m < 1:
        raise ValueError("m must be >= 1")
    tails = np.atleast_1d(np.asarray(tail_flops_per_task, dtype=np.float64))
    if tails.size == 1:
        tails = np.repeat(tails, m)
    if tails.size != m:
        raise ValueError(f"expected {m} tail costs, got {tails.size}")
    return prefix_flops / m + float((tails + epsilon).mean())


@dataclass
class CostReport:
    """Per-effect cost summary for one architecture at one resolution."""
    flops_first: float
    flops_subsequent: float
    epsilon: float
    prefix_flops: float
    resolution: tuple
    latency_s: dict = field(default_factory=dict)
    tails: list | None = None  # per-task tail FLOPs when known

    def flops_amortized(self, m: int) -> float:
        if self.tails:
            tails = [self.tails[i % len(self.tails)] for i in range(m)]
        else:
            tails = [self.flops_subsequent - self.epsilon] * m
        return amortized_cost(self.prefix_flops, tails, self.epsilon, m)

    def to_dict(self):
        return {"flops_first": self.flops_first,
                "flops_subsequent": self.flops_subsequent,
                "epsilon": self.epsilon,
                "prefix_flops": self.prefix_flops,
                "resolution": list(self.resolution),
                "flops_amortized_27": self.flops_amortized(27),
                "latency_s": self.latency_s}


def cost_report(config: SuperNetConfig, resolution, masks=None,
                prefix_len: int = 0, controller_flops: float = 0.0) -> CostReport:
    prefix, tail = supernet_flops_split(config, resolution, masks, prefix_len)
    return CostReport(
        flops_first=prefix + tail + controller_flops,
        flops_subsequent=tail + controller_flops,
        epsilon=controller_flops,
        prefix_flops=prefix,
        resolution=tuple(resolution))


def r1_surrogate(zs: Tensor, config: SuperNetConfig, resolution,
                 phi, epsilon: float = 0.0) -> Tensor:
    """Differentiable expected-FLOPs regularizer.

    zs: [M, N*C] gate logits for the batch's M tasks. Each cost term is
    scaled by the active-channel fractions of its gated sites
    (forward-binary gates, sigmoid-surrogate gradients) and weighted by
    the amortization the current prefix decision induces: prefix terms at
    1/M, tail terms plus epsilon at full weight; the result is the mean
    over the batch's tasks."""
    m, nc = zs.shape
    C = config.channels
    n_sites = config.num_sites
    gates = T.ste_gate(zs)
    frac = _row_means(gates, n_sites, C)  # [M, N]
    prefix_len = int(np.logical_and.accumulate(np.asarray(phi, dtype=bool)).sum())

    total = None
    for term in cost_program(config, resolution):
        in_prefix = term.prefix_site is not None and term.prefix_site < prefix_len
        if in_prefix and term.drop_in_prefix:
            continue
        weight = term.base * ((1.0 / m) if in_prefix else 1.0)
        factor = None
        for site in (term.in_site, term.out_site):
            if site is None:
                continue
            col = _col(frac, site, m)
            factor = col if factor is None else T.mul(factor, col)
        if factor is None:
            factor = Tensor(np.ones((m, 1), dtype=gates.data.dtype))
        contrib = T.scale(factor, weight)
        total = contrib if total is None else total + contrib
    return T.mean(total) + Tensor(np.asarray(epsilon, dtype=gates.data.dtype))


def _row_means(gates: Tensor, n_sites: int, channels: int) -> Tensor:
    """[M, N*C] -> [M, N] per-site active fraction, differentiable."""
    m = gates.shape[0]
    data = gates.data.reshape(m, n_sites, channels).mean(axis=2)
    out = Tensor(data, dtype=gates.data.dtype)
    out.requires_grad = gates.requires_grad
    out._parents = (gates,)

    def backward(g):
        gg = np.repeat(g[:, :, None] / channels, channels, axis=2)
        gates._accumulate(gg.reshape(m, n_sites * channels))

    out._backward = backward
    return out


def _col(frac: Tensor, site: int, m: int) -> Tensor:
    """Select one site column from [M, N] as [M, 1], differentiable."""
    out = Tensor(frac.data[:, site:site + 1].copy(), dtype=frac.data.dtype)
    out.requires_grad = frac.requires_grad
    out._parents = (frac,)

    def backward(g):
        full = np.zeros_like(frac.data)
        full[:, site:site + 1] = g
        frac._accumulate(full)

    out._backward = backward
    return out


def bench_latency(run_first, run_subsequent=None, repetitions: int = 5,
                  warmup: int = 1) -> dict:
    """Wall-clock statistics for a first-effect callable and, optionally,
    a subsequent-effect (feature reuse) callable."""
    if repetitions < 3:
        raise ValueError("repetitions must be >= 3")

    def measure(fn):
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        ordered = sorted(samples)
        return {
            "median": statistics.median(ordered),
            "p10": ordered[max(0, int(round(0.1 * (len(ordered) - 1))))],
            "p90": ordered[min(len(ordered) - 1, int(round(0.9 * (len(ordered) - 1))))],
            "samples": samples,
        }

    out = {"first": measure(run_first)}
    if run_subsequent is not None:
        out["subsequent"] = measure(run_subsequent)
    return out
