"""Architecture controller and task-agnostic consensus machinery.

The controller maps a task vector to per-site, per-channel gate logits
through a shared two-ReLU fully-connected trunk plus one linear head per
CS site. Consensus state tracks the EMA of logits across tasks, the
per-site agreement score, and the prefix decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


class ControllerNet:
    """3 fully-connected layers with 2 ReLU activations: trunk
    task_dim -> hidden -> hidden, then per-site heads hidden -> C
    (stored as one [N*C, hidden] matrix)."""

    def __init__(self, task_dim: int, num_sites: int, channels: int,
                 hidden: int = 64, seed: int = 0, dtype=np.float32):
        self.task_dim = task_dim
        self.num_sites = num_sites
        self.channels = channels
        self.hidden = hidden
        rng = np.random.default_rng(seed)

        def lin(dout, din):
            w = Tensor(rng.normal(0, np.sqrt(2.0 / din), (dout, din)).astype(dtype),
                       requires_grad=True)
            b = Tensor(np.zeros(dout, dtype=dtype), requires_grad=True)
            return w, b

        self.fc1 = lin(hidden, task_dim)
        self.fc2 = lin(hidden, hidden)
        self.head = lin(num_sites * channels, hidden)
        # start from the full network but close to the gate boundary, so
        # the resource pressure can actually flip channels: small positive
        # bias, near-zero head weights
        self.head[0].data[:] *= 0.01
        self.head[1].data[:] = 0.1
        self.params = {"fc1.w": self.fc1[0], "fc1.b": self.fc1[1],
                       "fc2.w": self.fc2[0], "fc2.b": self.fc2[1],
                       "head.w": self.head[0], "head.b": self.head[1]}

    def parameters(self):
        return list(self.params.values())

    def flops(self) -> int:
        """Controller-evaluation cost for one task vector (the epsilon term):
        fully-connected MACs at 2 FLOPs each."""
        return 2 * (self.task_dim * self.hidden + self.hidden * self.hidden
                    + self.hidden * self.num_sites * self.channels)

    def predict_zs(self, t: Tensor) -> Tensor:
        """[M, task_dim] batch -> [M, N*C] gate logits (reshape to
        [M, N, C] is the caller's business)."""
        if np.any(t.data < 0) or np.any(t.data > 1):
            raise ValueError("task vectors must lie in [0,1]")
        h = T.relu(T.fully_connected(t, *self.fc1))
        h = T.relu(T.fully_connected(h, *self.fc2))
        return T.fully_connected(h, *self.head)


def site_gates(zs: Tensor, num_sites: int, channels: int):
    """Split a [M, N*C] logit batch into N per-site binary gate tensors of
    shape [M, C, 1, 1], differentiable back into the logits."""
    m = zs.shape[0]
    g = T.ste_gate(zs)
    gates = []
    for n in range(num_sites):
        lo = n * channels
        out = Tensor(g.data[:, lo:lo + channels].reshape(m, channels, 1, 1).copy(),
                     dtype=g.data.dtype)
        out.requires_grad = g.requires_grad
        out._parents = (g,)

        def backward(grad, lo=lo):
            full = np.zeros_like(g.data)
            full[:, lo:lo + channels] = grad.reshape(m, channels)
            g._accumulate(full)

        out._backward = backward
        gates.append(out)
    return gates


def gate_forward(z: np.ndarray) -> np.ndarray:
    """Forward-binary gate on raw logits (no autodiff)."""
    return (np.asarray(z) > 0).astype(np.float64)


@dataclass
class ConsensusState:
    """EMA consensus logits z_a [N, C], agreement scores s [N], prefix
    decision phi [N], with the shared EMA rate alpha and threshold gamma."""
    z_a: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    alpha: float
    gamma: float

    @staticmethod
    def fresh(num_sites: int, channels: int, alpha: float, gamma: float):
        return ConsensusState(
            z_a=np.zeros((num_sites, channels)),
            s=np.zeros(num_sites),
            phi=np.zeros(num_sites, dtype=bool),
            alpha=alpha, gamma=gamma)

    def prefix_len(self) -> int:
        return int(self.phi.sum())

    def to_dict(self):
        return {"z_a": self.z_a.tolist(), "s": self.s.tolist(),
                "phi": self.phi.astype(int).tolist(),
                "alpha": self.alpha, "gamma": self.gamma}

    @staticmethod
    def from_dict(d):
        return ConsensusState(
            z_a=np.array(d["z_a"], dtype=np.float64),
            s=np.array(d["s"], dtype=np.float64),
            phi=np.array(d["phi"], dtype=bool),
            alpha=float(d["alpha"]), gamma=float(d["gamma"]))


def update_za(state: ConsensusState, zs_batch: np.ndarray) -> np.ndarray:
    """EMA pull of the consensus logits toward the batch-mean task logits:
    z_a <- (1-alpha) z_a + alpha * mean_m zs."""
    zs_batch = np.asarray(zs_batch, dtype=np.float64)
    state.z_a = (1 - state.alpha) * state.z_a + state.alpha * zs_batch.mean(axis=0)
    return state.z_a


def agreement(zs_batch: np.ndarray, z_a: np.ndarray, n: int, gamma: float) -> int:
    """Per-site batch agreement indicator: 1 iff the mean per-task overlap
    with the consensus active set strictly exceeds gamma times the consensus
    active count. An all-inactive consensus row yields 0."""
    ga = gate_forward(z_a[n])
    gs = gate_forward(np.asarray(zs_batch)[:, n, :])
    lhs = (gs * ga).sum(axis=1).mean()
    rhs = gamma * ga.sum()
    return int(lhs > rhs)


def update_s(state: ConsensusState, eta: np.ndarray) -> np.ndarray:
    """s_n <- (1-alpha) s_n + alpha * eta_n."""
    eta = np.asarray(eta, dtype=np.float64)
    state.s = (1 - state.alpha) * state.s + state.alpha * eta
    return state.s


def compute_phi(s: np.ndarray, gamma: float) -> np.ndarray:
    """Longest prefix with every score strictly above gamma."""
    above = np.asarray(s) > gamma
    phi = np.logical_and.accumulate(above)
    return phi


def consensus_step(state: ConsensusState, zs_batch: np.ndarray) -> np.ndarray:
    """One post-update bookkeeping pass: EMA, agreement, score, prefix."""
    num_sites = state.z_a.shape[0]
    update_za(state, zs_batch)
    eta = np.array([agreement(zs_batch, state.z_a, n, state.gamma)
                    for n in range(num_sites)])
    update_s(state, eta)
    state.phi = compute_phi(state.s, state.gamma)
    return eta


def r2_penalty(zs: Tensor, z_a: np.ndarray, phi: np.ndarray,
               num_sites: int, channels: int) -> Tensor:
    """Disagreement penalty: sum over sites n of phi_{n-1} times the L1
    distance between each task's binary mask and the consensus mask, with
    phi_0 == 1 (the input image is always shared). Gradients flow into the
    task logits through the gate surrogate; z_a is a constant."""
    m = zs.shape[0]
    gz = T.ste_gate(zs)  # [M, N*C]
    ga = gate_forward(z_a).reshape(1, num_sites * channels)
    ga = np.broadcast_to(ga, (m, num_sites * channels))
    # |g(zs) - g(za)| with g(za) constant in {0,1}:
    #   = g(zs) + g(za) - 2 g(zs) g(za)
    ga_t = Tensor(ga.astype(gz.data.dtype))
    one_minus_2ga = Tensor((1.0 - 2.0 * ga).astype(gz.data.dtype))
    absdiff = T.mul(gz, one_minus_2ga) + ga_t
    # weight per site: phi_{n-1}, phi_0 == 1
    w = np.empty(num_sites)
    w[0] = 1.0
    w[1:] = np.asarray(phi, dtype=np.float64)[:num_sites - 1]
    w_full = np.repeat(w, channels).reshape(1, num_sites * channels)
    w_full = np.broadcast_to(w_full, (m, num_sites * channels))
    return T.tsum(T.mul(absdiff, Tensor(w_full.astype(gz.data.dtype))))
