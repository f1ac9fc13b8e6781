"""Absorbing graph convolution with Gaussian-mixture edge kernels.

Each layer computes, for every receiving node ``u`` and channel ``d``::

    H_out[u, d] = relu( sum_{v -> u} w_d(z_uv) * (Theta @ H_in[v])[d] )
    w_d(z)      = sum_k alpha[d, k] * exp(-0.5 * sum_j (z_j - mu[k, j])**2 / var[k, j])

where ``v -> u`` runs over radius neighbours plus the absorbing node for event
nodes, and over all event nodes for the absorbing node.  ``z_uv`` is the
degree pseudo-coordinate of the directed edge.  Several graphs are processed
at once as a disjoint union (:class:`GraphBatch`).

Backward passes are written out by hand; everything is float64.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit


@dataclass
class GmmKernelParams:
    mu: np.ndarray        # (K_g, 2)
    log_var: np.ndarray   # (K_g, 2), log of the diagonal covariance
    alpha: np.ndarray     # (D, K_g)

    @property
    def num_kernels(self):
        return len(self.mu)

    def validate(self):
        var = np.exp(self.log_var)
        if not (np.all(np.isfinite(self.mu)) and np.all(np.isfinite(self.alpha))
                and np.all(np.isfinite(var)) and np.all(var > 0)):
            raise ValueError("GMM kernel parameters must be finite with positive variances")


@dataclass
class AgcnLayerParams:
    kernel: GmmKernelParams
    theta: np.ndarray     # (D, F_in)

    @property
    def in_dim(self):
        return self.theta.shape[1]

    @property
    def out_dim(self):
        return self.theta.shape[0]

    def arrays(self):
        return {"mu": self.kernel.mu, "log_var": self.kernel.log_var,
                "alpha": self.kernel.alpha, "theta": self.theta}

    def validate(self):
        self.kernel.validate()
        K = self.kernel.num_kernels
        if self.kernel.mu.shape != (K, 2) or self.kernel.log_var.shape != (K, 2):
            raise ValueError("mu and log_var must be (K_g, 2)")
        if self.kernel.alpha.shape != (self.out_dim, K):
            raise ValueError(f"alpha must be ({self.out_dim}, {K}), got {self.kernel.alpha.shape}")


@dataclass
class AgcnParams:
    blocks: list

    def validate(self):
        if not self.blocks:
            raise ValueError("AGCN needs at least one block")
        for b, layer in enumerate(self.blocks):
            layer.validate()
            if b and layer.in_dim != self.blocks[b - 1].out_dim:
                raise ValueError(f"block {b} in_dim {layer.in_dim} != previous out_dim")
        if len(self.blocks) > 1 and self.blocks[-1].out_dim != self.blocks[0].out_dim:
            raise ValueError("first and last block widths differ; residual is ill-typed")
        return self

    @property
    def in_dim(self):
        return self.blocks[0].in_dim

    @property
    def out_dim(self):
        return self.blocks[-1].out_dim

    def named_arrays(self, prefix=""):
        out = {}
        for b, layer in enumerate(self.blocks):
            for k, v in layer.arrays().items():
                out[f"{prefix}{b}.{k}"] = v
        return out


def init_params(in_dim, hidden_dim=64, num_blocks=3, num_kernels=8, seed=0):
    """Random AGCN weights: mu ~ U[0,1]^2, unit variances, fan-in scaled normal alpha and Theta."""
    rng = np.random.default_rng(seed)
    blocks = []
    f_in = in_dim
    for _ in range(num_blocks):
        kernel = GmmKernelParams(
            mu=rng.uniform(0.0, 1.0, size=(num_kernels, 2)),
            log_var=np.zeros((num_kernels, 2)),
            alpha=rng.normal(0.0, np.sqrt(1.0 / num_kernels), size=(hidden_dim, num_kernels)),
        )
        theta = rng.normal(0.0, np.sqrt(1.0 / f_in), size=(hidden_dim, f_in))
        blocks.append(AgcnLayerParams(kernel, theta))
        f_in = hidden_dim
    return AgcnParams(blocks).validate()


def gmm_weight(z, kernel, d):
    """Kernel weight of channel ``d`` at pseudo-coordinate ``z``."""
    z = np.asarray(z, dtype=np.float64)
    diff = z[None, :] - kernel.mu
    q = np.sum(diff * diff * np.exp(-kernel.log_var), axis=1)
    return float(kernel.alpha[d] @ np.exp(-0.5 * q))


class GraphBatch:
    """Disjoint union of absorbing graphs, flattened into one directed message list.

    Node order is graph by graph, each graph's event nodes followed by its
    absorbing node.
    """

    def __init__(self, graphs):
        graphs = list(graphs)
        if not graphs:
            raise ValueError("empty graph batch")
        dst, src, ddeg, sdeg = [], [], [], []
        offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
        for g_i, g in enumerate(graphs):
            d, s, _ = g.message_edges()
            dst.append(d + offsets[g_i])
            src.append(s + offsets[g_i])
            ddeg.append(g.degrees[d])
            sdeg.append(g.degrees[s])
            offsets[g_i + 1] = offsets[g_i] + g.num_nodes
        self.graphs = graphs
        self.offsets = offsets
        self.num_nodes = int(offsets[-1])
        self.absorbing = offsets[1:] - 1
        self.dst = np.concatenate(dst)
        self.src = np.concatenate(src)
        ddeg, sdeg = np.concatenate(ddeg), np.concatenate(sdeg)
        # pseudo-coordinates only depend on the degree pair, so most edges share one
        base = int(max(ddeg.max(), sdeg.max())) + 1
        keys, self.z_index = np.unique(ddeg * base + sdeg, return_inverse=True)
        self.z_index = self.z_index.reshape(-1).astype(np.int64)
        self.z_unique = 1.0 / np.sqrt(np.column_stack([keys // base, keys % base]).astype(np.float64))
        self.event_mask = np.ones(self.num_nodes, dtype=bool)
        self.event_mask[self.absorbing] = False

    def __len__(self):
        return len(self.graphs)

    def node_features(self, features=None):
        """Stack per-graph event features, inserting a zero row for each absorbing node."""
        feats = [g.features for g in self.graphs] if features is None else list(features)
        F = feats[0].shape[1]
        X = np.zeros((self.num_nodes, F))
        for g_i, f in enumerate(feats):
            X[self.offsets[g_i]:self.absorbing[g_i]] = f
        return X

    def segments(self):
        """Per-graph slices of event-node rows."""
        return [slice(int(a), int(b)) for a, b in zip(self.offsets[:-1], self.absorbing)]


@njit(cache=True)
def _aggregate(dst, src, zi, Wu, M, N):
    D = M.shape[1]
    S = np.zeros((N, D))
    for e in range(dst.shape[0]):
        u, v, c = dst[e], src[e], zi[e]
        for d in range(D):
            S[u, d] += Wu[c, d] * M[v, d]
    return S


@njit(cache=True)
def _aggregate_backward(dst, src, zi, Wu, M, dS):
    D = M.shape[1]
    dM = np.zeros_like(M)
    dWu = np.zeros_like(Wu)
    for e in range(dst.shape[0]):
        u, v, c = dst[e], src[e], zi[e]
        for d in range(D):
            g = dS[u, d]
            dM[v, d] += Wu[c, d] * g
            dWu[c, d] += g * M[v, d]
    return dM, dWu


ACTIVATIONS = ("relu", "identity")


class LayerTape:
    __slots__ = ("H_in", "G", "diff", "inv_var", "Wu", "msg_in", "S", "activation")


def layer_forward(batch, H_in, params, activation="relu", tape=None):
    """One absorbing graph convolution. Returns ``H_out``; fills ``tape`` for backward if given."""
    if H_in.shape != (batch.num_nodes, params.in_dim):
        raise ValueError(f"H_in has shape {H_in.shape}, expected ({batch.num_nodes}, {params.in_dim})")
    k = params.kernel
    inv_var = np.exp(-k.log_var)
    diff = batch.z_unique[:, None, :] - k.mu[None, :, :]
    G = np.exp(-0.5 * np.einsum("ukj,kj->uk", diff * diff, inv_var))
    Wu = G @ k.alpha.T
    msg_in = np.ascontiguousarray(H_in @ params.theta.T)
    S = _aggregate(batch.dst, batch.src, batch.z_index, Wu, msg_in, batch.num_nodes)
    if tape is not None:
        tape.H_in, tape.G, tape.diff, tape.inv_var = H_in, G, diff, inv_var
        tape.Wu, tape.msg_in, tape.S, tape.activation = Wu, msg_in, S, activation
    return np.maximum(S, 0.0) if activation == "relu" else S


def layer_backward(batch, params, tape, dH_out):
    """Gradients ``(grads, dH_in)`` of one layer given the upstream gradient ``dH_out``."""
    k = params.kernel
    dS = dH_out * (tape.S > 0) if tape.activation == "relu" else dH_out
    dmsg_in, dWu = _aggregate_backward(batch.dst, batch.src, batch.z_index, tape.Wu,
                                       tape.msg_in, np.ascontiguousarray(dS))
    dG = (dWu @ k.alpha) * tape.G
    grads = {
        "theta": dmsg_in.T @ tape.H_in,
        "alpha": dWu.T @ tape.G,
        "mu": np.einsum("uk,ukj->kj", dG, tape.diff) * tape.inv_var,
        "log_var": 0.5 * np.einsum("uk,ukj->kj", dG, tape.diff * tape.diff) * tape.inv_var,
    }
    return grads, dmsg_in @ params.theta


class AgcnTape:
    def __init__(self):
        self.layers = []
        self.batch = None
        self.params = None


def agcn_forward(batch, X, params, activation="relu", tape=None):
    """Stack of layers with a residual from the first layer's output to the last."""
    if not params.blocks:
        raise ValueError("AGCN needs at least one block")
    if tape is not None:
        tape.batch, tape.params, tape.layers = batch, params, []
    H = X
    first = None
    for b, layer in enumerate(params.blocks):
        lt = LayerTape() if tape is not None else None
        if b and H.shape[1] != layer.in_dim:
            raise ValueError(f"block {b} expects width {layer.in_dim}, got {H.shape[1]}")
        H = layer_forward(batch, H, layer, activation, lt)
        if tape is not None:
            tape.layers.append(lt)
        if b == 0:
            first = H
    if len(params.blocks) > 1:
        H = H + first
    return H


def agcn_backward(tape, upstream):
    """Per-block gradient dicts and the gradient w.r.t. the input features."""
    if tape is None or not tape.layers:
        raise ValueError("agcn_backward needs a tape filled by agcn_forward")
    blocks = tape.params.blocks
    B = len(blocks)
    grads = [None] * B
    dH = upstream
    for b in range(B - 1, -1, -1):
        if b == 0 and B > 1:
            dH = dH + upstream
        grads[b], dH = layer_backward(tape.batch, blocks[b], tape.layers[b], dH)
    return grads, dH


def preactivations(tape):
    """All pre-activation values recorded on a tape, flattened (for kink detection)."""
    return np.concatenate([lt.S.ravel() for lt in tape.layers])
