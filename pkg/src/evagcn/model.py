"""Dual-branch classifier: AGCN on the point and voxel graphs, concatenated read-outs, MLP head.

Head layout: ``linear -> batch norm -> relu -> dropout -> linear -> log_softmax``.
The first linear layer has no bias because batch norm removes it anyway.
"""

from dataclasses import dataclass, field

import numpy as np

from .agcn import AgcnTape, GraphBatch, agcn_backward, agcn_forward, init_params, preactivations

BRANCH_MODES = ("dual", "point_only", "voxel_only")
READOUTS = ("absorbing", "max")
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ModelParams:
    point: object            # AgcnParams or None
    voxel: object            # AgcnParams or None
    head: dict               # W1, gamma, beta, W2, b2
    buffers: dict            # running_mean, running_var
    num_classes: int
    dropout: float = 0.5
    readout: str = "absorbing"
    activation: str = "relu"

    @property
    def branch_mode(self):
        if self.point is not None and self.voxel is not None:
            return "dual"
        return "point_only" if self.point is not None else "voxel_only"

    def named_parameters(self):
        out = {}
        if self.point is not None:
            out.update(self.point.named_arrays("point."))
        if self.voxel is not None:
            out.update(self.voxel.named_arrays("voxel."))
        out.update({f"head.{k}": v for k, v in self.head.items()})
        return out

    def named_buffers(self):
        return {f"head.{k}": v for k, v in self.buffers.items()}

    def copy(self):
        from copy import deepcopy
        return deepcopy(self)


def init_model(point_in, voxel_in, num_classes, hidden_dim=64, num_blocks=3, num_kernels=8,
               head_hidden=128, dropout=0.5, branch_mode="dual", readout="absorbing", seed=0):
    if branch_mode not in BRANCH_MODES:
        raise ValueError(f"unknown branch mode {branch_mode!r}")
    if readout not in READOUTS:
        raise ValueError(f"unknown readout {readout!r}")
    ss = np.random.SeedSequence(seed).spawn(3)
    point = voxel = None
    if branch_mode in ("dual", "point_only"):
        point = init_params(point_in, hidden_dim, num_blocks, num_kernels, seed=ss[0])
    if branch_mode in ("dual", "voxel_only"):
        voxel = init_params(voxel_in, hidden_dim, num_blocks, num_kernels, seed=ss[1])
    width = (point.out_dim if point else 0) + (voxel.out_dim if voxel else 0)
    rng = np.random.default_rng(ss[2])
    head = {
        "W1": rng.normal(0.0, np.sqrt(2.0 / width), size=(head_hidden, width)),
        "gamma": np.ones(head_hidden),
        "beta": np.zeros(head_hidden),
        "W2": rng.normal(0.0, np.sqrt(1.0 / head_hidden), size=(num_classes, head_hidden)),
        "b2": np.zeros(num_classes),
    }
    buffers = {"running_mean": np.zeros(head_hidden), "running_var": np.ones(head_hidden)}
    return ModelParams(point, voxel, head, buffers, num_classes, dropout, readout)


class ModelTape:
    pass


def _readout(H, batch, how):
    if how == "absorbing":
        return H[batch.absorbing], None
    rows = np.empty((len(batch), H.shape[1]))
    arg = np.empty((len(batch), H.shape[1]), dtype=np.int64)
    for g, seg in enumerate(batch.segments()):
        block = H[seg]
        a = np.argmax(block, axis=0)
        arg[g] = a + seg.start
        rows[g] = block[a, np.arange(H.shape[1])]
    return rows, arg


def _readout_backward(dR, batch, num_nodes, how, arg):
    dH = np.zeros((num_nodes, dR.shape[1]))
    if how == "absorbing":
        dH[batch.absorbing] = dR
    else:
        cols = np.broadcast_to(np.arange(dR.shape[1]), arg.shape)
        np.add.at(dH, (arg, cols), dR)
    return dH


def forward(model, point_batch, voxel_batch, mode="eval", rng=None, tape=None):
    """Log class probabilities, one row per graph in the batch.

    ``train`` mode uses batch statistics (and updates the running ones) and
    applies dropout drawn from ``rng``; ``eval`` mode is deterministic.
    """
    if mode not in ("train", "eval"):
        raise ValueError("mode must be 'train' or 'eval'")
    parts, branch_tapes = [], []
    for params, batch in ((model.point, point_batch), (model.voxel, voxel_batch)):
        if params is None:
            continue
        if batch is None:
            raise ValueError("graph batch missing for an active branch")
        X = batch.node_features()
        if X.shape[1] != params.in_dim:
            raise ValueError(f"graph feature width {X.shape[1]} != branch input width {params.in_dim}")
        bt = AgcnTape() if tape is not None else None
        H = agcn_forward(batch, X, params, model.activation, bt)
        R, arg = _readout(H, batch, model.readout)
        parts.append(R)
        branch_tapes.append((params, batch, bt, arg, H.shape[0]))
    Z = np.concatenate(parts, axis=1)

    h = model.head
    a = Z @ h["W1"].T
    if mode == "train":
        mean = a.mean(axis=0)
        var = a.var(axis=0)
        n = len(a)
        buf = model.buffers
        buf["running_mean"] *= 1.0 - BN_MOMENTUM
        buf["running_mean"] += BN_MOMENTUM * mean
        buf["running_var"] *= 1.0 - BN_MOMENTUM
        buf["running_var"] += BN_MOMENTUM * (var * n / (n - 1) if n > 1 else var)
    else:
        mean, var = model.buffers["running_mean"], model.buffers["running_var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (a - mean) * inv_std
    y = h["gamma"] * xhat + h["beta"]
    r = np.maximum(y, 0.0) if model.activation == "relu" else y
    if mode == "train" and model.dropout > 0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(r.shape) >= model.dropout) / (1.0 - model.dropout)
    else:
        mask = np.ones_like(r)
    hid = r * mask
    logits = hid @ h["W2"].T + h["b2"]
    m = logits.max(axis=1, keepdims=True)
    logp = logits - (m + np.log(np.sum(np.exp(logits - m), axis=1, keepdims=True)))

    if tape is not None:
        tape.branches = branch_tapes
        tape.Z, tape.xhat, tape.y, tape.inv_std = Z, xhat, y, inv_std
        tape.mask, tape.hid, tape.logp, tape.mode = mask, hid, logp, mode
        tape.model = model
    return logp


def nll_loss(log_probs, labels):
    """Mean negative log-likelihood of ``labels`` (scalar or per-row)."""
    log_probs = np.atleast_2d(log_probs)
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape[0] != log_probs.shape[0]:
        raise ValueError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= log_probs.shape[1]):
        raise ValueError("label outside [0, num_classes)")
    return float(-np.mean(log_probs[np.arange(len(labels)), labels]))


def backward(tape, labels):
    """Gradients of the mean NLL loss w.r.t. every trainable array (keys as in named_parameters)."""
    model = tape.model
    h = model.head
    n = len(labels)
    dlogits = np.exp(tape.logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    grads = {"head.W2": dlogits.T @ tape.hid, "head.b2": dlogits.sum(axis=0)}
    dr = (dlogits @ h["W2"]) * tape.mask
    dy = dr * (tape.y > 0) if model.activation == "relu" else dr
    grads["head.gamma"] = np.sum(dy * tape.xhat, axis=0)
    grads["head.beta"] = dy.sum(axis=0)
    dxhat = dy * h["gamma"]
    if tape.mode == "train":
        da = tape.inv_std / n * (n * dxhat - dxhat.sum(axis=0)
                                 - tape.xhat * np.sum(dxhat * tape.xhat, axis=0))
    else:
        da = dxhat * tape.inv_std
    grads["head.W1"] = da.T @ tape.Z
    dZ = da @ h["W1"]

    col = 0
    for params, batch, bt, arg, num_nodes in tape.branches:
        width = params.out_dim
        up = _readout_backward(dZ[:, col:col + width], batch, num_nodes, model.readout, arg)
        col += width
        prefix = "point." if params is model.point else "voxel."
        block_grads, _ = agcn_backward(bt, up)
        for b, gd in enumerate(block_grads):
            for k, v in gd.items():
                grads[f"{prefix}{b}.{k}"] = v
    return grads


def tape_preactivations(tape):
    parts = [preactivations(bt) for _, _, bt, _, _ in tape.branches]
    parts.append(tape.y.ravel())
    return np.concatenate(parts)


def embed(model, point_batch, voxel_batch):
    """Eval-mode concatenated read-out vectors (the head's input), one row per graph."""
    parts = []
    for params, batch in ((model.point, point_batch), (model.voxel, voxel_batch)):
        if params is None:
            continue
        H = agcn_forward(batch, batch.node_features(), params, model.activation)
        parts.append(_readout(H, batch, model.readout)[0])
    return np.concatenate(parts, axis=1)


def make_batches(samples, branch_mode):
    """GraphBatch pair for a list of preprocessed samples (missing branch -> None)."""
    point = GraphBatch([s.point_graph for s in samples]) if branch_mode != "voxel_only" else None
    voxel = GraphBatch([s.voxel_graph for s in samples]) if branch_mode != "point_only" else None
    return point, voxel
