"""Central finite-difference checks of the hand-written gradients."""

from dataclasses import dataclass, field

import numpy as np

from .agcn import GraphBatch
from .graph import build_radius_graph
from .model import ModelTape, backward, forward, init_model, nll_loss, tape_preactivations

# relative error denominator floor; keeps vanishing gradients from dividing by ~0
REL_FLOOR = 1e-6


@dataclass
class GroupResult:
    max_rel_error: float = 0.0
    checked: int = 0
    skipped: int = 0


@dataclass
class GradCheckReport:
    tolerance: float
    groups: dict = field(default_factory=dict)

    @property
    def max_rel_error(self):
        return max((g.max_rel_error for g in self.groups.values()), default=0.0)

    @property
    def passed(self):
        return all(g.max_rel_error < self.tolerance for g in self.groups.values())

    def lines(self):
        for name, g in self.groups.items():
            flag = "ok" if g.max_rel_error < self.tolerance else "FAIL"
            yield f"{name:<20s} max_rel={g.max_rel_error:.3e} checked={g.checked} skipped={g.skipped} {flag}"


def relative_error(a, b):
    return abs(a - b) / max(abs(a), abs(b), REL_FLOOR)


def gradient_check(loss_fn, params, grads, epsilon=1e-5, tolerance=1e-4, preactivations=None):
    """Compare ``grads`` with central differences of ``loss_fn()`` over every entry of ``params``.

    ``params`` maps names to arrays that ``loss_fn`` reads; entries are
    perturbed in place and restored.  With ``preactivations`` (a callable
    returning every relu input at the current parameters), coordinates whose
    perturbation moves a relu input across zero or leaves it within
    ``10 * epsilon`` of zero are skipped.
    """
    report = GradCheckReport(tolerance)
    base = preactivations() if preactivations is not None else None
    for name, arr in params.items():
        res = GroupResult()
        g = grads[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + epsilon
            fp = loss_fn()
            pp = preactivations() if base is not None else None
            arr[idx] = orig - epsilon
            fm = loss_fn()
            pm = preactivations() if base is not None else None
            arr[idx] = orig
            if base is not None:
                moved = (pp != base) | (pm != base)
                kink = np.any(np.sign(pp) != np.sign(pm)) or np.any(np.abs(base[moved]) < 10 * epsilon)
                if kink:
                    res.skipped += 1
                    continue
            num = (fp - fm) / (2 * epsilon)
            res.max_rel_error = max(res.max_rel_error, relative_error(float(g[idx]), num))
            res.checked += 1
        report.groups[name] = res
    return report


def random_instance(seed, max_nodes=30, batch=3, num_classes=3, hidden=4, kernels=2,
                    head_hidden=6, branch_mode="dual", activation="relu"):
    """Small random model plus a batch of graph pairs (< 1,000 parameters)."""
    rng = np.random.default_rng(seed)
    blocks = int(rng.integers(1, 4))

    def graphs(F):
        out = []
        for _ in range(batch):
            M = int(rng.integers(2, max_nodes + 1))
            coords = rng.uniform(0, 6, size=(M, 3))
            out.append(build_radius_graph(coords, rng.normal(size=(M, F)), rng.uniform(1.0, 4.0)))
        return out

    pg = GraphBatch(graphs(4)) if branch_mode != "voxel_only" else None
    vg = GraphBatch(graphs(5)) if branch_mode != "point_only" else None
    model = init_model(4, 5, num_classes, hidden_dim=hidden, num_blocks=blocks, num_kernels=kernels,
                       head_hidden=head_hidden, dropout=0.0, branch_mode=branch_mode,
                       seed=int(rng.integers(2 ** 31)))
    model.activation = activation
    for v in model.head.values():
        v += rng.normal(0, 0.1, size=v.shape)
    model.buffers["running_mean"][:] = rng.normal(0, 0.5, size=head_hidden)
    model.buffers["running_var"][:] = rng.uniform(0.5, 2.0, size=head_hidden)
    labels = rng.integers(0, num_classes, size=batch)
    mode = "train" if seed % 2 == 0 else "eval"
    return model, pg, vg, labels, mode


def check_model(model, point_batch, voxel_batch, labels, mode="train", epsilon=1e-5,
                tolerance=1e-4, corrupt=False):
    """Finite-difference check of :func:`evagcn.model.backward` for the mean NLL loss.

    Train mode uses batch-norm batch statistics; dropout must be 0.  With
    ``corrupt`` the largest alpha gradient is inflated by 10% first (a
    mutation test: the check must then fail).
    """
    if mode == "train" and model.dropout > 0:
        raise ValueError("gradient check needs dropout = 0")
    saved = {k: v.copy() for k, v in model.buffers.items()}
    tape = ModelTape()
    forward(model, point_batch, voxel_batch, mode, None, tape)
    grads = backward(tape, labels)
    if corrupt:
        name = next(k for k in grads if k.endswith(".alpha"))
        g = grads[name]
        g[np.unravel_index(np.argmax(np.abs(g)), g.shape)] *= 1.1

    def restore():
        for k, v in saved.items():
            model.buffers[k][:] = v

    def loss():
        out = forward(model, point_batch, voxel_batch, mode)
        restore()
        return nll_loss(out, labels)

    def pre():
        t = ModelTape()
        forward(model, point_batch, voxel_batch, mode, None, t)
        restore()
        return tape_preactivations(t)

    restore()
    use_pre = pre if model.activation == "relu" else None
    return gradient_check(loss, model.named_parameters(), grads, epsilon, tolerance, use_pre)


def run_battery(seed=0, count=50, tolerance=1e-4, epsilon=1e-5, corrupt=False):
    """Check ``count`` random instances; yields ``(index, num_params, report)``."""
    modes = ("dual", "point_only", "voxel_only")
    for i in range(count):
        model, pg, vg, labels, mode = random_instance(seed * 100_003 + i, branch_mode=modes[i % 3])
        n = sum(v.size for v in model.named_parameters().values())
        yield i, n, check_model(model, pg, vg, labels, mode, epsilon, tolerance, corrupt)
