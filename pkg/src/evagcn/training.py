"""Mini-batch Adam training, evaluation and embedding export."""

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .model import ModelTape, backward, embed, forward, init_model, make_batches, nll_loss

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "train_top1", "test_top1", "lr")


class NumericalError(RuntimeError):
    pass


@dataclass
class Adam:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params, grads):
        """In-place update of ``params`` (name -> array) from ``grads``."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = grads[name]
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            if self.lr:
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def feature_widths(samples):
    s = samples[0]
    pw = s.point_graph.features.shape[1] if s.point_graph is not None else 0
    vw = s.voxel_graph.features.shape[1] if s.voxel_graph is not None else 0
    return pw, vw


def build_model(cfg, num_classes, point_in, voxel_in):
    m, t = cfg.model, cfg.train
    return init_model(point_in, voxel_in, num_classes, hidden_dim=m.hidden_dim,
                      num_blocks=m.num_blocks, num_kernels=m.num_kernels,
                      head_hidden=m.head_hidden, dropout=t.dropout,
                      branch_mode=t.branch_mode, readout=m.readout, seed=t.seed)


@dataclass
class TrainState:
    model: object
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    history: list = field(default_factory=list)


def _fmt(v):
    return repr(float(v))


def metrics_row(row):
    return ",".join([str(row["epoch"])] + [_fmt(row[k]) for k in METRICS_HEADER[1:]])


def train(train_samples, test_samples, cfg, num_classes, state=None, metrics_path=None,
          progress=None):
    """Train for ``cfg.train.epochs`` epochs; deterministic given the config seeds.

    Each epoch shuffles with the state's generator, which also drives dropout.
    Appends one metrics row per epoch to ``metrics_path`` if given.
    """
    tc = cfg.train
    if not train_samples:
        raise ValueError("training split is empty")
    if state is None:
        pw, vw = feature_widths(train_samples)
        model = build_model(cfg, num_classes, pw, vw)
        rng = np.random.default_rng(np.random.SeedSequence(tc.seed).spawn(4)[3])
        state = TrainState(model, Adam(lr=tc.lr), rng)
    model, opt, rng = state.model, state.optimizer, state.rng
    params = model.named_parameters()
    n = len(train_samples)
    if metrics_path is not None and state.epoch == 0:
        with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(METRICS_HEADER) + "\n")

    while state.epoch < tc.epochs:
        e = state.epoch
        opt.lr = tc.lr_at(e)
        perm = rng.permutation(n)
        loss_sum, correct = 0.0, 0
        for b_i, start in enumerate(range(0, n, tc.batch_size)):
            batch = [train_samples[i] for i in perm[start:start + tc.batch_size]]
            labels = np.array([s.label for s in batch])
            pb, vb = make_batches(batch, model.branch_mode)
            tape = ModelTape()
            logp = forward(model, pb, vb, "train", rng, tape)
            loss = nll_loss(logp, labels)
            if not np.isfinite(loss):
                ids = ", ".join(s.id for s in batch)
                raise NumericalError(f"non-finite loss {loss} at epoch {e + 1}, batch {b_i} (samples {ids})")
            grads = backward(tape, labels)
            opt.step(params, grads)
            loss_sum += loss * len(batch)
            correct += int(np.sum(np.argmax(logp, axis=1) == labels))
        test_top1 = evaluate(model, test_samples)["top1"] if test_samples else float("nan")
        row = {"epoch": e + 1, "train_loss": loss_sum / n, "train_top1": correct / n,
               "test_top1": test_top1, "lr": opt.lr}
        state.history.append(row)
        state.epoch += 1
        if metrics_path is not None:
            with open(metrics_path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(metrics_row(row) + "\n")
        log.info("epoch %d loss %.4f train %.3f test %.3f lr %g", e + 1, row["train_loss"],
                 row["train_top1"], test_top1, opt.lr)
        if progress is not None:
            progress(row)
    return state


def predict(model, samples, batch_size=32):
    out = []
    for start in range(0, len(samples), batch_size):
        pb, vb = make_batches(samples[start:start + batch_size], model.branch_mode)
        out.append(forward(model, pb, vb, "eval"))
    return np.concatenate(out) if out else np.zeros((0, model.num_classes))


def evaluate(model, samples, batch_size=32):
    """Top-1 / top-5 accuracy, confusion matrix (rows = true class) and per-sample log."""
    C = model.num_classes
    logp = predict(model, samples, batch_size)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    pred = np.argmax(logp, axis=1) if len(samples) else np.zeros(0, dtype=np.int64)
    conf = np.zeros((C, C), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    n = max(len(samples), 1)
    top1 = float(np.sum(pred == labels)) / n
    top5 = None
    if C >= 5:
        # stable ordering: ties resolved toward lower class index
        order = np.argsort(-logp, axis=1, kind="stable")[:, :5]
        top5 = float(np.sum(np.any(order == labels[:, None], axis=1))) / n
    rows = [{"id": s.id, "label": int(l), "pred": int(p), "log_probs": lp.tolist()}
            for s, l, p, lp in zip(samples, labels, pred, logp)]
    return {"top1": top1, "top5": top5, "confusion": conf, "samples": rows}


def embeddings(model, samples, batch_size=32):
    out = []
    for start in range(0, len(samples), batch_size):
        pb, vb = make_batches(samples[start:start + batch_size], model.branch_mode)
        out.append(embed(model, pb, vb))
    return np.concatenate(out)


def export_embeddings(model, samples, path):
    """CSV rows ``sample_id,label,e0,e1,...`` of eval-mode read-out vectors."""
    E = embeddings(model, samples)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "label"] + [f"e{i}" for i in range(E.shape[1])])
    for s, row in zip(samples, E):
        w.writerow([s.id, s.label] + [repr(float(v)) for v in row])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())
    return E


def confusion_csv(conf, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        C = conf.shape[0]
        fh.write("true\\pred," + ",".join(str(c) for c in range(C)) + "\n")
        for c in range(C):
            fh.write(f"{c}," + ",".join(str(int(v)) for v in conf[c]) + "\n")
