"""Frozen-embedding evaluation heads.

Three attention-pooled bag classifiers (plain, additive, conjunctive),
multinomial logistic probing for cell-level labels, and the shared
classification metrics.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    AdamState, Tape, Tensor, adam_step, add, affine, concat_cols,
    cross_entropy_logits, dropout, grad as backward, matmul, mul, param,
    relu, row_softmax, sum_rows, tanh, transpose,
)

log = logging.getLogger(__name__)

MIL_VARIANTS = ("abmil", "add_abmil", "conj_abmil")


@dataclass
class Bag:
    instances: np.ndarray        # (K, d)
    label: int

    def __post_init__(self):
        self.instances = np.asarray(self.instances, dtype=np.float32)
        if self.instances.ndim != 2 or self.instances.shape[0] < 1:
            raise ValueError("a bag needs at least one instance")


@dataclass
class MilConfig:
    variant: str = "abmil"
    attention_dim: int = 128
    classifier_layers: int = 1
    dropout: float = 0.2
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.variant not in MIL_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.classifier_layers not in (1, 2):
            raise ValueError("classifier must have 1 or 2 layers")


class MilModel:
    """Gated attention pooling + a small classifier over bag instances."""

    def __init__(self, in_dim, num_classes, config, rng):
        self.config = config
        self.in_dim = in_dim
        self.num_classes = num_classes

        def glorot(fi, fo):
            limit = np.sqrt(6.0 / (fi + fo))
            return rng.uniform(-limit, limit, size=(fi, fo)).astype(np.float32)

        d_att = config.attention_dim
        self.params = {"att.V": glorot(in_dim, d_att), "att.w": glorot(d_att, 1)}
        if config.classifier_layers == 1:
            self.params["clf.W0"] = glorot(in_dim, num_classes)
            self.params["clf.b0"] = np.zeros((1, num_classes), dtype=np.float32)
        else:
            self.params["clf.W0"] = glorot(in_dim, d_att)
            self.params["clf.b0"] = np.zeros((1, d_att), dtype=np.float32)
            self.params["clf.W1"] = glorot(d_att, num_classes)
            self.params["clf.b1"] = np.zeros((1, num_classes), dtype=np.float32)

    def as_tensors(self, tape):
        return {k: param(v, tape, name=k) for k, v in self.params.items()}


def attention_weights(h, pt):
    """Softmax-normalized attention over a bag; shape (1, K)."""
    scores = matmul(tanh(matmul(h, pt["att.V"])), pt["att.w"])   # (K, 1)
    return row_softmax(transpose(scores))


def _classifier(x, pt, config, rng=None, train=False):
    if config.classifier_layers == 1:
        return add(matmul(x, pt["clf.W0"]), pt["clf.b0"])
    hidden = relu(add(matmul(x, pt["clf.W0"]), pt["clf.b0"]))
    if train:
        hidden = dropout(hidden, config.dropout, rng, train=True)
    return add(matmul(hidden, pt["clf.W1"]), pt["clf.b1"])


def mil_forward(instances, pt, config, rng=None, train=False):
    """Bag logits (1, C) for the configured aggregation variant."""
    h = instances if isinstance(instances, Tensor) else Tensor(
        np.asarray(instances, dtype=np.float32), tape=pt["att.V"].tape)
    a = attention_weights(h, pt)                                  # (1, K)
    if config.variant == "abmil":
        pooled = matmul(a, h)                                     # (1, d)
        return _classifier(pooled, pt, config, rng=rng, train=train)
    weighted = mul(transpose(a), h)                               # (K, d)
    if config.variant == "add_abmil":
        return sum_rows(_classifier(weighted, pt, config, rng=rng, train=train))
    # conj_abmil
    return matmul(a, _classifier(h, pt, config, rng=rng, train=train))


def mil_predict_logits(model, bags):
    out = np.zeros((len(bags), model.num_classes), dtype=np.float64)
    for i, bag in enumerate(bags):
        tape = Tape()
        pt = model.as_tensors(tape)
        out[i] = mil_forward(bag.instances, pt, model.config).value[0]
    return out


def train_mil_model(bags, in_dim, num_classes, config, seed, epochs=100,
                    val_bags=None, patience=20):
    """Cross-entropy training with Adam; optional early stopping on
    validation macro-F1."""
    rng = np.random.default_rng(seed)
    model = MilModel(in_dim, num_classes, config, rng)
    adam = AdamState(lr=config.learning_rate)
    best_f1, best_params, since_best = -1.0, None, 0
    for epoch in range(epochs):
        order = np.random.default_rng([seed, epoch]).permutation(len(bags))
        for j, idx in enumerate(order):
            bag = bags[idx]
            tape = Tape()
            pt = model.as_tensors(tape)
            drop_rng = np.random.default_rng([seed, epoch, int(j)])
            logits = mil_forward(bag.instances, pt, config, rng=drop_rng, train=True)
            loss = cross_entropy_logits(logits, np.array([bag.label]))
            grads = backward(tape, loss, pt)
            adam_step(adam, pt, grads)
            for k, t in pt.items():
                model.params[k] = t.value
        if val_bags is not None:
            pred = mil_predict_logits(model, val_bags).argmax(axis=1)
            f1 = macro_f1(np.array([b.label for b in val_bags]), pred, num_classes)
            if f1 > best_f1 + 1e-12:
                best_f1, since_best = f1, 0
                best_params = {k: v.copy() for k, v in model.params.items()}
            else:
                since_best += 1
                if since_best >= patience:
                    break
    if best_params is not None:
        model.params = best_params
    return model


def stratified_folds(labels, k, seed):
    """Index lists for k stratified folds."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        rng.shuffle(idx)
        for pos, i in enumerate(idx):
            folds[pos % k].append(int(i))
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


DEFAULT_MIL_GRID = {
    "learning_rate": (1e-3, 1e-2),
    "dropout": (0.2, 0.5),
    "attention_dim": (128, 256),
    "classifier_layers": (1, 2),
}


@dataclass
class MilResult:
    variant: str
    best_config: MilConfig
    mean_val_f1: float
    test_metrics: dict
    grid_scores: list = field(default_factory=list)


def mil_train(train_bags, test_bags, variant, seed=0, folds=5, epochs=100,
              grid=None, patience=20):
    """Stratified k-fold grid search; the winning configuration's fold
    models are ensembled by logit averaging for test prediction."""
    train_labels = np.array([b.label for b in train_bags])
    if len(np.unique(train_labels)) < 2:
        raise ValueError("need at least two classes in the training bags")
    num_classes = int(max(max(train_labels), max(b.label for b in test_bags)) + 1)
    in_dim = train_bags[0].instances.shape[1]
    grid = grid or DEFAULT_MIL_GRID
    fold_idx = stratified_folds(train_labels, folds, seed)

    combos = list(itertools.product(grid["learning_rate"], grid["dropout"],
                                    grid["attention_dim"], grid["classifier_layers"]))
    best = None
    grid_scores = []
    for lr, drop, d_att, layers in combos:
        config = MilConfig(variant=variant, attention_dim=d_att,
                           classifier_layers=layers, dropout=drop, learning_rate=lr)
        fold_f1, fold_models = [], []
        for f in range(folds):
            val_ids = fold_idx[f]
            tr_ids = np.concatenate([fold_idx[j] for j in range(folds) if j != f])
            tr = [train_bags[i] for i in tr_ids]
            val = [train_bags[i] for i in val_ids]
            model = train_mil_model(tr, in_dim, num_classes, config,
                                    seed=seed + f, epochs=epochs, val_bags=val,
                                    patience=patience)
            pred = mil_predict_logits(model, val).argmax(axis=1)
            fold_f1.append(macro_f1(np.array([b.label for b in val]), pred, num_classes))
            fold_models.append(model)
        mean_f1 = float(np.mean(fold_f1))
        grid_scores.append((config, mean_f1))
        if best is None or mean_f1 > best[1]:
            best = (config, mean_f1, fold_models)

    config, mean_f1, fold_models = best
    logits = np.mean([mil_predict_logits(m, test_bags) for m in fold_models], axis=0)
    y_true = np.array([b.label for b in test_bags])
    y_pred = logits.argmax(axis=1)
    scores = _softmax_np(logits)
    return MilResult(variant=variant, best_config=config, mean_val_f1=mean_f1,
                     test_metrics=metrics(y_true, y_pred, scores, num_classes),
                     grid_scores=grid_scores)


# ---------------------------------------------------------------------------
# logistic probe


def logistic_probe(train_x, train_y, test_x, test_y, num_classes=None,
                   l2=1e-3, lr=0.1, epochs=300, seed=0):
    """Multinomial logistic regression by full-batch gradient descent with
    an L2 penalty on the weights. Deterministic given the seed."""
    train_x = np.asarray(train_x, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64)
    train_y = np.asarray(train_y, dtype=np.int64)
    test_y = np.asarray(test_y, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(train_y.max(), test_y.max()) + 1)
    if len(np.unique(train_y)) < 2:
        raise ValueError("degenerate single-class training fold")
    mu = train_x.mean(axis=0)
    sd = np.maximum(train_x.std(axis=0), 1e-8)
    xs = (train_x - mu) / sd
    n, d = xs.shape
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), train_y] = 1.0
    for _ in range(epochs):
        p = _softmax_np(xs @ w + b)
        gw = xs.T @ (p - onehot) / n + l2 * w
        gb = (p - onehot).mean(axis=0)
        w -= lr * gw
        b -= lr * gb
    xt = (test_x - mu) / sd
    scores = _softmax_np(xt @ w + b)
    pred = scores.argmax(axis=1)
    return (w, b, mu, sd), metrics(test_y, pred, scores, num_classes)


def probe_objective(x, y, w, b, l2):
    """Penalized mean negative log-likelihood of a fitted probe."""
    p = _softmax_np(np.asarray(x) @ w + b)
    n = len(y)
    nll = -np.log(np.maximum(p[np.arange(n), y], 1e-300)).mean()
    return nll + 0.5 * l2 * float((w ** 2).sum())


# ---------------------------------------------------------------------------
# metrics


def _softmax_np(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def macro_f1(y_true, y_pred, num_classes):
    """Unweighted mean of per-class F1; classes absent from both truth and
    prediction contribute an F1 of 0."""
    f1s = []
    for c in range(num_classes):
        tp = np.sum((y_true == c) & (y_pred == c))
        fp = np.sum((y_true != c) & (y_pred == c))
        fn = np.sum((y_true == c) & (y_pred != c))
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(f1s))


def balanced_accuracy(y_true, y_pred, num_classes):
    recalls = []
    for c in range(num_classes):
        support = np.sum(y_true == c)
        if support:
            recalls.append(np.sum((y_true == c) & (y_pred == c)) / support)
    return float(np.mean(recalls)) if recalls else 0.0


def _binary_auroc(y_bin, scores):
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks for ties
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + 1 + j + 1) / 2
        i = j + 1
    pos = y_bin.sum()
    neg = len(y_bin) - pos
    if pos == 0 or neg == 0:
        return np.nan
    return float((ranks[y_bin == 1].sum() - pos * (pos + 1) / 2) / (pos * neg))


def _binary_auprc(y_bin, scores):
    pos = y_bin.sum()
    if pos == 0:
        return np.nan
    order = np.argsort(-scores, kind="stable")
    y_sorted = y_bin[order]
    tp = np.cumsum(y_sorted)
    precision = tp / np.arange(1, len(y_sorted) + 1)
    # average precision: sum of precision at each positive hit
    return float(precision[y_sorted == 1].sum() / pos)


def metrics(y_true, y_pred, y_scores, num_classes):
    """macro-F1, balanced accuracy, and one-vs-rest macro AUROC/AUPRC."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("empty input")
    aurocs, auprcs = [], []
    for c in range(num_classes):
        y_bin = (y_true == c).astype(np.int64)
        if y_bin.sum() in (0, len(y_bin)):
            continue
        aurocs.append(_binary_auroc(y_bin, np.asarray(y_scores)[:, c]))
        auprcs.append(_binary_auprc(y_bin, np.asarray(y_scores)[:, c]))
    return {
        "macro_f1": macro_f1(y_true, y_pred, num_classes),
        "balanced_accuracy": balanced_accuracy(y_true, y_pred, num_classes),
        "auroc": float(np.mean(aurocs)) if aurocs else np.nan,
        "auprc": float(np.mean(auprcs)) if auprcs else np.nan,
    }
