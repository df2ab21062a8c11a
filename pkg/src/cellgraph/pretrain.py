"""Masked-autoencoder pre-training on cell graphs.

One step: sample a mask plan, corrupt inputs (learnable token or random
node replacement), encode with the deep channel-mixing GNN, re-mask the
latent rows with a learnable decoder token, decode with a single layer,
and minimize the scaled cosine reconstruction error over masked nodes.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import acm
from .ckpt_io import read_checkpoint, write_checkpoint
from .graphdata import batch_graphs
from .numerics import (
    AdamState, Tape, Tensor, adam_step, affine, cosine_rows, grad as backward,
    mean_all, param, power, set_rows, take_rows,
)

log = logging.getLogger(__name__)


@dataclass
class PretrainConfig:
    mask_ratio: float = 0.5
    replace_ratio: float = 0.1
    gamma: float = 2.0
    hidden_dim: int = 512
    encoder_layers: int = 5
    decoder_layers: int = 1
    mlp_depth: int = 2
    temperature: float = 1.0
    epochs: int = 100
    batch_size: int = 2048
    learning_rate: float = 1e-3
    seed: int = 0
    checkpoint_every: int = 0        # 0 = final checkpoint only

    def __post_init__(self):
        if not (0.0 <= self.mask_ratio <= 1.0 and 0.0 <= self.replace_ratio <= 1.0):
            raise ValueError("mask/replace ratios must lie in [0, 1]")
        if self.gamma < 1.0:
            raise ValueError("gamma must be >= 1")


@dataclass
class MaskPlan:
    token_indices: np.ndarray                 # masked with the learnable token
    replace_targets: np.ndarray               # masked by copying another node
    replace_sources: np.ndarray

    @property
    def all_masked(self):
        return np.concatenate([self.token_indices, self.replace_targets])


def make_mask_plan(real_indices, mask_ratio, replace_ratio, rng):
    """Fixed-count uniform sample of round(r_m * n) real nodes; each chosen
    node is independently random-replaced with probability r_r."""
    real_indices = np.asarray(real_indices, dtype=np.int64)
    n = len(real_indices)
    count = int(round(mask_ratio * n))
    chosen = rng.choice(real_indices, size=count, replace=False) if count else \
        np.zeros(0, dtype=np.int64)
    use_replace = rng.random(count) < replace_ratio
    token_idx = chosen[~use_replace]
    repl_tgt = chosen[use_replace]
    sources = np.zeros(len(repl_tgt), dtype=np.int64)
    for k, tgt in enumerate(repl_tgt):
        pool = real_indices[real_indices != tgt]
        sources[k] = rng.choice(pool) if len(pool) else tgt
    return MaskPlan(token_indices=token_idx.astype(np.int64),
                    replace_targets=repl_tgt.astype(np.int64),
                    replace_sources=sources)


def apply_mask(x, plan, token):
    """Corrupted copy of x: token rows take the learnable vector, replace
    rows copy their source node's original features."""
    out = x
    if len(plan.token_indices):
        out = set_rows(out, plan.token_indices, token)
    if len(plan.replace_targets):
        out = set_rows(out, plan.replace_targets, take_rows(x, plan.replace_sources))
    return out


def sce_loss(x_rows, h_rows, gamma):
    """Mean of (1 - cosine(x, h))^gamma over the given rows."""
    xv = x_rows.value
    if np.any(np.linalg.norm(xv, axis=1) < 1e-12):
        log.warning("zero-norm target row in reconstruction loss; term counted as maximal")
    cos = cosine_rows(x_rows, h_rows)
    return mean_all(power(affine(cos, -1.0, 1.0), gamma))


class Pretrainer:
    """Owns the encoder, decoder, mask tokens, optimizer state, and the
    dataset-level statistics baked into every checkpoint."""

    def __init__(self, feature_dim, config, feature_mean, feature_std,
                 mean_edge_weight, rng=None):
        self.config = config
        self.feature_dim = feature_dim
        self.feature_mean = np.asarray(feature_mean, dtype=np.float32)
        self.feature_std = np.asarray(feature_std, dtype=np.float32)
        self.mean_edge_weight = float(mean_edge_weight)
        rng = rng or np.random.default_rng(config.seed)
        self.encoder = acm.AcmModel(acm.AcmConfig(
            in_dim=feature_dim, hidden_dim=config.hidden_dim, out_dim=config.hidden_dim,
            num_layers=config.encoder_layers, mlp_depth=config.mlp_depth,
            temperature=config.temperature), rng)
        self.decoder = acm.AcmModel(acm.AcmConfig(
            in_dim=config.hidden_dim, hidden_dim=feature_dim, out_dim=feature_dim,
            num_layers=config.decoder_layers, mlp_depth=config.mlp_depth,
            temperature=config.temperature), rng)
        self.enc_token = np.zeros((1, feature_dim), dtype=np.float32)
        self.dec_token = np.zeros((1, config.hidden_dim), dtype=np.float32)
        self.adam = AdamState(lr=config.learning_rate)
        self.epochs_done = 0

    # -- parameter plumbing -------------------------------------------------

    def _all_params(self, tape):
        pt = {}
        for name, value in self.encoder.params.items():
            pt[f"enc.{name}"] = param(value, tape, name=f"enc.{name}")
        for name, value in self.decoder.params.items():
            pt[f"dec.{name}"] = param(value, tape, name=f"dec.{name}")
        pt["enc_token"] = param(self.enc_token, tape, name="enc_token")
        pt["dec_token"] = param(self.dec_token, tape, name="dec_token")
        return pt

    def _writeback(self, pt):
        for name, t in pt.items():
            if name.startswith("enc."):
                self.encoder.params[name[4:]] = t.value
            elif name.startswith("dec."):
                self.decoder.params[name[4:]] = t.value
        self.enc_token = pt["enc_token"].value
        self.dec_token = pt["dec_token"].value

    def num_parameters(self):
        return (self.encoder.num_parameters() + self.decoder.num_parameters()
                + self.enc_token.size + self.dec_token.size)

    # -- data preparation ---------------------------------------------------

    def standardize(self, features):
        return ((features - self.feature_mean) / self.feature_std).astype(np.float32)

    def prepare_graph(self, graph):
        """Standardized features + virtual-node augmentation."""
        g = acm.add_virtual_node(graph, self.mean_edge_weight)
        feats = g.node_features.copy()
        feats[:-1] = self.standardize(feats[:-1])
        feats[-1] = 0.0                            # virtual node stays zero
        g.node_features = feats
        return g

    # -- training -----------------------------------------------------------

    def step(self, batch, rng, update=True, force_channel=None):
        """One masked-reconstruction step on a prepared batch. Returns the
        loss, or None when the mask ratio selects no nodes."""
        cfg = self.config
        plans = []
        for g_idx in range(batch.num_graphs):
            sl = batch.graph_slice(g_idx)
            real = np.arange(sl.start, sl.stop - 1, dtype=np.int64)  # last row is virtual
            if len(real) == 0:
                continue
            plans.append(make_mask_plan(real, cfg.mask_ratio, cfg.replace_ratio, rng))
        masked = (np.concatenate([p.all_masked for p in plans])
                  if plans else np.zeros(0, dtype=np.int64))
        if len(masked) == 0:
            log.warning("mask plan selected no nodes; training step skipped")
            return None
        tape = Tape()
        pt = self._all_params(tape)
        x = Tensor(batch.features, tape=tape)
        x_corrupt = x
        for plan in plans:
            x_corrupt = apply_mask(x_corrupt, plan, pt["enc_token"])
        a_l, a_h = acm.batch_filters(batch)
        enc_pt = {k[4:]: v for k, v in pt.items() if k.startswith("enc.")}
        dec_pt = {k[4:]: v for k, v in pt.items() if k.startswith("dec.")}
        h, _ = acm.forward(self.encoder, x_corrupt, a_l, a_h, tape=tape,
                           param_tensors=enc_pt, force_channel=force_channel)
        h_remasked = set_rows(h, masked, pt["dec_token"])
        x_hat, _ = acm.forward(self.decoder, h_remasked, a_l, a_h, tape=tape,
                               param_tensors=dec_pt, force_channel=force_channel)
        loss = sce_loss(take_rows(x, masked), take_rows(x_hat, masked), cfg.gamma)
        if not np.isfinite(loss.value):
            raise FloatingPointError(
                f"non-finite loss at adam step {self.adam.step}: {loss.value!r}")
        if update:
            grads = backward(tape, loss, pt)
            adam_step(self.adam, pt, grads)
            self._writeback(pt)
        return float(loss.value)

    def encode_batch(self, batch, force_channel=None):
        return acm.encode(self.encoder, batch, force_channel=force_channel)

    # -- checkpointing ------------------------------------------------------

    def save(self, path):
        meta = {
            "kind": "pretrain",
            "config": asdict(self.config),
            "feature_dim": self.feature_dim,
            "mean_edge_weight": self.mean_edge_weight,
            "epochs_done": self.epochs_done,
            "adam": {"lr": self.adam.lr, "beta1": self.adam.beta1,
                     "beta2": self.adam.beta2, "eps": self.adam.eps,
                     "step": self.adam.step},
        }
        arrays = {"feature_mean": self.feature_mean, "feature_std": self.feature_std,
                  "enc_token": self.enc_token, "dec_token": self.dec_token}
        for name, v in self.encoder.params.items():
            arrays[f"enc.{name}"] = v
        for name, v in self.decoder.params.items():
            arrays[f"dec.{name}"] = v
        for name, v in self.adam.m.items():
            arrays[f"adam.m.{name}"] = v
        for name, v in self.adam.v.items():
            arrays[f"adam.v.{name}"] = v
        write_checkpoint(path, meta, arrays)

    @classmethod
    def load(cls, path):
        meta, arrays = read_checkpoint(path)
        if meta.get("kind") != "pretrain":
            raise ValueError(f"not a pre-training checkpoint: {path}")
        config = PretrainConfig(**meta["config"])
        self = cls(meta["feature_dim"], config, arrays["feature_mean"],
                   arrays["feature_std"], meta["mean_edge_weight"])
        for name in self.encoder.params:
            self.encoder.params[name] = arrays[f"enc.{name}"]
        for name in self.decoder.params:
            self.decoder.params[name] = arrays[f"dec.{name}"]
        self.enc_token = arrays["enc_token"]
        self.dec_token = arrays["dec_token"]
        a = meta["adam"]
        self.adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                              eps=a["eps"], step=a["step"])
        for name, v in arrays.items():
            if name.startswith("adam.m."):
                self.adam.m[name[7:]] = v
            elif name.startswith("adam.v."):
                self.adam.v[name[7:]] = v
        self.epochs_done = meta["epochs_done"]
        return self


def feature_statistics(graphs):
    """Per-feature mean/std over all real nodes; std floored at 1e-6."""
    stacked = np.concatenate([g.node_features for g in graphs if g.num_nodes], axis=0)
    if stacked.size == 0:
        raise ValueError("dataset has no cells")
    mu = stacked.astype(np.float64).mean(axis=0)
    sd = stacked.astype(np.float64).std(axis=0)
    return mu.astype(np.float32), np.maximum(sd, 1e-6).astype(np.float32)


def _epoch_batches(num_graphs, batch_size, rng):
    order = rng.permutation(num_graphs)
    batches = [order[i:i + batch_size] for i in range(0, num_graphs, batch_size)]
    # partial tail batches below 2 graphs are dropped
    return [b for b in batches if len(b) >= min(2, num_graphs)]


def pretrain(graphs, config, loss_curve_path=None, checkpoint_path=None,
             resume_from=None, force_channel=None):
    """Full training loop; returns (trainer, per-epoch mean losses)."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("cannot pre-train on an empty dataset")
    if resume_from is not None:
        trainer = Pretrainer.load(resume_from)
        if trainer.feature_dim != graphs[0].feature_dim:
            raise ValueError("checkpoint feature dimension does not match dataset")
    else:
        mu, sd = feature_statistics(graphs)
        trainer = Pretrainer(graphs[0].feature_dim, config, mu, sd,
                             acm.mean_edge_weight(graphs))
    prepared = [trainer.prepare_graph(g) for g in graphs]
    curve = []
    for epoch in range(trainer.epochs_done, config.epochs):
        shuffle_rng = np.random.default_rng([config.seed, epoch])
        losses = []
        for b_idx, batch_ids in enumerate(_epoch_batches(len(prepared),
                                                         config.batch_size, shuffle_rng)):
            batch = batch_graphs([prepared[i] for i in batch_ids])
            step_rng = np.random.default_rng([config.seed, epoch, b_idx])
            loss = trainer.step(batch, step_rng, force_channel=force_channel)
            if loss is not None:
                losses.append(loss)
        mean_loss = float(np.mean(losses)) if losses else float("nan")
        curve.append((epoch, mean_loss))
        trainer.epochs_done = epoch + 1
        if checkpoint_path and config.checkpoint_every and \
                (epoch + 1) % config.checkpoint_every == 0:
            trainer.save(checkpoint_path)
        log.info("epoch %d mean loss %.6f", epoch, mean_loss)
    if checkpoint_path:
        trainer.save(checkpoint_path)
    if loss_curve_path:
        with open(loss_curve_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_loss"])
            writer.writerows(curve)
    return trainer, curve


def embed_dataset(trainer, graphs, level, batch_size=256, force_channel=None):
    """Frozen-encoder embeddings with no masking.

    level "cell": (total_cells, d) rows plus a graph index per row.
    level "region": (num_graphs, d) per-graph means, virtual node excluded.
    """
    if level not in ("cell", "region"):
        raise ValueError("level must be 'cell' or 'region'")
    graphs = list(graphs)
    if graphs and graphs[0].feature_dim != trainer.feature_dim:
        raise ValueError("feature dimension mismatch between checkpoint and dataset")
    rows, graph_ids = [], []
    regions = []
    for start in range(0, len(graphs), batch_size):
        chunk = graphs[start:start + batch_size]
        prepared = [trainer.prepare_graph(g) for g in chunk]
        batch = batch_graphs(prepared)
        h = trainer.encode_batch(batch, force_channel=force_channel)
        if level == "region":
            regions.append(acm.region_embedding(h, batch))
        else:
            real = batch.real_node_mask()
            for g_idx in range(batch.num_graphs):
                sl = batch.graph_slice(g_idx)
                sub = h[sl][real[sl]]
                rows.append(sub)
                graph_ids.append(np.full(len(sub), start + g_idx, dtype=np.int64))
    if level == "region":
        emb = (np.concatenate(regions, axis=0) if regions
               else np.zeros((0, trainer.config.hidden_dim), dtype=np.float32))
        return emb, np.arange(len(graphs), dtype=np.int64)
    emb = (np.concatenate(rows, axis=0) if rows
           else np.zeros((0, trainer.config.hidden_dim), dtype=np.float32))
    ids = np.concatenate(graph_ids) if graph_ids else np.zeros(0, dtype=np.int64)
    return emb, ids
