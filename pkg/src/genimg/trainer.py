"""Contrastive pretraining (Adam + cosine decay) and frozen-embedding evaluation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from . import autodiff as ad
from .contrastive import SCHEMES, LossConfig, ModalityBatch, multimodal_terms
from .data import MultimodalData
from .encoders import ContrastiveModel, EncoderConfig
from .errors import ConfigError, DataError, DimensionError, EmptyLossError, NumericalError

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    lr: float = 0.001
    weight_decay: float = 1e-6
    decoupled_weight_decay: bool = False
    epochs: int = 100
    tau: float = 0.1
    lam: float = 0.75
    denominator_mode: str = "standard"
    scheme: str = "outer"
    seed: int = 42
    hidden_variant: str = "H1"
    hidden_width: int = 2048
    repr_dim: int = 2048
    proj_dim: int = 128

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ConfigError("lr and weight_decay must be non-negative")
        if self.scheme not in SCHEMES:
            raise ConfigError(f"scheme must be one of {SCHEMES}")
        self.loss_config()

    def loss_config(self):
        return LossConfig(tau=self.tau, lam=self.lam, denominator_mode=self.denominator_mode)


class AdamState:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.step = 0
        self.m = {}
        self.v = {}


def adam_step(params, grads, state: AdamState, lr, weight_decay=0.0, decoupled=False):
    """One bias-corrected Adam update on ``name -> array`` mappings.

    With ``decoupled=False`` the weight decay is added to the gradient
    (classic Adam with L2). Returns a new parameter mapping; ``state`` is
    updated in place.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    out = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        if g.shape != theta.shape:
            raise DimensionError(f"{name}: gradient shape {g.shape} != parameter shape {theta.shape}")
        if weight_decay and not decoupled:
            g = g + weight_decay * theta
        m = state.m.get(name, np.zeros_like(theta))
        v = state.v.get(name, np.zeros_like(theta))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        update = (m / (1.0 - b1 ** t)) / (np.sqrt(v / (1.0 - b2 ** t)) + state.eps)
        new = theta - lr * update
        if weight_decay and decoupled:
            new = new - lr * weight_decay * theta
        out[name] = new
    return out


def cosine_lr(step, total_steps, lr0):
    if total_steps <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * step / total_steps))


def epoch_batches(n, batch_size, rng):
    """Shuffled index batches covering every individual once; a size-1 tail joins the previous batch."""
    if n < 2:
        raise DataError(f"need at least 2 individuals to train, got {n}")
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def encoder_config_for(data: MultimodalData, cfg: TrainConfig):
    return EncoderConfig(
        image_input_dim=data.images.shape[1],
        genetic_input_dims=[x.shape[1] for x in data.genetics],
        hidden_variant=cfg.hidden_variant, hidden_width=cfg.hidden_width,
        repr_dim=cfg.repr_dim, proj_dim=cfg.proj_dim, modality_names=list(data.modality_names),
    )


def forward_batch(model: ContrastiveModel, data: MultimodalData, rows):
    """Embeddings of ``rows`` as a :class:`ModalityBatch`.

    Genetic encoders only see the rows where their modality is present, so
    batchnorm statistics never mix in placeholder rows.
    """
    rows = np.asarray(rows, dtype=np.intp)
    b = len(rows)
    z_v = model.embed_image(data.images[rows])
    z_g, present = [], []
    for m, (x, mask) in enumerate(zip(data.genetics, data.present)):
        keep = mask[rows]
        idx = np.flatnonzero(keep)
        if len(idx) < 2:
            z_g.append(ad.Tensor(np.zeros((b, z_v.shape[1]))))
            present.append(np.zeros(b, dtype=bool))
            continue
        z_g.append(ad.scatter_rows(model.embed_genetics(x[rows[idx]], m), idx, b))
        present.append(keep)
    return ModalityBatch(z_v, z_g, present)


def pretrain(data: MultimodalData, cfg: TrainConfig, model: ContrastiveModel | None = None):
    """Train all encoders and heads; returns ``(model, trace)``.

    ``trace`` is a DataFrame with one row per optimisation step.
    """
    if data.n == 0:
        raise DataError("empty dataset")
    if model is None:
        model = ContrastiveModel(encoder_config_for(data, cfg), seed=cfg.seed)
    loss_cfg = cfg.loss_config()
    shuffle_rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = len(epoch_batches(data.n, cfg.batch_size, np.random.default_rng(0)))
    total = steps_per_epoch * cfg.epochs
    state = AdamState()
    rows_out = []
    step = 0
    model.train()
    for epoch in range(cfg.epochs):
        for batch in epoch_batches(data.n, cfg.batch_size, shuffle_rng):
            lr_t = cosine_lr(step, total, cfg.lr)
            model.zero_grad()
            mb = forward_batch(model, data, batch)
            terms, skipped = multimodal_terms(mb, loss_cfg, cfg.scheme)
            if not terms:
                log.warning("step %d: no modality had 2 individuals; step skipped", step)
                step += 1
                continue
            loss = None
            for m in sorted(terms):
                loss = terms[m] if loss is None else loss + terms[m]
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(
                    f"non-finite loss {value} at step {step} (epoch {epoch}, lr {lr_t:.3g}); "
                    f"batch ids {[data.ids[i] for i in batch[:8]]}...")
            ad.backward(loss)
            grads = {name: p.grad for name, p in model.params.items() if p.grad is not None}
            arrays = {name: p.data for name, p in model.params.items()}
            updated = adam_step(arrays, grads, state, lr_t, cfg.weight_decay, cfg.decoupled_weight_decay)
            for name, arr in updated.items():
                model.params[name].data = arr
            row = {"step": step, "epoch": epoch, "lr": lr_t, "loss": value}
            for m, name in enumerate(data.modality_names):
                row[f"loss_{name}"] = terms[m].item() if m in terms else float("nan")
            rows_out.append(row)
            step += 1
    model.eval()
    return model, pd.DataFrame(rows_out)


def image_embeddings(model: ContrastiveModel, images, chunk=1024):
    """Frozen encoder representations (before the projection head), eval mode."""
    was = model.training
    model.eval()
    out = np.concatenate([model.encode_image(images[i:i + chunk]).data
                          for i in range(0, len(images), chunk)], axis=0)
    model.training = was
    return out


def _cos(a, b):
    a = a / np.linalg.norm(a, axis=1, keepdims=True)
    b = b / np.linalg.norm(b, axis=1, keepdims=True)
    return a @ b.T


def retrieval_accuracy(model: ContrastiveModel, data: MultimodalData, rows):
    """Top-1 image -> genetics retrieval among ``rows``.

    Reports one accuracy per modality (over individuals having it) and a
    ``combined`` score that sums cosine matrices over all modalities for the
    individuals with complete data.
    """
    rows = np.asarray(rows, dtype=np.intp)
    was = model.training
    model.eval()
    z_v = model.embed_image(data.images[rows]).data
    out, sims = {}, []
    complete = np.logical_and.reduce([p[rows] for p in data.present])
    for m, name in enumerate(data.modality_names):
        z_g = model.embed_genetics(data.genetics[m][rows], m).data
        sim = _cos(z_v, z_g)
        keep = np.flatnonzero(data.present[m][rows])
        if len(keep) >= 2:
            sub = sim[np.ix_(keep, keep)]
            out[name] = float(np.mean(sub.argmax(axis=1) == np.arange(len(keep))))
        sims.append(sim)
    keep = np.flatnonzero(complete)
    if len(keep) >= 2:
        total = sum(s[np.ix_(keep, keep)] for s in sims)
        out["combined"] = float(np.mean(total.argmax(axis=1) == np.arange(len(keep))))
    model.training = was
    return out


def auc_score(labels, scores):
    labels = np.asarray(labels).astype(bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _split(n, train_frac, seed):
    order = np.random.default_rng(seed).permutation(n)
    cut = int(round(train_frac * n))
    if cut < 2 or n - cut < 2:
        raise DataError(f"cannot split {n} individuals at train fraction {train_frac}")
    return order[:cut], order[cut:]


def linear_eval(model: ContrastiveModel, images, labels, task="regression", train_frac=0.8,
                seed=42, iterations=500, lr=0.1, l2=1e-4):
    """Fit a linear predictor on frozen image embeddings and score a held-out split."""
    labels = np.asarray(labels, dtype=np.float64)
    if labels.shape[0] != len(images):
        raise DataError("labels are not aligned to individuals")
    if task not in ("regression", "classification"):
        raise ConfigError(f"unknown task {task!r}")
    if np.unique(labels).size < 2:
        raise DataError("degenerate labels: only one distinct value")
    h = image_embeddings(model, np.asarray(images, dtype=np.float64))
    train, test = _split(len(labels), train_frac, seed)
    if task == "regression":
        design = np.column_stack([np.ones(len(h)), h])
        coef, *_ = np.linalg.lstsq(design[train], labels[train], rcond=None)
        pred = design @ coef
        resid = labels[test] - pred[test]
        mse = float(np.mean(resid ** 2))
        var = float(np.var(labels[test]))
        return {"task": task, "n_train": len(train), "n_test": len(test), "mse": mse,
                "r2": 1.0 - mse / var if var > 0 else float("nan"),
                "train_mse": float(np.mean((labels[train] - pred[train]) ** 2))}
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DataError("classification labels must be 0/1")
    if np.unique(labels[train]).size < 2:
        raise DataError("degenerate labels: training split holds a single class")
    mu, sd = h[train].mean(axis=0), h[train].std(axis=0)
    sd[sd == 0] = 1.0
    x = np.column_stack([np.ones(len(h)), (h - mu) / sd])
    w = np.zeros(x.shape[1])
    xt, yt = x[train], labels[train]
    for _ in range(iterations):
        p = 1.0 / (1.0 + np.exp(-(xt @ w)))
        grad = xt.T @ (p - yt) / len(yt) + l2 * np.r_[0.0, w[1:]]
        w -= lr * grad
    scores = x @ w
    out = {"task": task, "n_train": len(train), "n_test": len(test)}
    if np.unique(labels[test]).size < 2:
        raise DataError("degenerate labels: test split holds a single class")
    out["auc"] = auc_score(labels[test], scores[test])
    out["train_auc"] = auc_score(yt, scores[train])
    return out
