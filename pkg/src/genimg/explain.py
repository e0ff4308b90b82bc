"""Integrated Gradients attributions for genetic features of a contrastive model.

The contrastive loss is defined over a batch, so a single individual ``x`` is
explained through ``E(x)``: the multimodal loss of a fixed reference batch
with ``x`` appended as one extra row. Reference embeddings are computed once
in eval mode and stay constant; the image of ``x`` is held fixed, so
gradients only reach the genetic inputs of ``x``. Modalities missing for an
individual are left out of their term, as in outer aggregation.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import autodiff as ad
from .contrastive import LossConfig, ModalityBatch, multimodal_loss
from .data import MultimodalData
from .encoders import ContrastiveModel
from .errors import ConfigError, DataError

FULL_SCALE_REFERENCE_SIZE = 1000
BASELINES = ("zeros", "reference-mean")


@dataclass
class ExplainerConfig:
    b_ref: int = 128
    ig_steps: int = 128
    baseline: str = "zeros"
    tau: float = 0.1
    lam: float = 0.75
    denominator_mode: str = "standard"

    def __post_init__(self):
        if self.b_ref < 1:
            raise ConfigError("b_ref must be >= 1")
        if self.ig_steps < 2:
            raise ConfigError("ig_steps must be >= 2")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {BASELINES}")

    def loss_config(self):
        return LossConfig(self.tau, self.lam, self.denominator_mode)


@dataclass
class Individual:
    """One multimodal tuple; ``genetics[m]`` is None when modality ``m`` is missing."""
    image: np.ndarray
    genetics: list
    iid: str = ""

    @classmethod
    def from_data(cls, data: MultimodalData, row):
        return cls(data.images[row],
                   [x[row] if p[row] else None for x, p in zip(data.genetics, data.present)],
                   data.ids[row])


class ReferenceBatch:
    """Fixed reference individuals with their precomputed eval-mode embeddings."""

    def __init__(self, model: ContrastiveModel, data: MultimodalData):
        if data.n < 1:
            raise DataError("reference batch is empty")
        model.eval()
        self.ids = list(data.ids)
        self.present = [p.copy() for p in data.present]
        self.z_v = model.embed_image(data.images).data
        self.z_g = []
        for m, (x, p) in enumerate(zip(data.genetics, data.present)):
            z = np.zeros_like(self.z_v)
            if p.any():
                z[p] = model.embed_genetics(x[p], m).data
            self.z_g.append(z)
        self.genetics_mean = [x[p].mean(axis=0) if p.any() else np.zeros(x.shape[1])
                              for x, p in zip(data.genetics, data.present)]
        h = hashlib.sha256()
        h.update("\x1f".join(self.ids).encode())
        for arr in [data.images, *data.genetics, *data.present]:
            h.update(np.ascontiguousarray(arr).tobytes())
        self.fingerprint = h.hexdigest()[:16]

    @property
    def size(self):
        return len(self.ids)

    def permuted(self, order):
        """Same reference individuals in a different row order (fingerprint kept)."""
        out = object.__new__(ReferenceBatch)
        order = np.asarray(order, dtype=np.intp)
        out.ids = [self.ids[i] for i in order]
        out.present = [p[order] for p in self.present]
        out.z_v = self.z_v[order]
        out.z_g = [z[order] for z in self.z_g]
        out.genetics_mean = self.genetics_mean
        out.fingerprint = self.fingerprint
        return out


def explainer_value(x: Individual, ref: ReferenceBatch, model: ContrastiveModel, cfg: ExplainerConfig,
                    genetic_inputs=None):
    """``E(x)`` as a scalar tensor.

    ``genetic_inputs`` optionally supplies ``1 x d_m`` tensors (e.g. leaves
    requiring gradients) to use in place of ``x.genetics``.
    """
    if ref.size < 1:
        raise DataError("reference batch is empty")
    model.eval()
    z_xv = ad.Tensor(model.embed_image(np.asarray(x.image, dtype=np.float64)[None, :]).data)
    z_v = ad.concat_rows([ad.Tensor(ref.z_v), z_xv])
    z_g, present = [], []
    for m, g in enumerate(x.genetics):
        if g is None:
            z_x = ad.Tensor(np.zeros((1, ref.z_v.shape[1])))
            here = False
        else:
            inp = genetic_inputs[m] if genetic_inputs is not None else ad.Tensor(np.asarray(g)[None, :])
            z_x = model.embed_genetics(inp, m)
            here = True
        z_g.append(ad.concat_rows([ad.Tensor(ref.z_g[m]), z_x]))
        present.append(np.append(ref.present[m], here))
    return multimodal_loss(ModalityBatch(z_v, z_g, present), cfg.loss_config(), "outer")


def explainer_gradient(x: Individual, ref, model, cfg):
    """``(E(x), [dE/dx_g for each modality or None])``."""
    leaves = [None if g is None else ad.Tensor(np.asarray(g, dtype=np.float64)[None, :], requires_grad=True)
              for g in x.genetics]
    value = explainer_value(x, ref, model, cfg, genetic_inputs=leaves)
    ad.backward(value)
    grads = []
    for leaf in leaves:
        if leaf is None:
            grads.append(None)
        else:
            grads.append(np.zeros(leaf.shape[1]) if leaf.grad is None else leaf.grad[0])
    return value.item(), grads


def baseline_for(x: Individual, ref: ReferenceBatch, cfg: ExplainerConfig):
    if cfg.baseline == "zeros":
        return [None if g is None else np.zeros_like(g, dtype=np.float64) for g in x.genetics]
    return [None if g is None else ref.genetics_mean[m].copy() for m, g in enumerate(x.genetics)]


def integrated_gradients(x: Individual, baseline, ref, model, cfg: ExplainerConfig):
    """Right-Riemann Integrated Gradients over every present genetic feature of ``x``.

    Returns one signed attribution array per modality (None where missing).
    """
    if baseline is None:
        baseline = baseline_for(x, ref, cfg)
    diffs, total = [], []
    for g, b0 in zip(x.genetics, baseline):
        if g is None:
            diffs.append(None)
            total.append(None)
            continue
        g = np.asarray(g, dtype=np.float64)
        if b0 is None or np.shape(b0) != g.shape:
            raise DataError("input and baseline shapes differ")
        diffs.append(g - np.asarray(b0, dtype=np.float64))
        total.append(np.zeros_like(g))
    steps = cfg.ig_steps
    for t in range(1, steps + 1):
        alpha = t / steps
        point = Individual(x.image, [None if d is None else b0 + alpha * d
                                     for d, b0 in zip(diffs, baseline)], x.iid)
        _, grads = explainer_gradient(point, ref, model, cfg)
        for m, gr in enumerate(grads):
            if gr is not None:
                total[m] += gr
    return [None if d is None else d * (acc / steps) for d, acc in zip(diffs, total)]


def completeness_gap(x: Individual, ref, model, cfg: ExplainerConfig, baseline=None):
    """``|sum IG - (E(x) - E(x'))|``."""
    if baseline is None:
        baseline = baseline_for(x, ref, cfg)
    attributions = integrated_gradients(x, baseline, ref, model, cfg)
    e_x = explainer_value(x, ref, model, cfg).item()
    e_b = explainer_value(Individual(x.image, baseline, x.iid), ref, model, cfg).item()
    total = sum(float(a.sum()) for a in attributions if a is not None)
    return abs(total - (e_x - e_b))


@dataclass
class AttributionReport:
    modality: str
    feature_ids: list
    individual_ids: list
    local: np.ndarray
    global_scores: np.ndarray
    fingerprint: str
    ig_steps: int = 0
    baseline: str = "zeros"
    meta: dict = field(default_factory=dict)

    def ranking(self):
        order = np.argsort(-self.global_scores, kind="stable")
        return [(self.feature_ids[j], float(self.global_scores[j])) for j in order]

    def top(self, k=30):
        return self.ranking()[:k]

    def to_frame(self):
        rows = [(fid, self.modality, "global", "", float(v)) for fid, v in self.ranking()]
        for i, iid in enumerate(self.individual_ids):
            for j, fid in enumerate(self.feature_ids):
                if np.isfinite(self.local[i, j]):
                    rows.append((fid, self.modality, "local", iid, float(self.local[i, j])))
        return pd.DataFrame(rows, columns=["feature_id", "modality", "local_or_global", "iid", "value"])

    def metadata(self):
        return {"modality": self.modality, "reference_fingerprint": self.fingerprint,
                "ig_steps": self.ig_steps, "baseline": self.baseline, **self.meta}


def global_attribution(data: MultimodalData, rows, ref: ReferenceBatch, model, cfg: ExplainerConfig):
    """Local IG for each individual in ``rows`` and the mean absolute attribution per feature.

    Returns one :class:`AttributionReport` per genetic modality. Individuals
    lacking a modality get NaN local rows there and are left out of its mean.
    """
    rows = list(rows)
    overlap = set(data.ids[i] for i in rows) & set(ref.ids)
    if overlap:
        raise DataError(f"explained individuals overlap the reference batch: {sorted(overlap)[:5]}")
    local = [np.full((len(rows), x.shape[1]), np.nan) for x in data.genetics]
    for i, row in enumerate(rows):
        x = Individual.from_data(data, row)
        attributions = integrated_gradients(x, None, ref, model, cfg)
        for m, a in enumerate(attributions):
            if a is not None:
                local[m][i] = a
    reports = []
    for m, name in enumerate(data.modality_names):
        have = ~np.isnan(local[m]).all(axis=1)
        glob = np.abs(local[m][have]).mean(axis=0) if have.any() else np.full(local[m].shape[1], np.nan)
        reports.append(AttributionReport(name, list(data.feature_ids[m]), [data.ids[r] for r in rows],
                                         local[m], glob, ref.fingerprint, cfg.ig_steps, cfg.baseline,
                                         {"n_individuals": int(have.sum()), "b_ref": ref.size}))
    return reports


def modality_attribution_summary(reports):
    """Per-modality mean and sum of the global absolute attributions."""
    if not reports:
        raise DataError("no attribution reports given")
    prints = {r.fingerprint for r in reports}
    if len(prints) != 1:
        raise DataError(f"reports come from different reference batches: {sorted(prints)}")
    return {r.modality: {"mean": float(np.mean(r.global_scores)), "sum": float(np.sum(r.global_scores)),
                         "n_features": len(r.feature_ids)} for r in reports}
