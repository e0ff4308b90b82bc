"""Inter-modal contrastive losses with missing-modality aggregation.

The image embedding is the hub: every genetic modality is contrasted against
the image only. Two denominators are supported:

``standard``
    the positive pair is part of the softmax denominator (NT-Xent style);
``paper_literal``
    the positive pair is excluded from the denominator, which can drive the
    loss negative.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import BatchTooSmallError, ConfigError, DimensionError, EmptyLossError

log = logging.getLogger(__name__)

DENOMINATOR_MODES = ("standard", "paper_literal")
SCHEMES = ("inner", "outer")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    lam: float = 0.75
    denominator_mode: str = "standard"

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must lie in [0, 1], got {self.lam}")
        if self.denominator_mode not in DENOMINATOR_MODES:
            raise ConfigError(f"denominator_mode must be one of {DENOMINATOR_MODES}")


@dataclass
class ModalityBatch:
    """Projected embeddings of one batch.

    ``present[m][i]`` says whether individual ``i`` has genetic modality
    ``m``. Rows of ``z_g[m]`` where it is False are never read.
    """
    z_v: ad.Tensor
    z_g: list
    present: list

    def __post_init__(self):
        self.z_v = ad.as_tensor(self.z_v)
        self.z_g = [ad.as_tensor(z) for z in self.z_g]
        self.present = [np.asarray(p, dtype=bool) for p in self.present]
        b, p = self.z_v.shape
        if len(self.z_g) != len(self.present):
            raise DimensionError("one presence mask is needed per genetic modality")
        for m, (z, mask) in enumerate(zip(self.z_g, self.present)):
            if z.shape != (b, p):
                raise DimensionError(f"modality {m}: embedding shape {z.shape} != image shape {(b, p)}")
            if mask.shape != (b,):
                raise DimensionError(f"modality {m}: mask length {mask.shape} != batch size {b}")

    @property
    def batch_size(self):
        return self.z_v.shape[0]

    @property
    def n_modalities(self):
        return len(self.z_g)


def pair_loss(z_a, z_b, cfg: LossConfig):
    """``-sum_j log(exp(cos(a_j, b_j)/tau) / D_j)`` with only a->b pairs in ``D_j``."""
    z_a, z_b = ad.as_tensor(z_a), ad.as_tensor(z_b)
    b = z_a.shape[0]
    if b < 2:
        raise BatchTooSmallError(f"contrastive loss needs at least 2 individuals, got {b}")
    logits = ad.cosine_similarity(z_a, z_b) * (1.0 / cfg.tau)
    e = ad.exp(logits)
    if cfg.denominator_mode == "paper_literal":
        e = ad.mul(e, ad.Tensor(1.0 - np.eye(b)))
    log_denom = ad.log(ad.tsum(e, axis=1))
    return ad.tsum(log_denom) - ad.tsum(ad.diag(logits))


def contrastive_pair(z_v, z_g, cfg: LossConfig):
    loss_vg = pair_loss(z_v, z_g, cfg)
    if cfg.lam == 1.0:
        return loss_vg
    loss_gv = pair_loss(z_g, z_v, cfg)
    if cfg.lam == 0.0:
        return loss_gv
    return loss_vg * cfg.lam + loss_gv * (1.0 - cfg.lam)


def multimodal_terms(batch: ModalityBatch, cfg: LossConfig, scheme="outer"):
    """Per-modality contrastive terms after filtering by presence.

    Returns ``(terms, skipped)`` where ``terms`` maps modality index to a
    scalar tensor and ``skipped`` lists modalities whose filtered sub-batch
    held fewer than two individuals.
    """
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    terms, skipped = {}, []
    if scheme == "inner":
        keep = np.logical_and.reduce(batch.present) if batch.present else np.ones(batch.batch_size, bool)
        rows = [np.flatnonzero(keep)] * batch.n_modalities
    else:
        rows = [np.flatnonzero(mask) for mask in batch.present]
    for m, idx in enumerate(rows):
        if len(idx) < 2:
            log.warning("modality %d: only %d individual(s) after %s filtering; term skipped",
                        m, len(idx), scheme)
            skipped.append(m)
            continue
        terms[m] = contrastive_pair(ad.take_rows(batch.z_v, idx), ad.take_rows(batch.z_g[m], idx), cfg)
    return terms, skipped


def multimodal_loss(batch: ModalityBatch, cfg: LossConfig, scheme="outer"):
    """Sum of image-vs-modality contrastive terms under ``inner`` or ``outer`` aggregation."""
    terms, _ = multimodal_terms(batch, cfg, scheme)
    if not terms:
        raise EmptyLossError("every modality term was skipped; no loss can be formed")
    total = None
    for m in sorted(terms):
        total = terms[m] if total is None else total + terms[m]
    return total
