"""Cohort container, feature construction and dataset directories."""
from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError, DataError
from .genetics import (
    compute_burden, compute_pgs_batch, read_burden_annotation, read_genotypes,
    read_pgs_directory, subsample_raw, write_burden_annotation, write_genotypes, write_pgs_weights,
)
from .synth import MODALITIES, SynthDataset
from .tsvio import read_json, read_table, write_json, write_table

DATASET_FILES = ("images.tsv", "genotypes.tsv", "positions.tsv", "pgs_weights",
                 "burden_annotation.tsv", "covariates.tsv", "presence.tsv", "truth.json")


@dataclass
class MultimodalData:
    """Images plus M genetic feature matrices with per-modality presence masks.

    Rows of ``genetics[m]`` for absent individuals are zero and never used.
    """
    ids: list
    images: np.ndarray
    genetics: list
    present: list
    modality_names: list
    feature_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.genetics = [np.asarray(x, dtype=np.float64) for x in self.genetics]
        self.present = [np.asarray(p, dtype=bool) for p in self.present]
        n = len(self.ids)
        if self.images.shape[0] != n:
            raise DataError("image rows do not match individual ids")
        if not (len(self.genetics) == len(self.present) == len(self.modality_names)):
            raise DataError("genetics, presence masks and modality names differ in length")
        for x, p in zip(self.genetics, self.present):
            if x.shape[0] != n or p.shape != (n,):
                raise DataError("genetic matrix or mask does not match the number of individuals")
        if not self.feature_ids:
            self.feature_ids = [[f"{name}_{j}" for j in range(x.shape[1])]
                                for name, x in zip(self.modality_names, self.genetics)]

    @property
    def n(self):
        return len(self.ids)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return MultimodalData([self.ids[i] for i in rows], self.images[rows],
                              [x[rows] for x in self.genetics], [p[rows] for p in self.present],
                              list(self.modality_names), [list(f) for f in self.feature_ids])


@dataclass
class FeatureConfig:
    modalities: list = field(default_factory=lambda: ["raw", "pgs", "burden"])
    raw_every: int = 100
    min_maf: float = 0.01
    maf_cutoff: float = 0.01
    standardize: bool = True

    def __post_init__(self):
        bad = [m for m in self.modalities if m not in MODALITIES]
        if bad or not self.modalities:
            raise ConfigError(f"modalities must be a non-empty subset of {MODALITIES}, got {self.modalities}")
        if self.raw_every < 1:
            raise ConfigError("raw_every must be >= 1")


def common_snps(g, min_maf):
    """Columns whose observed minor allele frequency is at least ``min_maf``."""
    with np.errstate(invalid="ignore"):
        freq = np.nanmean(g.values, axis=0) / 2.0
    maf = np.minimum(freq, 1.0 - freq)
    return g.select_snps(np.flatnonzero(np.nan_to_num(maf) >= min_maf))


def _standardize(x, mask):
    out = np.zeros_like(x)
    if mask.sum() == 0:
        return out
    mu = x[mask].mean(axis=0)
    sd = x[mask].std(axis=0)
    sd[sd == 0] = 1.0
    out[mask] = (x[mask] - mu) / sd
    return out


def build_features(ds: SynthDataset, fcfg: FeatureConfig) -> MultimodalData:
    g = ds.genotypes
    feats, names, fids, masks = [], [], [], []
    for name in fcfg.modalities:
        if name == "raw":
            x, ids = subsample_raw(common_snps(g.autosomal(), fcfg.min_maf), fcfg.raw_every)
        elif name == "pgs":
            x, _ = compute_pgs_batch(g, ds.pgs_files)
            ids = [w.score_id for w in ds.pgs_files]
        else:
            x, ids = compute_burden(g, ds.annotation, fcfg.maf_cutoff)
        if x.shape[1] == 0:
            raise DataError(f"modality {name} produced no features")
        mask = np.asarray(ds.presence[name], dtype=bool)
        x = _standardize(x, mask) if fcfg.standardize else np.where(mask[:, None], x, 0.0)
        feats.append(x)
        names.append(name)
        fids.append(list(ids))
        masks.append(mask)
    return MultimodalData(list(g.individual_ids), ds.images, feats, masks, names, fids)


def write_dataset(directory, ds: SynthDataset, seed=None, config=None):
    os.makedirs(os.path.join(directory, "pgs_weights"), exist_ok=True)
    iids = list(ds.genotypes.individual_ids)
    img = pd.DataFrame(ds.images, columns=[f"img{j}" for j in range(ds.images.shape[1])])
    img.insert(0, "#iid", iids)
    write_table(os.path.join(directory, "images.tsv"), img, seed, config)
    write_genotypes(os.path.join(directory, "genotypes.tsv"), os.path.join(directory, "positions.tsv"),
                    ds.genotypes, seed, config)
    for w in ds.pgs_files:
        write_pgs_weights(os.path.join(directory, "pgs_weights", f"{w.score_id}.tsv"), w, seed, config)
    write_burden_annotation(os.path.join(directory, "burden_annotation.tsv"), ds.annotation, seed, config)
    write_table(os.path.join(directory, "covariates.tsv"), ds.covariates, seed, config)
    pres = pd.DataFrame({name: ds.presence[name].astype(int) for name in MODALITIES})
    pres.insert(0, "#iid", iids)
    write_table(os.path.join(directory, "presence.tsv"), pres, seed, config)
    lat = pd.DataFrame(ds.latent, columns=[f"latent{k}" for k in range(ds.latent.shape[1])])
    lat.insert(0, "#iid", iids)
    write_table(os.path.join(directory, "latent.tsv"), lat, seed, config)
    write_json(os.path.join(directory, "truth.json"), ds.truth)


def read_dataset(directory) -> SynthDataset:
    for name in DATASET_FILES:
        if not os.path.exists(os.path.join(directory, name)):
            raise DataError(f"dataset incomplete: expected {os.path.join(directory, name)}")
    g = read_genotypes(os.path.join(directory, "genotypes.tsv"), os.path.join(directory, "positions.tsv"))
    img = read_table(os.path.join(directory, "images.tsv"), dtype={"#iid": str})
    cov = read_table(os.path.join(directory, "covariates.tsv"), dtype={"#iid": str})
    pres = read_table(os.path.join(directory, "presence.tsv"), dtype={"#iid": str})
    for frame, label in ((img, "images"), (cov, "covariates"), (pres, "presence")):
        if list(frame["#iid"]) != g.individual_ids:
            raise DataError(f"{label}.tsv individuals are not aligned with genotypes.tsv")
    latent_path = os.path.join(directory, "latent.tsv")
    latent = (read_table(latent_path, dtype={"#iid": str}).iloc[:, 1:].to_numpy(dtype=np.float64)
              if os.path.exists(latent_path) else np.zeros((g.n_individuals, 0)))
    presence = {name: pres[name].to_numpy().astype(bool) for name in MODALITIES if name in pres}
    return SynthDataset(img.iloc[:, 1:].to_numpy(dtype=np.float64), g,
                        read_pgs_directory(os.path.join(directory, "pgs_weights")),
                        read_burden_annotation(os.path.join(directory, "burden_annotation.tsv")),
                        cov, presence, latent, read_json(os.path.join(directory, "truth.json")))
