"""Genetic feature builders: raw SNP subsampling, polygenic scores, burden scores.

Genotypes are additive dosages (0, 1, 2) stored as float with NaN for
missing calls. The genotype matrix is assumed to be oriented to each weight
file's effect allele already.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DataError, NoOverlapError
from .tsvio import read_table, write_table

log = logging.getLogger(__name__)

AUTOSOMES = tuple(range(1, 23))


@dataclass
class GenotypeMatrix:
    values: np.ndarray
    snp_ids: list
    chrom: np.ndarray
    pos: np.ndarray
    individual_ids: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.snp_ids = [str(s) for s in self.snp_ids]
        self.individual_ids = [str(i) for i in self.individual_ids]
        self.chrom = np.asarray(self.chrom, dtype=np.int64)
        self.pos = np.asarray(self.pos, dtype=np.int64)
        n, s = self.values.shape
        if len(self.individual_ids) != n or len(self.snp_ids) != s:
            raise DataError(f"genotype matrix {self.values.shape} does not match id lists "
                            f"({len(self.individual_ids)} individuals, {len(self.snp_ids)} SNPs)")
        if self.chrom.shape != (s,) or self.pos.shape != (s,):
            raise DataError("chrom/pos must have one entry per SNP")
        if len(set(self.snp_ids)) != s:
            raise DataError("SNP ids must be unique")
        observed = self.values[~np.isnan(self.values)]
        if not np.isin(observed, (0.0, 1.0, 2.0)).all():
            raise DataError("genotype values must be additive codes 0/1/2 or missing")

    @property
    def n_individuals(self):
        return self.values.shape[0]

    @property
    def n_snps(self):
        return self.values.shape[1]

    def snp_index(self):
        return {s: j for j, s in enumerate(self.snp_ids)}

    def select_snps(self, cols):
        cols = np.asarray(cols, dtype=np.intp)
        return GenotypeMatrix(self.values[:, cols], [self.snp_ids[j] for j in cols],
                              self.chrom[cols], self.pos[cols], self.individual_ids)

    def select_individuals(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return GenotypeMatrix(self.values[rows], self.snp_ids, self.chrom, self.pos,
                              [self.individual_ids[i] for i in rows])

    def autosomal(self):
        """Drop SNPs outside chromosomes 1-22."""
        return self.select_snps(np.flatnonzero(np.isin(self.chrom, AUTOSOMES)))

    def sorted_by_position(self):
        return self.select_snps(np.lexsort((self.pos, self.chrom)))

    def imputed(self):
        return mode_impute(self.values)


@dataclass
class PGSWeightFile:
    score_id: str
    snp_ids: list
    effect_alleles: list
    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if not len(self.snp_ids) == len(self.effect_alleles) == len(self.weights):
            raise DataError(f"{self.score_id}: ragged weight file")
        if len(set(self.snp_ids)) != len(self.snp_ids):
            raise DataError(f"{self.score_id}: duplicate SNP ids in weight file")


@dataclass
class BurdenAnnotation:
    """snp_id -> (gene_id, is_damaging, maf)."""
    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for snp, (gene, damaging, maf) in self.entries.items():
            if not 0.0 <= float(maf) <= 1.0:
                raise DataError(f"{snp}: maf {maf} outside [0, 1]")

    def genes(self):
        return sorted({gene for gene, _, _ in self.entries.values()})


def mode_impute(values):
    """Replace NaNs by the per-column mode of the observed codes (ties go to the smaller code)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise DataError("cannot impute an empty genotype matrix")
    missing = np.isnan(values)
    if not missing.any():
        return values.copy()
    counts = np.stack([(values == c).sum(axis=0) for c in (0.0, 1.0, 2.0)])
    if (counts.sum(axis=0) == 0).any():
        bad = np.flatnonzero(counts.sum(axis=0) == 0)[:5]
        raise DataError(f"columns {bad.tolist()} have no observed genotypes")
    # argmax returns the first maximum, i.e. the smallest code on ties
    modes = counts.argmax(axis=0).astype(np.float64)
    out = values.copy()
    rows, cols = np.nonzero(missing)
    out[rows, cols] = modes[cols]
    return out


def subsample_raw(g: GenotypeMatrix, k: int):
    """Every ``k``-th SNP column starting at index 0, mode-imputed.

    Returns ``(features, snp_ids)``.
    """
    if k < 1:
        raise DataError(f"sampling step must be >= 1, got {k}")
    if g.n_individuals == 0 or g.n_snps == 0:
        raise DataError("empty genotype matrix")
    cols = np.arange(0, g.n_snps, k)
    return mode_impute(g.values[:, cols]), [g.snp_ids[j] for j in cols]


def pgs_coverage(g: GenotypeMatrix, w: PGSWeightFile):
    index = g.snp_index()
    used = [s for s in w.snp_ids if s in index]
    absent = [s for s in w.snp_ids if s not in index]
    return {"score_id": w.score_id, "n_weights": len(w.snp_ids), "n_used": len(used),
            "n_absent": len(absent), "absent_sample": absent[:5]}


def compute_pgs(g: GenotypeMatrix, w: PGSWeightFile):
    """Weighted dosage sum over the SNPs shared by ``g`` and ``w``."""
    index = g.snp_index()
    pairs = [(index[s], wt) for s, wt in zip(w.snp_ids, w.weights) if s in index]
    if not pairs:
        raise NoOverlapError(
            f"{w.score_id}: no SNP overlap; weight ids e.g. {w.snp_ids[:3]}, genotype ids e.g. {g.snp_ids[:3]}")
    cov = pgs_coverage(g, w)
    if cov["n_absent"]:
        log.info("%s: %d of %d weights absent from genotypes", w.score_id, cov["n_absent"], cov["n_weights"])
    cols = np.array([c for c, _ in pairs], dtype=np.intp)
    weights = np.array([wt for _, wt in pairs])
    return mode_impute(g.values[:, cols]) @ weights


def compute_pgs_batch(g: GenotypeMatrix, files):
    """One column per weight file plus the per-file coverage reports."""
    scores = np.column_stack([compute_pgs(g, w) for w in files]) if files else np.zeros((g.n_individuals, 0))
    return scores, [pgs_coverage(g, w) for w in files]


def compute_burden(g: GenotypeMatrix, ann: BurdenAnnotation, maf_cutoff=0.01):
    """Binary gene-by-individual carrier matrix of damaging rare variants.

    Returns ``(matrix, gene_ids)``; genes are sorted by id and every gene
    in the annotation gets a column.
    """
    index = g.snp_index()
    unknown = [s for s in ann.entries if s not in index]
    if unknown:
        raise DataError(f"burden annotation references SNPs absent from genotypes, e.g. {unknown[:3]}")
    genes = ann.genes()
    gcol = {gene: c for c, gene in enumerate(genes)}
    out = np.zeros((g.n_individuals, len(genes)))
    dosages = np.nan_to_num(g.values, nan=0.0)
    for snp, (gene, damaging, maf) in ann.entries.items():
        if damaging and maf < maf_cutoff:
            carriers = dosages[:, index[snp]] >= 1
            out[carriers, gcol[gene]] = 1.0
    return out, genes


def write_genotypes(path_geno, path_pos, g: GenotypeMatrix, seed=None, config=None):
    frame = pd.DataFrame(g.values, columns=g.snp_ids).astype("Int64")
    frame.insert(0, "#iid", g.individual_ids)
    write_table(path_geno, frame, seed, config)
    pos = pd.DataFrame({"snp_id": g.snp_ids, "chrom": g.chrom, "pos": g.pos})
    write_table(path_pos, pos, seed, config)


def read_genotypes(path_geno, path_pos):
    frame = read_table(path_geno, dtype={"#iid": str})
    pos = read_table(path_pos, dtype={"snp_id": str})
    snp_ids = [str(c) for c in frame.columns[1:]]
    where = {s: i for i, s in enumerate(pos["snp_id"])}
    missing = [s for s in snp_ids if s not in where]
    if missing:
        raise DataError(f"{path_pos}: no position for SNPs {missing[:3]}")
    order = [where[s] for s in snp_ids]
    values = frame.iloc[:, 1:].to_numpy(dtype=np.float64, na_value=np.nan)
    return GenotypeMatrix(values, snp_ids, pos["chrom"].to_numpy()[order], pos["pos"].to_numpy()[order],
                          list(frame["#iid"]))


def write_pgs_weights(path, w: PGSWeightFile, seed=None, config=None):
    frame = pd.DataFrame({"snp_id": w.snp_ids, "effect_allele": w.effect_alleles, "weight": w.weights})
    write_table(path, frame, seed, config)


def read_pgs_weights(path):
    frame = read_table(path, dtype={"snp_id": str, "effect_allele": str})
    score_id = os.path.splitext(os.path.basename(path))[0]
    return PGSWeightFile(score_id, list(frame["snp_id"]), list(frame["effect_allele"]),
                         frame["weight"].to_numpy(dtype=np.float64))


def read_pgs_directory(directory):
    if not os.path.isdir(directory):
        raise DataError(f"missing input directory: expected {directory}")
    names = sorted(n for n in os.listdir(directory) if n.endswith(".tsv"))
    return [read_pgs_weights(os.path.join(directory, n)) for n in names]


def write_burden_annotation(path, ann: BurdenAnnotation, seed=None, config=None):
    rows = [(s, gene, int(bool(dmg)), maf) for s, (gene, dmg, maf) in ann.entries.items()]
    frame = pd.DataFrame(rows, columns=["snp_id", "gene_id", "is_damaging", "maf"])
    write_table(path, frame, seed, config)


def read_burden_annotation(path):
    frame = read_table(path, dtype={"snp_id": str, "gene_id": str})
    return BurdenAnnotation({r.snp_id: (r.gene_id, bool(r.is_damaging), float(r.maf))
                             for r in frame.itertuples(index=False)})
