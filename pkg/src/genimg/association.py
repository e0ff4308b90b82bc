"""Embedding GWAS: PCA, covariate conditioning, rank INT, per-SNP scan, Bonferroni, clumping."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from xml.sax.saxutils import escape, quoteattr

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from . import kernels
from .errors import ConfigError, DataError, RankDeficientError, SingularDesignError
from .genetics import GenotypeMatrix, mode_impute

SCAN_CHUNK = 256
P_FLOOR = np.finfo(np.float64).tiny
DISPLAY_FLOOR = 1e-99


@dataclass
class AssocConfig:
    n_components: int = 10
    covariates: list = field(default_factory=lambda: ["sex", "age"])
    p_genomewide: float = 5e-8
    bonferroni_factor: float | None = None
    clump_p1: float = 5e-8
    clump_p2: float = 1e-7
    clump_r2: float = 0.1
    clump_kb: float = 150
    min_maf: float = 0.01
    threads: int = 1

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.bonferroni_factor is None:
            self.bonferroni_factor = float(self.n_components)
        if not 0.0 < self.clump_r2 < 1.0:
            raise ConfigError(f"clump_r2 must lie in (0, 1), got {self.clump_r2}")
        if self.clump_p2 < self.clump_p1:
            raise ConfigError("clump_p2 must be >= clump_p1")
        if self.clump_kb < 0 or self.threads < 1:
            raise ConfigError("clump_kb must be >= 0 and threads >= 1")


@dataclass
class PCAResult:
    scores: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    mean: np.ndarray


def pca_fit(x, n_components):
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    if n <= n_components:
        raise DataError(f"PCA needs more rows ({n}) than components ({n_components})")
    if n_components > d:
        raise RankDeficientError(f"requested {n_components} components from {d} columns")
    mean = x.mean(axis=0)
    xc = x - mean
    _, sv, vt = np.linalg.svd(xc, full_matrices=False)
    tol = sv[0] * max(n, d) * np.finfo(np.float64).eps if sv.size else 0.0
    rank = int((sv > tol).sum())
    if rank < n_components:
        raise RankDeficientError(f"embedding rank {rank} is below the requested {n_components} components")
    comps = vt[:n_components].copy()
    flip = np.sign(comps[np.arange(n_components), np.abs(comps).argmax(axis=1)])
    comps *= flip[:, None]
    return PCAResult(xc @ comps.T, comps, sv[:n_components] ** 2 / (n - 1), mean)


def pca_reduce(x, n_components):
    """Scores on the top principal axes; each axis is signed so its largest loading is positive."""
    return pca_fit(x, n_components).scores


def _design(covariates, n):
    if covariates is None:
        return np.ones((n, 1))
    cov = np.asarray(covariates, dtype=np.float64)
    if cov.ndim == 1:
        cov = cov[:, None]
    if cov.shape[0] != n:
        raise DataError(f"covariates have {cov.shape[0]} rows, expected {n}")
    return np.column_stack([np.ones(n), cov])


def _basis(design):
    n, k = design.shape
    if n <= k:
        raise DataError(f"need more individuals ({n}) than design columns ({k})")
    if np.linalg.matrix_rank(design) < k:
        raise SingularDesignError("covariate design is singular; drop collinear covariate columns")
    q, _ = np.linalg.qr(design)
    return q


def residualize(y, covariates=None):
    """Residuals of an OLS fit of ``y`` on an intercept plus ``covariates``."""
    y = np.asarray(y, dtype=np.float64)
    q = _basis(_design(covariates, y.shape[0]))
    return y - q @ (q.T @ y)


def inverse_normal_transform(x, offset=0.375):
    """Rank-based INT with average ranks for ties: ``Phi^-1((r - c) / (n - 2c + 1))``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < 3:
        raise DataError(f"inverse-normal transform needs at least 3 values, got {n}")
    if np.all(x == x[0]):
        raise DataError("inverse-normal transform of a constant vector is undefined")
    ranks = rankdata(x, method="average")
    return kernels.norm_ppf((ranks - offset) / (n - 2.0 * offset + 1.0))


@dataclass
class ScanResult:
    beta: np.ndarray
    se: np.ndarray
    t: np.ndarray
    p: np.ndarray
    monomorphic: np.ndarray
    df: int


def _scan_chunk(dosage, q, y_res, syy, df):
    d = dosage - q @ (q.T @ dosage)
    sxx = np.einsum("ij,ij->j", d, d)
    sxy = d.T @ y_res
    raw_var = dosage.var(axis=0)
    mono = (raw_var == 0) | (sxx <= 1e-12 * dosage.shape[0])
    safe = np.where(mono, 1.0, sxx)
    beta = sxy / safe[:, None]
    rss = np.maximum(syy[None, :] - beta * sxy, 0.0)
    se = np.sqrt(rss / df / safe[:, None])
    with np.errstate(divide="ignore", invalid="ignore"):
        t = beta / se
    t = np.where(mono[:, None], 0.0, t)
    p = kernels.t_pvalue_two_sided(t, float(df))
    p = np.where(mono[:, None], 1.0, np.maximum(p, P_FLOOR))
    beta = np.where(mono[:, None], 0.0, beta)
    se = np.where(mono[:, None], np.nan, se)
    return beta, se, t, p, mono


def snp_scan(genotypes, traits, covariates=None, threads=1):
    """Per-SNP, per-dimension OLS of ``trait_k ~ 1 + dosage + covariates``.

    Columns are processed in fixed-size chunks, so the output does not depend
    on ``threads``.
    """
    dosage = genotypes.imputed() if isinstance(genotypes, GenotypeMatrix) else mode_impute(genotypes)
    y = np.asarray(traits, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    n = y.shape[0]
    if dosage.shape[0] != n:
        raise DataError(f"genotypes have {dosage.shape[0]} individuals, traits {n}")
    design = _design(covariates, n)
    df = n - design.shape[1] - 1
    if df <= 0:
        raise DataError(f"no residual degrees of freedom (n={n}, {design.shape[1] + 1} model columns)")
    q = _basis(design)
    y_res = y - q @ (q.T @ y)
    syy = np.einsum("ij,ij->j", y_res, y_res)
    bounds = [(i, min(i + SCAN_CHUNK, dosage.shape[1])) for i in range(0, dosage.shape[1], SCAN_CHUNK)]

    def work(b):
        return _scan_chunk(dosage[:, b[0]:b[1]], q, y_res, syy, df)

    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, bounds))
    else:
        parts = [work(b) for b in bounds]
    stacked = [np.concatenate([part[i] for part in parts], axis=0) for i in range(5)]
    return ScanResult(*stacked, df=df)


def bonferroni_aggregate(p, factor):
    """``min(1, factor * min_k p_k)`` along the last axis."""
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0 or p.shape[-1] == 0:
        raise DataError("cannot aggregate an empty p-value vector")
    return np.minimum(1.0, factor * p.min(axis=-1))


@dataclass
class Clump:
    clump_id: int
    index_snp: str
    chrom: int
    pos: int
    p: float
    members: list

    @property
    def size(self):
        return 1 + len(self.members)

    @property
    def snps(self):
        return [self.index_snp] + list(self.members)


def standardized_columns(dosage):
    """Centred, unit-norm dosage columns as rows (monomorphic columns are zero)."""
    d = np.asarray(dosage, dtype=np.float64)
    d = d - d.mean(axis=0)
    norm = np.sqrt(np.einsum("ij,ij->j", d, d))
    norm[norm == 0] = np.inf
    return np.ascontiguousarray((d / norm).T)


def clump_order(p, chrom, pos):
    """Ascending p, ties broken by chromosome then position."""
    return np.lexsort((np.asarray(pos), np.asarray(chrom), np.asarray(p)))


def clump_snps(snp_ids, chrom, pos, p, dosage, cfg: AssocConfig):
    """Greedy clumping; returns clumps in creation order (ascending index p)."""
    chrom = np.asarray(chrom, dtype=np.int64)
    pos = np.asarray(pos, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if not (len(snp_ids) == len(chrom) == len(pos) == len(p) == np.shape(dosage)[1]):
        raise DataError("clumping inputs are not aligned")
    clump_of, is_index = kernels.clump_greedy(
        clump_order(p, chrom, pos), p, chrom, pos, standardized_columns(mode_impute(dosage)),
        cfg.clump_p1, cfg.clump_p2, cfg.clump_r2, int(round(cfg.clump_kb * 1000)))
    clumps = []
    for j in np.flatnonzero(is_index):
        cid = int(clump_of[j])
        members = [k for k in np.flatnonzero(clump_of == cid) if k != j]
        members.sort(key=lambda k: (chrom[k], pos[k]))
        clumps.append(Clump(cid, snp_ids[j], int(chrom[j]), int(pos[j]), float(p[j]),
                            [snp_ids[k] for k in members]))
    clumps.sort(key=lambda c: c.clump_id)
    return clumps


def clump(results: pd.DataFrame, genotypes: GenotypeMatrix, cfg: AssocConfig):
    """Clump a summary-statistics frame (``snp_id chrom pos p_agg``) against its genotypes."""
    where = genotypes.snp_index()
    cols = np.array([where[s] for s in results["snp_id"]], dtype=np.intp)
    return clump_snps(list(results["snp_id"]), results["chrom"].to_numpy(), results["pos"].to_numpy(),
                      results["p_agg"].to_numpy(), genotypes.values[:, cols], cfg)


@dataclass
class AssociationResult:
    sumstats: pd.DataFrame
    clumps: list
    pca: PCAResult
    monomorphic: np.ndarray

    def clump_frame(self):
        rows = [(c.clump_id, c.index_snp, c.chrom, c.pos, c.p, c.size, ",".join(c.members))
                for c in self.clumps]
        return pd.DataFrame(rows, columns=["clump_id", "index_snp", "chrom", "pos", "p_agg", "size", "members"])


def covariate_matrix(frame: pd.DataFrame | None, names):
    if frame is None or not names:
        return None
    missing = [c for c in names if c not in frame.columns]
    if missing:
        raise DataError(f"covariates {missing} not found; available: {list(frame.columns)}")
    return frame[list(names)].to_numpy(dtype=np.float64)


def run_association(embeddings, genotypes: GenotypeMatrix, covariates, cfg: AssocConfig):
    """PCA -> residualize -> INT per dimension -> scan with covariates -> Bonferroni -> clump."""
    genotypes = genotypes.autosomal()
    if cfg.min_maf > 0:
        with np.errstate(invalid="ignore"):
            freq = np.nanmean(genotypes.values, axis=0) / 2.0
        keep = np.flatnonzero(np.nan_to_num(np.minimum(freq, 1 - freq)) >= cfg.min_maf)
        genotypes = genotypes.select_snps(keep)
    pca = pca_fit(embeddings, cfg.n_components)
    traits = residualize(pca.scores, covariates)
    traits = np.column_stack([inverse_normal_transform(traits[:, k]) for k in range(traits.shape[1])])
    scan = snp_scan(genotypes, traits, covariates, threads=cfg.threads)
    p_agg = bonferroni_aggregate(scan.p, cfg.bonferroni_factor)
    frame = pd.DataFrame({"snp_id": genotypes.snp_ids, "chrom": genotypes.chrom, "pos": genotypes.pos})
    for k in range(scan.beta.shape[1]):
        frame[f"beta_{k}"] = scan.beta[:, k]
        frame[f"t_{k}"] = scan.t[:, k]
        frame[f"p_{k}"] = scan.p[:, k]
    frame["p_agg"] = p_agg
    clumps = clump_snps(genotypes.snp_ids, genotypes.chrom, genotypes.pos, p_agg, genotypes.values, cfg)
    clump_of = {}
    for c in clumps:
        for s in c.snps:
            clump_of[s] = c.clump_id
    frame["clump_id"] = pd.array([clump_of.get(s) for s in genotypes.snp_ids], dtype="Int64")
    return AssociationResult(frame, clumps, pca, scan.monomorphic)


def manhattan_points(frame: pd.DataFrame):
    """Cumulative genome x coordinate and clamped ``-log10 p`` per SNP."""
    chrom = frame["chrom"].to_numpy()
    pos = frame["pos"].to_numpy(dtype=np.float64)
    x = np.zeros(len(frame))
    offset = 0.0
    for c in np.unique(chrom):
        sel = chrom == c
        x[sel] = pos[sel] + offset
        offset += pos[sel].max() + 1.0
    y = -np.log10(np.maximum(frame["p_agg"].to_numpy(dtype=np.float64), DISPLAY_FLOOR))
    return x, np.where(y == 0, 0.0, y)


def manhattan_svg(frame: pd.DataFrame, path, p_genomewide=5e-8, width=1000, height=400):
    """Write a Manhattan plot with genome-wide and Bonferroni threshold lines."""
    x, y = manhattan_points(frame)
    n = len(frame)
    bonf = 0.05 / max(n, 1)
    margin = 40
    y_top = max(float(y.max()) if n else 0.0, -math.log10(p_genomewide), -math.log10(bonf)) * 1.05
    x_span = float(x.max() - x.min()) if n > 1 else 1.0
    x_lo = float(x.min()) if n else 0.0

    def sx(v):
        return margin + (v - x_lo) / (x_span or 1.0) * (width - 2 * margin)

    def sy(v):
        return height - margin - v / y_top * (height - 2 * margin)

    colors = ("#1f4e79", "#7f7f7f")
    chrom = frame["chrom"].to_numpy()
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{margin}" y="20" font-size="12">-log10(p) by genome position</text>']
    for label, level, color in (("genome-wide", p_genomewide, "green"), ("bonferroni", bonf, "red")):
        ly = sy(-math.log10(level))
        out.append(f'<line class="threshold" data-name="{label}" x1="{margin}" x2="{width - margin}" '
                   f'y1="{ly:.3f}" y2="{ly:.3f}" stroke="{color}" stroke-dasharray="4 2"/>')
    uniq = {c: i for i, c in enumerate(np.unique(chrom))}
    for snp, xi, yi, c in zip(frame["snp_id"], x, y, chrom):
        out.append(f'<circle class="snp" data-snp={quoteattr(str(snp))} data-logp="{yi:.6g}" '
                   f'cx="{sx(xi):.3f}" cy="{sy(yi):.3f}" r="2" fill="{colors[uniq[c] % 2]}"/>')
    out.append(f'<text x="{width / 2}" y="{height - 8}" font-size="12">{escape("chromosome / position")}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
