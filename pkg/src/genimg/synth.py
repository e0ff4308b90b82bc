"""Planted-signal synthetic imaging-genetics cohorts.

Common SNPs are simulated in short LD blocks by copying the previous
haplotype allele with probability ``ld_copy``. A handful of causal SNPs
drive latent traits, the latent traits are pushed through a fixed random
nonlinear map to produce image features, and the weight files and burden
annotation needed for the other genetic modalities are emitted alongside.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from .errors import ConfigError
from .genetics import BurdenAnnotation, GenotypeMatrix, PGSWeightFile

MODALITIES = ("raw", "pgs", "burden")
ALLELES = np.array(list("ACGT"))


@dataclass
class SynthConfig:
    n: int = 2000
    p_img: int = 64
    n_snps: int = 2000
    n_causal: int = 3
    n_latent: int = 0
    effect_size: float = 0.8
    env_noise: float = 1.0
    img_noise: float = 0.1
    render_hidden: int = 32
    n_chrom: int = 22
    ld_block_size: int = 4
    ld_copy: float = 0.9
    snp_spacing_bp: int = 10_000
    block_gap_bp: int = 50_000
    genotype_missing_rate: float = 0.005
    n_rare: int = 300
    n_genes: int = 60
    damaging_frac: float = 0.6
    common_in_annotation_frac: float = 0.1
    burden_effect: float = 0.0
    pgs_weight_noise: float = 0.1
    pgs_extra_snps: int = 20
    n_noise_pgs: int = 5
    noise_pgs_snps: int = 20
    covariate_effect: float = 0.3
    missing: dict = field(default_factory=lambda: {"raw": 0.0, "pgs": 0.0, "burden": 0.0})

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError(f"n must be positive, got {self.n}")
        if self.p_img < 1 or self.n_snps < 1:
            raise ConfigError("p_img and n_snps must be positive")
        if self.n_causal > self.n_snps:
            raise ConfigError(f"n_causal ({self.n_causal}) exceeds n_snps ({self.n_snps})")
        if self.n_causal < 0 or self.ld_block_size < 1 or not 0.0 <= self.ld_copy <= 1.0:
            raise ConfigError("invalid n_causal, ld_block_size or ld_copy")
        n_blocks = -(-self.n_snps // self.ld_block_size)
        if self.n_causal > n_blocks:
            raise ConfigError(f"n_causal ({self.n_causal}) exceeds the number of LD blocks ({n_blocks})")
        if self.n_latent <= 0:
            self.n_latent = max(self.n_causal, 1)
        bad = set(self.missing) - set(MODALITIES)
        if bad:
            raise ConfigError(f"unknown modalities in missing rates: {sorted(bad)}")
        if any(not 0.0 <= r < 1.0 for r in self.missing.values()):
            raise ConfigError("missing rates must lie in [0, 1)")


@dataclass
class SynthDataset:
    images: np.ndarray
    genotypes: GenotypeMatrix
    pgs_files: list
    annotation: BurdenAnnotation
    covariates: pd.DataFrame
    presence: dict
    latent: np.ndarray
    truth: dict


def _common_genotypes(cfg, rng):
    n, s, bs = cfg.n, cfg.n_snps, cfg.ld_block_size
    freqs = rng.uniform(0.05, 0.5, s)
    dosage = np.zeros((n, s))
    block_of = np.arange(s) // bs
    for h in range(2):
        hap = np.zeros((n, s), dtype=np.int8)
        fresh = rng.random((n, s)) < freqs
        copy = rng.random((n, s)) < cfg.ld_copy
        for j in range(s):
            if j % bs == 0:
                hap[:, j] = fresh[:, j]
            else:
                hap[:, j] = np.where(copy[:, j], hap[:, j - 1], fresh[:, j])
        dosage += hap
    n_blocks = block_of[-1] + 1
    chrom = 1 + (block_of * cfg.n_chrom) // n_blocks
    pos = np.zeros(s, dtype=np.int64)
    cursor = {}
    for j in range(s):
        c = chrom[j]
        if j % bs == 0:
            cursor[c] = cursor.get(c, 0) + cfg.block_gap_bp
        else:
            cursor[c] += cfg.snp_spacing_bp
        pos[j] = cursor[c]
    return dosage, freqs, chrom, pos, block_of


def synth_generate(cfg: SynthConfig, seed: int = 42) -> SynthDataset:
    rng = np.random.default_rng(seed)
    n = cfg.n
    dosage, freqs, chrom, pos, block_of = _common_genotypes(cfg, rng)
    snp_ids = [f"rs{j + 1:06d}" for j in range(cfg.n_snps)]

    causal_blocks = rng.choice(block_of[-1] + 1, size=cfg.n_causal, replace=False)
    causal = []
    for blk in causal_blocks:
        members = np.flatnonzero(block_of == blk)
        causal.append(int(rng.choice(members)))
    causal_latent = [c % cfg.n_latent for c in range(cfg.n_causal)]
    mean = dosage.mean(axis=0)
    sd = dosage.std(axis=0)
    sd[sd == 0] = 1.0

    genetic = np.zeros((n, cfg.n_latent))
    for j, k in zip(causal, causal_latent):
        genetic[:, k] += cfg.effect_size * (dosage[:, j] - mean[j]) / sd[j]

    # rare variants for the burden modality
    gene_ids = [f"GENE{g + 1:04d}" for g in range(cfg.n_genes)]
    rare_f = np.where(rng.random(cfg.n_rare) < 0.9, rng.uniform(0.001, 0.01, cfg.n_rare),
                      rng.uniform(0.02, 0.05, cfg.n_rare))
    rare = rng.binomial(2, rare_f, size=(n, cfg.n_rare)).astype(np.float64)
    rare_gene = rng.integers(0, max(cfg.n_genes, 1), cfg.n_rare)
    rare_dmg = rng.random(cfg.n_rare) < cfg.damaging_frac
    rare_chrom = rng.integers(1, cfg.n_chrom + 1, cfg.n_rare)
    rare_pos = rng.integers(1, int(pos.max()) + 1, cfg.n_rare) * 10 + 1
    rare_ids = [f"rv{j + 1:06d}" for j in range(cfg.n_rare)]
    entries = {}
    for j in range(cfg.n_rare):
        entries[rare_ids[j]] = (gene_ids[rare_gene[j]], bool(rare_dmg[j]), float(rare_f[j]))
    n_common_ann = int(round(cfg.common_in_annotation_frac * cfg.n_snps)) if cfg.n_genes else 0
    for j in rng.choice(cfg.n_snps, size=n_common_ann, replace=False):
        entries[snp_ids[j]] = (gene_ids[rng.integers(0, cfg.n_genes)], bool(rng.random() < 0.5),
                               float(min(freqs[j], 1 - freqs[j])))
    if cfg.burden_effect and cfg.n_genes:
        carrier = np.zeros((n, cfg.n_genes))
        for j in range(cfg.n_rare):
            if rare_dmg[j] and rare_f[j] < 0.01:
                carrier[rare[:, j] >= 1, rare_gene[j]] = 1.0
        genetic[:, 0] += cfg.burden_effect * carrier[:, : max(1, cfg.n_genes // 10)].sum(axis=1)

    latent = genetic + cfg.env_noise * rng.standard_normal((n, cfg.n_latent))

    sex = rng.integers(0, 2, n)
    age = rng.uniform(40.0, 70.0, n)
    w_in = rng.standard_normal((cfg.n_latent, cfg.render_hidden)) / np.sqrt(cfg.n_latent)
    b_in = 0.2 * rng.standard_normal(cfg.render_hidden)
    w_out = rng.standard_normal((cfg.render_hidden, cfg.p_img)) / np.sqrt(cfg.render_hidden)
    w_lin = rng.standard_normal((cfg.n_latent, cfg.p_img)) / np.sqrt(cfg.n_latent)
    age_dir = rng.standard_normal(cfg.p_img) / np.sqrt(cfg.p_img)
    scale = latent.std(axis=0)
    scale[scale == 0] = 1.0
    lat_std = latent / scale
    images = (np.tanh(lat_std @ w_in + b_in) @ w_out + 0.5 * lat_std @ w_lin
              + cfg.covariate_effect * np.outer((age - 55.0) / 8.66, age_dir)
              + cfg.img_noise * rng.standard_normal((n, cfg.p_img)))

    all_values = np.concatenate([dosage, rare], axis=1)
    if cfg.genotype_missing_rate > 0:
        holes = rng.random(all_values.shape) < cfg.genotype_missing_rate
        all_values[holes] = np.nan
    iids = [f"ind{i + 1:05d}" for i in range(n)]
    geno = GenotypeMatrix(all_values, snp_ids + rare_ids, np.concatenate([chrom, rare_chrom]),
                          np.concatenate([pos, rare_pos]), iids).sorted_by_position()

    pgs_files = []
    causal_set = set(causal)
    non_causal = np.array([j for j in range(cfg.n_snps) if j not in causal_set])
    for k in range(cfg.n_latent):
        cols = [j for j, kk in zip(causal, causal_latent) if kk == k]
        weights = [cfg.effect_size / sd[j] * (1.0 + cfg.pgs_weight_noise * rng.standard_normal()) for j in cols]
        extra = rng.choice(non_causal, size=min(cfg.pgs_extra_snps, len(non_causal)), replace=False)
        cols += [int(j) for j in extra]
        weights += list(0.01 * rng.standard_normal(len(extra)))
        pgs_files.append(PGSWeightFile(f"pgs_trait{k}", [snp_ids[j] for j in cols],
                                       list(ALLELES[rng.integers(0, 4, len(cols))]), np.array(weights)))
    null_pool = np.array([j for j in range(cfg.n_snps) if block_of[j] not in set(causal_blocks.tolist())])
    for k in range(cfg.n_noise_pgs):
        cols = rng.choice(null_pool, size=min(cfg.noise_pgs_snps, len(null_pool)), replace=False)
        pgs_files.append(PGSWeightFile(f"noise{k}", [snp_ids[j] for j in cols],
                                       list(ALLELES[rng.integers(0, 4, len(cols))]),
                                       rng.standard_normal(len(cols))))

    presence = {}
    for name in MODALITIES:
        rate = cfg.missing.get(name, 0.0)
        presence[name] = rng.random(n) >= rate

    covariates = pd.DataFrame({"#iid": iids, "sex": sex, "age": np.round(age, 3)})
    truth = {
        "seed": seed,
        "config": asdict(cfg),
        "causal_snp_ids": [snp_ids[j] for j in causal],
        "causal_latent": causal_latent,
        "informative_pgs": [f"pgs_trait{k}" for k in range(cfg.n_latent)],
        "noise_pgs": [f"noise{k}" for k in range(cfg.n_noise_pgs)],
        "latent_loadings": w_lin.tolist(),
    }
    return SynthDataset(images, geno, pgs_files, BurdenAnnotation(entries), covariates, presence, latent, truth)
