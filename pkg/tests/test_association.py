import xml.etree.ElementTree as ET

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genimg.association import (AssocConfig, bonferroni_aggregate, clump_snps, inverse_normal_transform,
                                manhattan_points, manhattan_svg, pca_fit, pca_reduce, residualize, run_association,
                                snp_scan)
from genimg.errors import ConfigError, DataError, RankDeficientError, SingularDesignError
from genimg.genetics import GenotypeMatrix

from oracles import clump_brute


def test_config_defaults_and_validation():
    cfg = AssocConfig()
    assert cfg.bonferroni_factor == 10.0
    assert AssocConfig(n_components=4).bonferroni_factor == 4.0
    with pytest.raises(ConfigError):
        AssocConfig(clump_r2=1.0)
    with pytest.raises(ConfigError):
        AssocConfig(clump_p1=1e-3, clump_p2=1e-4)


def test_pca_examples():
    rng = np.random.default_rng(0)
    x = np.zeros((50, 4))
    x[:, 0] = rng.normal(size=50) * 3
    x[:, 2] = rng.normal(size=50)
    res = pca_fit(x, 2)
    recon = res.scores @ res.components + res.mean
    assert np.max(np.abs(recon - x)) < 1e-12
    y = pca_reduce(rng.normal(size=(200, 6)) @ rng.normal(size=(6, 6)), 4)
    c = np.corrcoef(y.T)
    assert np.max(np.abs(c - np.diag(np.diag(c)))) < 1e-10
    ev = pca_fit(rng.normal(size=(100, 8)), 5).explained_variance
    assert np.all(np.diff(ev) <= 0)


def test_pca_sign_convention_and_rank():
    rng = np.random.default_rng(1)
    res = pca_fit(rng.normal(size=(60, 5)), 3)
    for comp in res.components:
        assert comp[np.abs(comp).argmax()] > 0
    low_rank = rng.normal(size=(60, 2)) @ rng.normal(size=(2, 5))
    with pytest.raises(RankDeficientError, match="rank 2"):
        pca_fit(low_rank, 3)


def test_residualize_examples():
    rng = np.random.default_rng(2)
    y = rng.normal(size=30)
    np.testing.assert_allclose(residualize(y, None), y - y.mean(), atol=1e-14)
    cov = rng.normal(size=(30, 2))
    assert np.max(np.abs(residualize(1.0 + cov @ [2.0, -1.0], cov))) < 1e-9
    x = np.column_stack([np.ones(30), cov])
    beta = np.linalg.solve(x.T @ x, x.T @ y)
    r = residualize(y, cov)
    np.testing.assert_allclose(r, y - x @ beta, atol=1e-9)
    assert np.max(np.abs((cov / np.linalg.norm(cov, axis=0)).T @ r)) < 1e-8
    with pytest.raises(SingularDesignError):
        residualize(y, np.column_stack([cov[:, 0], 2 * cov[:, 0]]))


def test_inverse_normal_transform():
    z = inverse_normal_transform(np.array([3.0, 1.0, 2.0, 5.0, 4.0]))
    assert z[0] == 0.0
    assert abs(z[1] + 1.17976111761186095) < 1e-12
    x = np.random.default_rng(3).normal(size=40)
    assert np.all(np.argsort(inverse_normal_transform(x)) == np.argsort(x))
    tied = inverse_normal_transform(np.array([1.0, 1.0, 2.0]))
    assert tied[0] == tied[1]
    with pytest.raises(DataError):
        inverse_normal_transform(np.ones(5))


def test_scan_examples():
    rng = np.random.default_rng(4)
    n = 500
    dosage = rng.binomial(2, 0.3, size=(n, 3)).astype(float)
    dosage[:, 2] = 1.0
    y = 0.5 * dosage[:, 0] + 1e-3 * rng.normal(size=n)
    res = snp_scan(dosage, y)
    assert res.p[0, 0] < 1e-20
    assert res.monomorphic[2] and res.p[2, 0] == 1.0
    perm = rng.permutation(n)
    res2 = snp_scan(dosage[perm], y[perm])
    np.testing.assert_allclose(res2.p, res.p, rtol=1e-9)


def test_scan_matches_lstsq_oracle():
    rng = np.random.default_rng(5)
    n = 80
    dosage = rng.binomial(2, 0.4, size=(n, 5)).astype(float)
    cov = rng.normal(size=(n, 2))
    y = rng.normal(size=(n, 2))
    res = snp_scan(dosage, y, cov)
    from scipy import stats
    for j in range(5):
        x = np.column_stack([np.ones(n), dosage[:, j], cov])
        for k in range(2):
            coef, rss, *_ = np.linalg.lstsq(x, y[:, k], rcond=None)
            sigma2 = rss[0] / (n - 4)
            se = np.sqrt(sigma2 * np.linalg.inv(x.T @ x)[1, 1])
            assert abs(res.beta[j, k] - coef[1]) < 1e-10
            assert abs(res.t[j, k] - coef[1] / se) < 1e-8
            assert abs(res.p[j, k] - 2 * stats.t.sf(abs(coef[1] / se), n - 4)) < 1e-10
    assert res.df == n - 4


def test_scan_thread_independence():
    rng = np.random.default_rng(6)
    dosage = rng.binomial(2, 0.3, size=(100, 700)).astype(float)
    y = rng.normal(size=(100, 3))
    a = snp_scan(dosage, y, threads=1)
    b = snp_scan(dosage, y, threads=4)
    assert a.p.tobytes() == b.p.tobytes() and a.beta.tobytes() == b.beta.tobytes()


def test_scan_no_dof():
    with pytest.raises(DataError):
        snp_scan(np.ones((2, 1)), np.array([1.0, 2.0]))


def test_bonferroni_examples():
    p = np.full(10, 0.5)
    p[3] = 0.003
    assert abs(bonferroni_aggregate(p, 10) - 0.03) < 1e-15
    assert bonferroni_aggregate(np.ones(10), 10) == 1.0
    assert bonferroni_aggregate(np.array([0.5]), 10) == 1.0
    with pytest.raises(DataError):
        bonferroni_aggregate(np.array([]), 10)


def test_clump_examples():
    rng = np.random.default_rng(7)
    col = rng.binomial(2, 0.4, 100).astype(float)
    dosage = np.column_stack([col, col])
    cfg = AssocConfig()
    same = clump_snps(["a", "b"], [1, 1], [1000, 11000], [1e-9, 2e-9], dosage, cfg)
    assert len(same) == 1 and same[0].size == 2 and same[0].index_snp == "a"
    split = clump_snps(["a", "b"], [1, 2], [1000, 1000], [1e-9, 2e-9], dosage, cfg)
    assert len(split) == 2


def random_scenario(rng, s=50, n=60):
    base = rng.binomial(2, 0.3, size=(n, s // 5)).astype(float)
    dosage = np.repeat(base, 5, axis=1)
    flip = rng.random(dosage.shape) < rng.uniform(0.05, 0.4)
    dosage[flip] = rng.integers(0, 3, flip.sum())
    chrom = np.sort(rng.integers(1, 4, s))
    pos = rng.integers(1, 400_000, s)
    p = 10.0 ** -rng.uniform(4, 10, s)
    p[rng.random(s) < 0.15] = 1e-8  # ties
    return [f"s{j}" for j in range(s)], chrom, pos, p, dosage


def test_clump_oracle_randomized():
    rng = np.random.default_rng(8)
    for _ in range(25):
        ids, chrom, pos, p, dosage = random_scenario(rng)
        cfg = AssocConfig(clump_p1=1e-7, clump_p2=1e-5, clump_r2=rng.uniform(0.05, 0.6), clump_kb=100)
        got = [(c.index_snp, sorted(c.snps)) for c in clump_snps(ids, chrom, pos, p, dosage, cfg)]
        assert got == clump_brute(ids, chrom, pos, p, dosage, 1e-7, 1e-5, cfg.clump_r2, 100)


def test_clump_input_order_invariance():
    rng = np.random.default_rng(9)
    ids, chrom, pos, p, dosage = random_scenario(rng)
    cfg = AssocConfig(clump_p1=1e-7, clump_p2=1e-5, clump_r2=0.2, clump_kb=100)
    base = {c.index_snp: sorted(c.snps) for c in clump_snps(ids, chrom, pos, p, dosage, cfg)}
    perm = rng.permutation(len(ids))
    shuffled = clump_snps([ids[j] for j in perm], chrom[perm], pos[perm], p[perm], dosage[:, perm], cfg)
    assert {c.index_snp: sorted(c.snps) for c in shuffled} == base


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 100_000))
def test_every_significant_snp_in_one_clump(seed):
    ids, chrom, pos, p, dosage = random_scenario(np.random.default_rng(seed))
    cfg = AssocConfig(clump_p1=1e-7, clump_p2=1e-7, clump_r2=0.3)
    clumps = clump_snps(ids, chrom, pos, p, dosage, cfg)
    members = [s for c in clumps for s in c.snps]
    assert len(members) == len(set(members))
    assert {ids[j] for j in np.flatnonzero(p <= 1e-7)} == set(members)


def test_manhattan(tmp_path):
    frame = pd.DataFrame({"snp_id": ["a", "b", "c"], "chrom": [1, 1, 2], "pos": [10, 20, 5],
                          "p_agg": [1.0, 1e-120, 0.01]})
    _, y = manhattan_points(frame)
    assert y[0] == 0.0 and y[1] == 99.0
    path = tmp_path / "m.svg"
    manhattan_svg(frame, path)
    root = ET.parse(path).getroot()
    circles = [e for e in root.iter() if e.tag.endswith("circle")]
    assert len(circles) == 3
    _, y_null = manhattan_points(frame.assign(p_agg=1.0))
    assert np.all(y_null == 0)


def test_permuted_trait_breaks_planted_signal():
    rng = np.random.default_rng(10)
    n, s = 2000, 50
    values = rng.binomial(2, 0.3, size=(n, s)).astype(float)
    g = GenotypeMatrix(values, [f"s{j}" for j in range(s)], np.ones(s, int), np.arange(s) * 1000 + 1,
                       [f"i{i}" for i in range(n)])
    emb = np.column_stack([values[:, 5] + rng.normal(size=n)] + [rng.normal(size=n) for _ in range(3)])
    cfg = AssocConfig(n_components=3, covariates=[], clump_p1=1e-6, clump_p2=1e-6)
    hit = run_association(emb, g, None, cfg)
    assert hit.sumstats.p_agg[5] < 1e-20
    null = run_association(emb[rng.permutation(n)], g, None, cfg)
    assert null.sumstats.p_agg[5] > 1e-4
    assert list(hit.sumstats.columns[:3]) == ["snp_id", "chrom", "pos"]
    assert list(hit.sumstats.columns[-2:]) == ["p_agg", "clump_id"]
