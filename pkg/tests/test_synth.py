import numpy as np
import pytest

from genimg.data import FeatureConfig, build_features, read_dataset, write_dataset
from genimg.errors import ConfigError
from genimg.synth import SynthConfig, synth_generate

SMALL = dict(n=300, n_snps=200, n_rare=40, n_genes=8, p_img=16)


def test_config_errors():
    with pytest.raises(ConfigError):
        SynthConfig(n=0)
    with pytest.raises(ConfigError):
        SynthConfig(n_snps=5, n_causal=6)
    with pytest.raises(ConfigError):
        SynthConfig(missing={"nope": 0.1})


def test_regeneration_is_bit_identical():
    a = synth_generate(SynthConfig(**SMALL), seed=5)
    b = synth_generate(SynthConfig(**SMALL), seed=5)
    assert a.images.tobytes() == b.images.tobytes()
    assert np.array_equal(a.genotypes.values, b.genotypes.values, equal_nan=True)
    assert a.truth == b.truth


def test_null_model_images_independent_of_genotypes():
    ds = synth_generate(SynthConfig(n=2000, n_snps=200, n_rare=0, n_genes=0, effect_size=0.0), seed=1)
    g = ds.genotypes.imputed()
    causal = [ds.genotypes.snp_ids.index(s) for s in ds.truth["causal_snp_ids"]]
    bound = 3 / np.sqrt(2000)
    for j in causal:
        r = [abs(np.corrcoef(g[:, j], ds.images[:, c])[0, 1]) for c in range(4)]
        assert max(r) < bound


def test_planted_marginal_correlation():
    ds = synth_generate(SynthConfig(), seed=42)
    g = ds.genotypes.imputed()
    for snp, k in zip(ds.truth["causal_snp_ids"], ds.truth["causal_latent"]):
        j = ds.genotypes.snp_index()[snp]
        assert np.corrcoef(g[:, j], ds.latent[:, k])[0, 1] > 0.3


def test_allele_frequency_range():
    ds = synth_generate(SynthConfig(**SMALL), seed=2)
    common = [j for j, s in enumerate(ds.genotypes.snp_ids) if s.startswith("rs")]
    f = np.nanmean(ds.genotypes.values[:, common], axis=0) / 2
    assert f.min() > 0.0 and f.max() < 0.6


def test_dataset_roundtrip_and_features(tmp_path):
    cfg = SynthConfig(**SMALL, missing={"raw": 0.0, "pgs": 0.2, "burden": 0.0})
    ds = synth_generate(cfg, seed=3)
    write_dataset(tmp_path, ds, seed=3)
    back = read_dataset(tmp_path)
    np.testing.assert_array_equal(back.images, ds.images)
    assert [w.score_id for w in back.pgs_files] == sorted(w.score_id for w in ds.pgs_files)
    assert back.truth["causal_snp_ids"] == ds.truth["causal_snp_ids"]
    data = build_features(back, FeatureConfig(raw_every=10))
    assert data.modality_names == ["raw", "pgs", "burden"]
    pgs = data.genetics[1]
    present = data.present[1]
    assert 0 < (~present).sum() < back.genotypes.n_individuals
    assert np.all(pgs[~present] == 0)
    np.testing.assert_allclose(pgs[present].mean(axis=0), 0, atol=1e-10)
