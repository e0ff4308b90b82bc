import math

import numpy as np
import pytest

import genimg.explain as ex
from genimg.data import FeatureConfig, MultimodalData, build_features
from genimg.encoders import ContrastiveModel, EncoderConfig
from genimg.errors import ConfigError, DataError
from genimg.explain import (AttributionReport, ExplainerConfig, Individual, ReferenceBatch, completeness_gap,
                            explainer_gradient, explainer_value, global_attribution, integrated_gradients,
                            modality_attribution_summary)
from genimg.synth import SynthConfig, synth_generate
from genimg.trainer import TrainConfig, pretrain

from oracles import central_diff, rel_err


def toy_data(n=12, dims=(4, 3), seed=0, missing=None):
    rng = np.random.default_rng(seed)
    genetics = [rng.normal(size=(n, d)) for d in dims]
    present = [np.ones(n, bool) for _ in dims]
    if missing is not None:
        present[1][missing] = False
    return MultimodalData([f"i{k}" for k in range(n)], rng.normal(size=(n, 5)), genetics, present,
                          ["a", "b"][:len(dims)], [[f"f{m}_{j}" for j in range(d)] for m, d in enumerate(dims)])


def toy_model(dims=(4, 3), variant="H1"):
    cfg = EncoderConfig(image_input_dim=5, genetic_input_dims=list(dims), hidden_variant=variant,
                        hidden_width=8, repr_dim=6, proj_dim=4)
    return ContrastiveModel(cfg, seed=1).eval()


CFG = ExplainerConfig(b_ref=8, ig_steps=16, tau=0.5)


def test_config_validation():
    with pytest.raises(ConfigError):
        ExplainerConfig(b_ref=0)
    with pytest.raises(ConfigError):
        ExplainerConfig(ig_steps=1)
    with pytest.raises(ConfigError):
        ExplainerConfig(baseline="median")
    assert ex.FULL_SCALE_REFERENCE_SIZE == 1000 and ExplainerConfig().ig_steps == 128


def test_explainer_gradient_matches_fd():
    data, model = toy_data(), toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    x = Individual.from_data(data, 9)
    _, grads = explainer_gradient(x, ref, model, CFG)
    for m in range(2):
        def f(v, m=m):
            g = list(x.genetics)
            g[m] = v
            return explainer_value(Individual(x.image, g), ref, model, CFG).item()
        assert rel_err(grads[m], central_diff(f, x.genetics[m].copy())) < 1e-4


def test_duplicate_in_reference_is_finite_and_reference_matters():
    data, model = toy_data(), toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    x = Individual.from_data(data, 3)
    assert math.isfinite(explainer_value(x, ref, model, CFG).item())
    other = ReferenceBatch(model, data.subset(np.r_[np.arange(7), 10]))
    y = Individual.from_data(data, 9)
    assert explainer_value(y, ref, model, CFG).item() != explainer_value(y, other, model, CFG).item()


def test_zero_path_gives_zero_attributions():
    data, model = toy_data(), toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    x = Individual.from_data(data, 9)
    attr = integrated_gradients(x, [g.copy() for g in x.genetics], ref, model, CFG)
    assert all(np.all(a == 0.0) for a in attr)


def test_linear_explainer_closed_form(monkeypatch):
    w = [np.array([0.5, -2.0, 1.0, 3.0]), np.array([1.0, 0.0, -1.5])]
    monkeypatch.setattr(ex, "explainer_gradient", lambda x, ref, model, cfg: (0.0, [v.copy() for v in w]))
    x = Individual(np.zeros(5), [np.arange(4.0), np.ones(3)])
    base = [np.full(4, 0.5), np.zeros(3)]
    attr = integrated_gradients(x, base, None, None, CFG)
    for a, wm, xm, bm in zip(attr, w, x.genetics, base):
        np.testing.assert_array_equal(a, wm * (xm - bm))


def test_completeness_improves_with_steps():
    data, model = toy_data(), toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    x = Individual.from_data(data, 10)
    coarse = completeness_gap(x, ref, model, ExplainerConfig(b_ref=8, ig_steps=32, tau=0.5))
    fine = completeness_gap(x, ref, model, ExplainerConfig(b_ref=8, ig_steps=256, tau=0.5))
    assert fine < coarse and fine < 1e-3


def test_reference_order_invariance():
    data, model = toy_data(), toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    x = Individual.from_data(data, 9)
    a = integrated_gradients(x, None, ref, model, CFG)
    b = integrated_gradients(x, None, ref.permuted(np.arange(8)[::-1]), model, CFG)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-13)


def test_ignored_feature_gets_exact_zero():
    data, model = toy_data(), toy_model()
    model.params["gen0.fc1.weight"].data[2] = 0.0
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    attr = integrated_gradients(Individual.from_data(data, 9), None, ref, model, CFG)
    assert attr[0][2] == 0.0 and np.any(attr[0] != 0)


def test_missing_modality_is_left_out():
    data = toy_data(missing=[9, 2])
    model = toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    x = Individual.from_data(data, 9)
    assert x.genetics[1] is None
    attr = integrated_gradients(x, None, ref, model, CFG)
    assert attr[1] is None and attr[0] is not None
    reports = global_attribution(data, [9, 10], ref, model, CFG)
    assert np.isnan(reports[1].local[0]).all()
    np.testing.assert_array_equal(reports[1].global_scores, np.abs(reports[1].local[1]))


def test_global_attribution_properties():
    data, model = toy_data(), toy_model()
    ref = ReferenceBatch(model, data.subset(np.arange(8)))
    single = global_attribution(data, [9], ref, model, CFG)
    np.testing.assert_array_equal(single[0].global_scores, np.abs(single[0].local[0]))
    fwd = global_attribution(data, [8, 9, 10], ref, model, CFG)
    rev = global_attribution(data, [10, 9, 8], ref, model, CFG)
    np.testing.assert_allclose(fwd[0].global_scores, rev[0].global_scores, rtol=1e-14)
    with pytest.raises(DataError):
        global_attribution(data, [3, 9], ref, model, CFG)
    frame = fwd[0].to_frame()
    assert list(frame.columns) == ["feature_id", "modality", "local_or_global", "iid", "value"]
    assert (frame.local_or_global == "global").sum() == 4 and len(fwd[0].top(2)) == 2
    assert fwd[0].metadata()["reference_fingerprint"] == ref.fingerprint


def report(name, scores, fp="x"):
    scores = np.asarray(scores, float)
    return AttributionReport(name, [f"{name}{j}" for j in range(len(scores))], ["i"], scores[None, :], scores, fp)


def test_modality_summary():
    s = modality_attribution_summary([report("a", [0.7])])
    assert s["a"]["mean"] == s["a"]["sum"] == 0.7
    base = modality_attribution_summary([report("b", [0.2, 0.6])])["b"]
    padded = modality_attribution_summary([report("b", [0.2, 0.6, 0.0, 0.0])])["b"]
    assert padded["mean"] == base["mean"] / 2 and padded["sum"] == base["sum"]
    with pytest.raises(DataError):
        modality_attribution_summary([report("a", [1.0], "p"), report("b", [1.0], "q")])


def test_signal_modality_ranks_first():
    ds = synth_generate(SynthConfig(n=1000, n_snps=400, n_causal=6, n_latent=3, n_rare=150, n_genes=10), seed=4)
    data = build_features(ds, FeatureConfig(modalities=["pgs", "burden"]))
    model, _ = pretrain(data.subset(np.arange(900)),
                        TrainConfig(epochs=10, hidden_width=32, repr_dim=32, proj_dim=16))
    cfg = ExplainerConfig(b_ref=64, ig_steps=16)
    ref = ReferenceBatch(model, data.subset(np.arange(900, 964)))
    summary = modality_attribution_summary(global_attribution(data, range(964, 1000), ref, model, cfg))
    assert summary["pgs"]["mean"] > summary["burden"]["mean"]
