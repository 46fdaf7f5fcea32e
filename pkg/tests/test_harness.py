import numpy as np
import pytest

from stim.data_io import SyntheticSpec, generate_examples, time_split
from stim.errors import ConfigError
from stim.harness import (
    EncodingCache,
    SweepSpec,
    evaluate,
    paired_t_test,
    run_ablation_suite,
    variants_for,
)
from stim.model import ModelConfig, build_model, encode_examples

SPEC = SyntheticSpec(n_users=30, n_items=60, n_categories=5, n_shops=12)
CFG = ModelConfig(n_items=60, n_categories=5, n_shops=12, k=8, epochs=1, batch_size=64, head_hidden=(8,))


@pytest.fixture(scope="module")
def cache():
    examples, _ = generate_examples(SPEC, 0)
    return EncodingCache(*time_split(examples, SPEC.boundary))


def test_sweep_grid_filters_constraint():
    assert len(SweepSpec().points()) == 4
    pts = SweepSpec(r_init=(0.2, 0.8), r_final=(0.5, 0.9)).points()
    assert [(p["r_init"], p["r_final"]) for p in pts] == [(0.2, 0.5), (0.2, 0.9), (0.8, 0.9)]
    with pytest.raises(ConfigError):
        SweepSpec(S=())


def test_variant_families():
    assert [v.name for v in variants_for("N", CFG)] == ["N1", "N2", "N3", "N4"]
    assert [v.name for v in variants_for("M", CFG, baseline=True)] == ["GSU", "M1", "M2", "M3", "M4"]
    curve = variants_for("curve", CFG)
    assert [v.config.curves["hour"].family for v in curve] == ["exponential", "power", "logarithmic"]
    assert len(variants_for("grid", CFG)) == 4
    with pytest.raises(ConfigError):
        variants_for("Q", CFG)


def test_single_variant_table(cache):
    table = run_ablation_suite(CFG, cache, variants_for("N", CFG)[-1:])
    assert len(table.rows) == 1
    row = table.rows[0]
    assert row["variant"] == "N4" and row["diverged"] == 0
    assert 0.0 <= float(row["auc_ctr"]) <= 1.0
    assert table.significance == []


def test_suite_deterministic(cache, tmp_path):
    variants = variants_for("curve", CFG)
    a = run_ablation_suite(CFG, cache, variants, seeds=(0, 1))
    b = run_ablation_suite(CFG, cache, variants, seeds=(0, 1))
    a.write_csv(tmp_path / "a.csv")
    b.write_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    assert len(a.rows) == 6
    assert len(a.significance) == 2
    assert "paired t-test" in a.pretty()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_recorded_not_raised(cache):
    bad = variants_for("N", CFG.replace(lr=1e200))[-1:]
    table = run_ablation_suite(CFG, cache, bad)
    assert len(table.rows) == 1
    assert table.rows[0]["diverged"] == 1 and table.rows[0]["auc_ctr"] == "nan"
    assert "non-finite" in table.rows[0]["error"]


def test_encoding_cache_reuses_shared_masks(cache):
    v = variants_for("M", CFG)
    assert cache.get(v[0].config) is cache.get(v[3].config)
    assert cache.get(variants_for("N", CFG)[0].config) is not cache.get(v[0].config)


def test_evaluate_report(cache):
    model = build_model(CFG.replace(task="both"))
    train, test = cache.get(model.config)
    rep = evaluate(model, test, "test")
    assert rep.rows == len(test["valid"])
    assert set(rep.auc) == {"ctr", "ctcvr"}
    assert rep.fingerprint == model.config.fingerprint()
    empty = evaluate(model, encode_examples([], model.config), "empty")
    assert empty.rows == 0 and np.isnan(empty.auc["ctr"])


def test_paired_t_test():
    t, p = paired_t_test([0.8, 0.82, 0.81, 0.83, 0.8], [0.7, 0.71, 0.72, 0.7, 0.69])
    assert t > 0 and p < 0.001
    assert np.isnan(paired_t_test([0.5], [0.4])[1])
    assert np.isnan(paired_t_test([0.5, 0.6], [0.4, 0.5])[1])  # constant difference
