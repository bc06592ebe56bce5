"""Properties of the real trained cat/dog model.

These reuse the model the acceptance suite memoizes under tests/_cache and
skip when it is absent (run tests/test_acceptance.py first, or just run the
whole suite: acceptance sorts before this module).
"""

import numpy as np
import pytest
from scipy import stats as sstats

from cnnscope import data as D
from cnnscope.attribution import robustness
from cnnscope.maximize import AscentConfig, RegularizerConfig, ascend, class_logit
from cnnscope.model import evaluate, load_weights, predict_logits, save_weights

from conftest import CACHE_DIR


@pytest.fixture(scope="module")
def trained_catdog(cifar_dir):
    weights = CACHE_DIR / "catdog_seed0.mcnn"
    if not weights.exists():
        pytest.skip("cached cat/dog model not built yet; run tests/test_acceptance.py")
    model = load_weights(weights)
    test_images = D.load_cifar10(cifar_dir, "test")
    stats = D.compute_stats(D.load_cifar10(cifar_dir, "train"))
    val = D.subset(test_images, {3, 5}, {3: 0, 5: 1})
    return model, val, stats


def test_save_load_argmax_agreement(trained_catdog, tmp_path):
    model, val, stats = trained_catdog
    x, _ = D.to_batch(val, stats)
    base = predict_logits(model, x)
    p = tmp_path / "w.mcnn"
    save_weights(model, p)
    again = predict_logits(load_weights(p), x)
    assert np.max(np.abs(base - again)) < 1e-4
    agree = (base.argmax(axis=1) == again.argmax(axis=1)).mean()
    assert agree >= 0.999


def test_ascent_objective_mostly_increases(trained_catdog):
    model, val, stats = trained_catdog
    x_all, y_all = D.to_batch(val, stats)
    preds = predict_logits(model, x_all).argmax(axis=1)
    cat = next(i for i in range(len(val)) if y_all[i] == 0 and preds[i] == 0)
    trace = ascend(model, class_logit(1), RegularizerConfig(),
                   AscentConfig(lr=0.0005, epochs=60), x_all[cat], stats)
    objs = trace.objective_per_epoch
    ups = sum(b >= a for a, b in zip(objs, objs[1:]))
    assert ups / (len(objs) - 1) >= 0.95


def test_robustness_scores_anticorrelate_with_diff_energy(trained_catdog):
    model, val, stats = trained_catdog
    x_all, y_all = D.to_batch(val, stats)
    preds = predict_logits(model, x_all).argmax(axis=1)
    chosen = [i for i in range(len(val)) if y_all[i] == 0 and preds[i] == 0][:50]
    assert len(chosen) == 50
    reports = [robustness(model, x_all[i], 1, lr=0.0001, budget_epochs=100,
                          stats=stats) for i in chosen]
    res = sstats.spearmanr([r.score for r in reports],
                           [r.diff_energy for r in reports])
    assert res.statistic < 0
    assert res.pvalue < 0.05
