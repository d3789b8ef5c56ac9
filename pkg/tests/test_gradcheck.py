from __future__ import annotations

import numpy as np
import pytest

from cvqa import gradcheck
from cvqa import linalg as la
from cvqa.config import AblationConfig, ModelConfig
from cvqa.harness.model import forward


@pytest.mark.parametrize("seed", range(3))
def test_every_loss_and_group_passes(seed):
    results = gradcheck.check_seed(seed)
    assert {r.loss for r in results} == set(gradcheck.LOSSES)
    assert all(r.ok for r in results), [r for r in results if not r.ok]


def test_corruption_is_detected_in_that_group_only():
    results = gradcheck.check_seed(0, corrupt="decoder")
    bad = {(r.loss, r.group) for r in results if not r.ok}
    assert bad == {(loss, "decoder") for loss in gradcheck.LOSSES}


def test_zero_parameter_model_passes_vacuously():
    assert gradcheck.check_gradients(lambda p: [0.0], {}, ["x"], {"g": ()}) == []


def test_smoothing_sign_and_ablations_also_check():
    params, pool, sample, noise, mcfg = gradcheck.random_instance(5, base=ModelConfig(entropy_sign="smoothing"))
    for ablation in (AblationConfig(), AblationConfig(enable_gonf=False), AblationConfig(alpha_beta=(0.4, 0.8))):
        fn = gradcheck.model_loss_fn(pool, sample, noise, mcfg, ablation)
        results = gradcheck.check_gradients(fn, params, gradcheck.LOSSES, {"all": list(params)})
        assert all(r.ok for r in results)


def test_pinned_retrieval_matches_live_retrieval_at_base_point():
    params, pool, sample, noise, mcfg = gradcheck.random_instance(1)
    fn = gradcheck.model_loss_fn(pool, sample, noise, mcfg)
    live = forward(params, pool, sample, mcfg, AblationConfig(), training=True, noise=noise)
    pinned = fn(params)
    assert float(la.value_of(pinned[3])) == float(la.value_of(live.total))


def test_summarize_keeps_worst_case():
    a = gradcheck.GroupResult("gonf", "gonf", 1e-6, 1e-5, True)
    b = gradcheck.GroupResult("gonf", "gonf", 1e-3, 1e-7, False)
    (merged,) = gradcheck.summarize([a, b])
    assert merged.max_abs == 1e-3 and merged.max_rel == 1e-5 and not merged.ok


def test_finite_difference_helper_on_known_function():
    params = {"x": np.array([0.3, -1.2])}
    numeric = la.central_differences(lambda p: np.array([np.sum(np.sin(p["x"])), p["x"][0] ** 3]), params)
    np.testing.assert_allclose(numeric["x"][0], np.cos([0.3, -1.2]), atol=1e-9)
    np.testing.assert_allclose(numeric["x"][1], [3 * 0.09, 0.0], atol=1e-9)
