import numpy as np
import pytest

import fecil

TINY = """
[dataset]
kind = synth
seed = 1
classes = 4
train_per_class = 30
test_per_class = 10
side = 8

[protocol]
name = b0
steps = 2

[memory]
mode = total
size = 8

[backbone]
width = 4
blocks_per_stage = 1
stages = 2

[train]
epochs_expand = 3
epochs_compress = 3
batch_size = 16

[run]
seed = 5
"""


def test_gradcheck_passes():
    r = fecil.gradcheck(trials=2, seed=1)
    assert r["passed"]
    assert r["cases"] == 28


def test_beta_moments():
    lam = np.array(fecil.sample_lambda(0.2, 7, 20000))
    assert abs(lam.mean() - 0.5) < 0.01
    # Beta(a, a) variance is 1 / (4 (2a + 1)).
    assert abs(lam.var() - 1 / (4 * 1.4)) < 0.005


def test_cutmix_counts_pasted_pixels():
    a = np.zeros((1, 16, 16), dtype=np.float32)
    b = np.ones((1, 16, 16), dtype=np.float32)
    for seed in range(200):
        img, lam_eff = fecil.cutmix(a, b, 0.6, seed)
        assert img.shape == (1, 16, 16)
        assert img.sum() == pytest.approx((1 - lam_eff) * 256, abs=1e-9)


def test_herding_picks_closest_to_mean_first():
    feats = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    assert fecil.herding_select(feats, 1) == [1]
    assert sorted(fecil.herding_select(feats, 3)) == [0, 1, 2]


def test_task_sequence_b50():
    tasks = fecil.task_sequence(100, "B50", 5, 0)
    assert [len(t) for t in tasks] == [50, 10, 10, 10, 10, 10]
    assert sorted(c for t in tasks for c in t) == list(range(100))


def test_run_and_evaluate(tmp_path):
    s = fecil.run(TINY, tmp_path)
    assert len(s["top1_compact"]) == 2
    assert len(set(s["params_compact_extractor"])) == 1
    top1, top5 = fecil.evaluate_checkpoint(tmp_path / "ckpt_step2", TINY)
    assert top1 == pytest.approx(s["top1_compact"][-1], abs=0.005)
    assert top5 == pytest.approx(100.0)


def test_config_error():
    with pytest.raises(fecil.ConfigError):
        fecil.run("[train]\nbatch_size = 0\n", "/tmp/never")
