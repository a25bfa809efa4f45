import os
from pathlib import Path

import numpy as np
import pytest

import collabod

ROOT = Path(__file__).resolve().parents[2]
CONFIGS = Path(os.environ.get("COLLABOD_CONFIG_DIR", ROOT / "configs"))
DATA = Path(os.environ.get("COLLABOD_DATA_DIR", ROOT / "tests" / "data"))


def naive_conv(x, w, b, stride, pad):
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh, ow = (h + 2 * pad - k) // stride + 1, (wd + 2 * pad - k) // stride + 1
    out = np.zeros((n, o, oh, ow))
    for y in range(oh):
        for xx in range(ow):
            patch = xp[:, :, y * stride : y * stride + k, xx * stride : xx * stride + k]
            out[:, :, y, xx] = np.einsum("nckl,ockl->no", patch, w) + b
    return out


def test_conv2d_matches_numpy():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2, 3, 7, 6)).astype(np.float32)
    w = rng.uniform(-1, 1, (4, 3, 3, 3)).astype(np.float32)
    b = rng.uniform(-1, 1, 4).astype(np.float32)
    got = collabod.conv2d(x, w, b.tolist(), stride=2, padding=1)
    np.testing.assert_allclose(got, naive_conv(x, w, b, 2, 1), atol=1e-5)


def test_max_pool_and_errors():
    x = np.arange(16, dtype=np.float32).reshape(1, 1, 4, 4)
    assert collabod.max_pool2d(x, 2, stride=2).ravel().tolist() == [5, 7, 13, 15]
    with pytest.raises(collabod.CollabodError):
        collabod.max_pool2d(x[0], 2)
    with pytest.raises(ValueError):
        collabod.conv2d(x, np.zeros((1, 2, 1, 1), np.float32))


def test_dfl_uniform_logits_decode_to_mid_bin():
    d = collabod.dfl_decode(np.zeros((1, 64, 2, 2), np.float32), bins=16)
    np.testing.assert_allclose(d, 7.5, atol=1e-4)


def test_cten_round_trip(tmp_path):
    a = np.random.default_rng(1).normal(size=(1, 2, 3, 4)).astype(np.float32)
    collabod.save_cten(tmp_path / "a.cten", a)
    assert np.array_equal(collabod.load_cten(tmp_path / "a.cten"), a)


def test_toy_model_forward_and_params(tmp_path):
    m = collabod.Model.from_file(CONFIGS / "toy.cfg")
    assert m.has_head and m.input_shape == (1, 3, 64, 64)
    img = np.random.default_rng(2).uniform(0, 1, m.input_shape).astype(np.float32)
    out = m.forward(img)
    assert out["merged"].shape == (1, 1, 340, 74)
    assert np.array_equal(out["merged"], m.forward(img)["merged"])
    dets = m.detect(img)
    assert len(dets) == 1 and all(d["score"] > 0.25 for d in dets[0])

    m.save_params(tmp_path / "p.cpar")
    other = collabod.Model.from_string((CONFIGS / "toy.cfg").read_text().replace("seed 0", "seed 4"))
    assert not np.array_equal(other.forward(img)["merged"], out["merged"])
    other.load_params(tmp_path / "p.cpar")
    assert np.array_equal(other.forward(img)["merged"], out["merged"])

    merged = m.reparameterized()
    np.testing.assert_allclose(merged.forward(img)["merged"], out["merged"], atol=1e-5)
    assert merged.flops()["total_macs"] < m.flops()["total_macs"]


def test_flops_and_erf():
    single = collabod.Model.from_file(CONFIGS / "single_conv.cfg")
    assert single.flops()["total_macs"] == 128
    assert single.flops()["head"] is None
    m = collabod.Model.from_file(CONFIGS / "erf_depth1.cfg")
    erf, area = m.erf("stem")
    assert erf.shape == (1, 1, 32, 32) and erf.max() == 1.0
    assert np.count_nonzero(erf) == 9
    assert area == pytest.approx(np.count_nonzero(erf > 0.2) / 1024)


def test_evaluate_perfect_and_empty():
    import json

    gts = [json.loads(line) for line in (DATA / "gt.jsonl").read_text().splitlines()]
    dets = [json.loads(line) for line in (DATA / "dets_perfect.jsonl").read_text().splitlines()]
    assert collabod.evaluate(dets, gts)["AP50_95"] == 1.0
    assert collabod.evaluate([], gts)["AP50_95"] == 0.0


def test_gradcheck_targets():
    targets = collabod.gradcheck_targets()
    assert "dablock" in targets and "uda_head" in targets
    assert collabod.gradcheck("brm", seed=3) <= 1e-3
