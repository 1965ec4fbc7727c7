"""Acceptance criteria, one test per criterion.

Run under pytest for the summary section, or directly as a script:
``python3 tests/test_acceptance.py``.
"""
import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import oracles  # noqa: E402
from helpers import DESK, objectness_fixture, tree_digest, write_sod  # noqa: E402
from rdsnet import _kernels, crf, metrics, objectness, ops  # noqa: E402
from rdsnet import config as cfgmod  # noqa: E402
from rdsnet import topology as T  # noqa: E402
from rdsnet.autograd import Tensor  # noqa: E402
from rdsnet.cli import main  # noqa: E402
from rdsnet.gradcheck import gradcheck  # noqa: E402
from rdsnet.synthetic import rectangle_dataset  # noqa: E402
from rdsnet.train import TrainConfig, lr_at, total_loss, train  # noqa: E402
from test_gradients import CASES  # noqa: E402

BACKENDS = sorted(_kernels.available_backends())


def each_backend():
    for name in BACKENDS:
        previous = _kernels.use_backend(name)
        try:
            yield name
        finally:
            _kernels.use_backend(previous)


@pytest.mark.criterion("channel accounting")
def test_channel_accounting():
    start = time.perf_counter()
    g = T.build_rds(T.BackboneSpec.resnet(5), k=32, materialize=False)
    got = [(row["channels"], row["out_stride"]) for row in g.level_blocks()]
    assert got == [(160, 1), (128, 2), (96, 4), (64, 8), (32, 16)]
    built = T.build_rds(T.BackboneSpec.toy(5), k=32, branches=T.compact_branches(5, 32, width=2))
    out = T.forward(built, np.zeros((1, 3, 32, 32)), train=False)
    assert [b.shape[1:] for b in out.blocks] == [(160, 32, 32), (128, 16, 16), (96, 8, 8), (64, 4, 4), (32, 2, 2)]
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion("parameter arithmetic")
def test_parameter_arithmetic():
    start = time.perf_counter()
    for k in (1, 2, 3, 32):
        dss = T.connection_param_count(T.build_dss(T.BackboneSpec.resnet(6), k=k, materialize=False))
        assert dss.largest == 4096 * k
    rds = T.connection_param_count(T.build_rds(T.BackboneSpec.resnet(5), k=32, materialize=False))
    assert dict(rds.per_connection)["up1"] == 640 == rds.largest
    assert time.perf_counter() - start < 1.0


@pytest.mark.criterion("gradient suite")
def test_gradient_suite():
    start = time.perf_counter()
    for _ in each_backend():
        for name, case in sorted(CASES.items()):
            params, loss_fn = case(np.random.default_rng(7))
            rep = gradcheck(loss_fn, params, probes=50, eps=1e-5, seed=1)
            assert rep.probe_count >= min(50, sum(p.size for p in params.values()))
            assert rep.max_relative_error < 1e-4, (name, rep)
        g = T.build_rds(T.BackboneSpec.toy(5), k=2, branches=T.compact_branches(5, 2, width=2), seed=1)
        rng = np.random.default_rng(0)
        x = rng.random((2, 3, 32, 32))
        y = (rng.random((2, 1, 32, 32)) > 0.5).astype(float)
        rep = gradcheck(lambda: total_loss(T.forward(g, x, train=True), y).total, g.params, probes=50, eps=1e-5,
                        seed=2)
        assert rep.probe_count == 50 and rep.max_relative_error < 1e-4, rep
    assert time.perf_counter() - start < 120


@pytest.mark.criterion("oracle equivalence")
def test_oracle_equivalence():
    start = time.perf_counter()
    n = 100
    rng = np.random.default_rng(2024)
    for backend in each_backend():
        for _ in range(n):
            cin, cout = rng.integers(1, 4, 2)
            kern, stride = int(rng.choice([1, 3, 5])), int(rng.integers(1, 3))
            pad = int(rng.integers(0, kern // 2 + 1))
            x = rng.standard_normal((int(rng.integers(1, 3)), cin, int(rng.integers(kern, 9)),
                                     int(rng.integers(kern, 9))))
            w, b = rng.standard_normal((cout, cin, kern, kern)), rng.standard_normal(cout)
            got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, pad).data
            np.testing.assert_allclose(got, oracles.conv2d_loops(x, w, b, stride, pad), atol=1e-12, rtol=0,
                                       err_msg=backend)
        for _ in range(n):
            k = int(rng.integers(1, 5))
            x = rng.standard_normal((int(rng.integers(1, 3)), k, int(rng.integers(1, 6)), int(rng.integers(1, 6))))
            w = rng.standard_normal((k, 2, 2))
            got = ops.transposed_conv2d_grouped(Tensor(x), Tensor(w)).data
            np.testing.assert_allclose(got, oracles.grouped_transposed_scatter(x, w), atol=1e-12, rtol=0)
    for _ in range(n):
        shape = tuple(int(s) for s in rng.integers(1, 7, 3))
        p, t = rng.random(shape), rng.random(shape)
        assert abs(ops.mse_loss(Tensor(p), t).item() - oracles.mse_sum(p, t)) < 1e-12
        assert abs(metrics.mae(p[0], t[0]) - oracles.mae_sum(p[0], t[0])) < 1e-12
    for i in range(n):
        aggregation = metrics.AGGREGATIONS[i % 2]
        count = int(rng.integers(1, 4))
        preds = [rng.random((4, 5)) for _ in range(count)]
        gts = [(rng.random((4, 5)) > rng.random()).astype(float) for _ in range(count)]
        rep = metrics.evaluate(preds, gts, metrics.MetricConfig(aggregation=aggregation))
        precs, recs, _, max_f, mae = oracles.evaluate_brute(preds, gts, aggregation=aggregation)
        np.testing.assert_allclose([p for _, p, _ in rep.pr_points], precs, atol=1e-12, rtol=0)
        np.testing.assert_allclose([r for _, _, r in rep.pr_points], recs, atol=1e-12, rtol=0)
        assert abs(rep.max_f - max_f) < 1e-12 and abs(rep.mae - mae) < 1e-12
    params = crf.CrfParams()
    for backend in each_backend():
        for _ in range(n):
            h, w = (int(s) for s in rng.integers(2, 6, 2))
            image, sal = rng.integers(0, 256, (h, w, 3)).astype(np.uint8), rng.random((h, w))
            ref, _ = oracles.dense_mean_field(image, sal, 4, 3, 60, 10, 3, 5)
            np.testing.assert_allclose(crf.refine(image, sal, params), ref, atol=1e-10, rtol=0, err_msg=backend)
    assert time.perf_counter() - start < 120


@pytest.mark.criterion("loss bookkeeping and F identity")
def test_bookkeeping():
    rng = np.random.default_rng(5)
    for _ in range(50):
        levels = int(rng.integers(2, 7))
        shape = (2, 1, 4, 4)
        outs = T.SideOutputs([Tensor(rng.random(shape)) for _ in range(levels)], Tensor(rng.random(shape)))
        rep = total_loss(outs, rng.random(shape))
        expected = rep.fused.item()
        for s in rep.per_side:
            expected = expected + s.item()
        assert rep.total.item() == expected
    for b2 in (0.3, 1.0):
        for p in np.linspace(1e-3, 1.0, 200):
            assert abs(metrics.f_measure(p, p, b2) - p) <= 1e-12


@pytest.mark.criterion("learning-rate schedule")
def test_schedule():
    c = TrainConfig()
    assert (lr_at(0, c), lr_at(10, c), lr_at(20, c)) == (0.01, 0.001, 0.0001)


@pytest.mark.criterion("alpha filter and merge arithmetic")
def test_alpha_filter():
    recs = []
    for name, a in (("just-below", 0.8 - 1e-12), ("boundary", 0.8), ("full", 1.0)):
        r = objectness.ObjectnessRecord(name, 10, 10)
        r.alpha = a
        recs.append(r)
    res = objectness.filter_manifest(recs)
    assert [r.image_path for r in res.kept] == ["just-below"]
    assert [r.image_path for r in res.rejected] == ["boundary", "full"]
    assert objectness.PUBLISHED_MERGE_COUNTS == {"VOC": 4217, "ImageNet": 301184}
    assert 4217 + 301184 == objectness.PUBLISHED_MERGE_TOTAL == 305401


@pytest.mark.criterion("overfit smoke test")
def test_overfit():
    start = time.perf_counter()
    run = cfgmod.load(DESK)
    assert run.train.batch_size == 8 and run.train.epochs == 500
    data = rectangle_dataset(8, run.train.input_side, seed=0)
    graph = run.model.build()
    res = train(graph, data, run.train)
    assert res.meta["steps"] == 500
    fused = res.trace[-1][-3]
    assert fused < 0.01, fused
    x = np.stack([s.image for s in data])
    preds = T.predict(graph, x)
    rep = metrics.evaluate(list(preds), [s.ground_truth for s in data])
    assert rep.max_f >= 0.95, rep.max_f
    assert time.perf_counter() - start < 300


@pytest.mark.criterion("determinism")
def test_determinism(tmp_path, capsys):
    data = rectangle_dataset(4, 16, seed=3)
    cfg = TrainConfig(input_side=16, epochs=3, batch_size=2, base_lr=0.01, seed=4)

    def one():
        g = T.build_rds(T.BackboneSpec.toy(3), k=2, branches=T.compact_branches(3, 2, width=2), seed=0)
        return train(g, data, cfg).checkpoint_bytes()

    assert one() == one()

    sod = write_sod(tmp_path / "data")
    obj = objectness_fixture(tmp_path / "objsrc")
    inputs = tree_digest(tmp_path / "data"), tree_digest(tmp_path / "objsrc")
    runs = []
    for rep in ("a", "b"):
        out = tmp_path / rep
        os.makedirs(out)
        commands = [
            ["prepare-objectness", "--manifest-in", obj, "--manifest-out", out / "obj.jsonl"],
            ["convert-pascal-sod", "--in-dir", tmp_path / "data" / "gt", "--out-dir", out / "pascal"],
            ["train", "--config", DESK, "--manifest", sod, "--objectness-manifest", sod, "--out", out / "run",
             "--set", "train.epochs=2"],
            ["predict", "--checkpoint", out / "run" / "model.ckpt", "--manifest", sod, "--out", out / "pred"],
            ["predict", "--checkpoint", out / "run" / "model.ckpt", "--manifest", sod, "--out", out / "crf", "--crf"],
            ["eval", "--pred-dir", out / "crf", "--gt-dir", tmp_path / "data" / "gt", "--dataset", "d",
             "--out", out / "ev", "--verbose"],
            ["plot-pr", out / "ev" / "d_pr.csv", out / "ev" / "d_pr_pooled.csv", "--out", out / "pr.svg"],
            ["compare-topology", "--json"],
        ]
        printed = []
        for argv in commands:
            code = main([str(a) for a in argv])
            text, err = capsys.readouterr()
            assert code == 0, (argv, err)
            printed.append(text.replace(str(out), "<out>"))
        runs.append((tree_digest(out), printed))
    assert runs[0] == runs[1]
    assert len(runs[0][0]) >= 20
    assert (tree_digest(tmp_path / "data"), tree_digest(tmp_path / "objsrc")) == inputs


@pytest.mark.criterion("CRF normalisation and fixed point")
def test_crf_properties():
    rng = np.random.default_rng(9)
    for backend in each_backend():
        for _ in range(10):
            image, sal = rng.integers(0, 256, (9, 11, 3)).astype(np.uint8), rng.random((9, 11))
            devs = []
            crf.mean_field(crf.unary_from_saliency(sal), image, crf.CrfParams(iterations=8),
                           callback=lambda q: devs.append(np.abs(q.sum(axis=0) - 1).max()))
            assert len(devs) == 8 and max(devs) <= 1e-12, backend
            flat = crf.CrfParams(bilateral_weight=0, spatial_weight=0, iterations=5)
            u = crf.unary_from_saliency(sal)
            e = np.exp(-(u - u.min(axis=0)))
            assert np.array_equal(crf.refine(image, sal, flat), (e / e.sum(axis=0))[1])


if __name__ == "__main__":
    sys.exit(pytest.main([os.path.abspath(__file__), "-q", "-p", "no:cacheprovider"]))
