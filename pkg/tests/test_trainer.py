import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from shared import ops
from shared.errors import NonFiniteLossError, ShapeError
from shared.schemas import Parameter, ParameterSet, TrainConfig
from shared.trainer import batch_gradient, clip_gradients, gradient_norm, run, sgd_step
from writers.checkpoint import load_checkpoint


class MeanFit:
    """loss = mean_i (w - t_i)^2 with a frozen offset that never moves."""

    def __init__(self, w=0.0):
        self.params = ParameterSet([Parameter("w", w), Parameter("offset", 1.0, trainable=False)])

    def parameters(self):
        return self.params

    def loss(self, g, items):
        w = g.parameter(self.params["w"])
        off = g.parameter(self.params["offset"])
        total = None
        for t in items:
            err = ops.square(g, ops.sub(g, ops.mul(g, w, off), g.constant(float(t))))
            total = err if total is None else ops.add(g, total, err)
        return ops.scale(g, total, 1.0 / len(items))


def test_sgd_step_example():
    params = ParameterSet([Parameter("w", 1.0), Parameter("c", 5.0, trainable=False)])
    sgd_step(params, {"w": np.array(2.0), "c": np.array(1.0)}, 0.1)
    assert params["w"].value == pytest.approx(0.8)
    assert params["c"].value == 5.0
    with pytest.raises(ShapeError):
        sgd_step(params, {"w": np.ones(2)}, 0.1)


def test_sgd_step_with_zero_rate_is_a_no_op():
    params = ParameterSet([Parameter("w", np.arange(3.0))])
    sgd_step(params, {"w": np.ones(3)}, 0.0)
    assert_array_equal(params["w"].value, np.arange(3.0))


def test_batch_gradient_is_shard_invariant():
    items = [0.5, 1.5, -2.0, 4.0, 3.0]
    model = MeanFit(w=0.25)
    loss, grads = batch_gradient(model, items)
    assert loss == pytest.approx(np.mean([(0.25 - t) ** 2 for t in items]))
    assert grads["w"] == pytest.approx(np.mean([2 * (0.25 - t) for t in items]))
    for shard in (1, 2, 3):
        l2, g2 = batch_gradient(model, items, shard_size=shard)
        assert l2 == pytest.approx(loss, rel=1e-12)
        assert_allclose(g2["w"], grads["w"], rtol=1e-12)
    serial = batch_gradient(model, items, shard_size=2, workers=1)
    threaded = batch_gradient(model, items, shard_size=2, workers=3)
    assert serial[0] == threaded[0]
    assert_array_equal(serial[1]["w"], threaded[1]["w"])


def test_run_converges_and_writes_outputs(tmp_path):
    items = [1.0, 2.0, 3.0, 4.0]
    model = MeanFit()
    ckpt = tmp_path / "fit.hnet"
    csv = tmp_path / "metrics.csv"
    cfg = TrainConfig(epochs=40, lr=0.2, batch_size=4, seed=3, eval_every=10, checkpoint=str(ckpt))
    result = run(model, items, cfg, evaluate=lambda m: float(m.params["w"].value), metrics_csv=str(csv))
    assert result.steps == 40
    assert model.params["w"].value == pytest.approx(2.5, abs=1e-6)
    assert model.params["offset"].value == 1.0
    assert np.isnan(result.metrics[0].metric)
    lines = csv.read_text().splitlines()
    assert lines[0] == "epoch,loss,metric"
    assert len(lines) == 41
    assert lines[1].endswith(",nan")
    assert float(load_checkpoint(str(ckpt))["w"]) == model.params["w"].value


def test_run_is_deterministic(tmp_path):
    items = [0.1 * i for i in range(10)]
    outputs = []
    for tag in ("a", "b"):
        model = MeanFit()
        path = tmp_path / f"{tag}.csv"
        run(model, items, TrainConfig(epochs=3, lr=0.05, batch_size=3, seed=7), metrics_csv=str(path))
        outputs.append(path.read_text())
    assert outputs[0] == outputs[1]


def test_zero_epochs_only_checkpoints(tmp_path):
    model = MeanFit(w=0.7)
    ckpt = tmp_path / "init.hnet"
    csv = tmp_path / "m.csv"
    result = run(model, [], TrainConfig(epochs=0, checkpoint=str(ckpt)), metrics_csv=str(csv))
    assert result.steps == 0 and result.metrics == []
    assert float(load_checkpoint(str(ckpt))["w"]) == 0.7
    assert csv.read_text() == "epoch,loss,metric\n"


def test_zero_learning_rate_keeps_parameters():
    model = MeanFit(w=0.3)
    result = run(model, [1.0, 2.0], TrainConfig(epochs=2, lr=0.0, batch_size=1))
    assert model.params["w"].value == 0.3
    assert result.steps == 4


def test_non_finite_loss_stops_before_update():
    model = MeanFit(w=0.3)
    with pytest.raises(NonFiniteLossError) as err:
        run(model, [float("inf")], TrainConfig(epochs=1, lr=0.1))
    assert err.value.exit_code == 4
    assert model.params["w"].value == 0.3


def test_empty_dataset_with_epochs():
    with pytest.raises(ValueError):
        run(MeanFit(), [], TrainConfig(epochs=1))


def test_gradient_norm_and_clipping():
    grads = {"a": np.array([3.0]), "b": np.array([[0.0, 4.0]])}
    assert gradient_norm(grads) == pytest.approx(5.0)
    clipped, norm = clip_gradients(grads, 1.0)
    assert norm == pytest.approx(5.0)
    assert_allclose(clipped["a"], [0.6])
    assert_allclose(clipped["b"], [[0.0, 0.8]])
    same, _ = clip_gradients(grads, 10.0)
    assert same is grads
    with pytest.raises(ValueError):
        clip_gradients(grads, 0.0)


def test_gradient_norm_does_not_overflow():
    grads = {"w": np.array([1e200, 1e200])}
    assert gradient_norm(grads) == pytest.approx(np.sqrt(2) * 1e200)
    clipped, _ = clip_gradients(grads, 1.0)
    assert_allclose(clipped["w"], [np.sqrt(0.5)] * 2)
    assert gradient_norm({}) == 0.0
    assert np.isnan(gradient_norm({"w": np.array([np.nan])}))


def test_clipped_run_bounds_every_step():
    model = MeanFit(w=0.0)
    result = run(model, [1000.0], TrainConfig(epochs=3, lr=0.5, batch_size=1, clip_norm=2.0))
    # gradient 2 * (0 - 1000) is clipped to norm 2, so each step moves w by lr * 2
    assert model.params["w"].value == pytest.approx(3.0)
    assert result.clipped == 3


def test_clip_norm_must_be_positive():
    with pytest.raises(ValueError):
        TrainConfig(clip_norm=0.0)
