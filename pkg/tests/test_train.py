import numpy as np
import pytest

from nvsurv.cnn import Adam, TrainConfig, TrainingDiverged, build_architecture, predict, train
from nvsurv.cnn.layers import Param
from nvsurv.cnn.train import history_csv
from nvsurv.dataset import DatasetSplit, Sample
from nvsurv.metrics import per_sample_balanced
from nvsurv.proposals import ProposalSource


def test_adam_first_step_is_lr():
    w = Param("w", np.array([1.0, -3.0]))
    opt = Adam([w], lr=0.1)
    w.grad = 2 * w.value  # d/dw of w^2
    opt.step()
    np.testing.assert_allclose(w.value, [0.9, -2.9], atol=1e-7)


def test_adam_converges_on_quadratic():
    w = Param("w", np.array([2.0]))
    opt = Adam([w], lr=0.05)
    for _ in range(500):
        w.grad = 2 * w.value
        opt.step()
    assert abs(w.value[0]) < 0.05


def toy_samples(n_per_class=1, channels=1, rng=None):
    """Class 0: empty patch. Class 1: a filled square."""
    out = []
    for i in range(n_per_class):
        blank = np.zeros((42, 42, channels), np.uint8)
        box = blank.copy()
        box[10:30, 10:30] = 1
        if rng is not None:
            blank[rng.integers(0, 42), rng.integers(0, 42)] = 1
        out.append(Sample(blank, 0, 2 * i, 0, ProposalSource.GT))
        out.append(Sample(box, 1, 2 * i + 1, 0, ProposalSource.GT))
    return out


def test_two_sample_toy_is_learned():
    samples = toy_samples()
    net = build_architecture("SN", 1).init_weights(0)
    cfg = TrainConfig(epochs=20, batch_size=2, learning_rate=1e-2)
    net, hist = train(net, DatasetSplit(samples, samples, []), cfg)
    x = np.stack([s.patch for s in samples])
    assert predict(net, x).argmax(axis=1).tolist() == [0, 1]
    assert len(hist) == 20


def test_training_is_reproducible():
    rng = np.random.default_rng(0)
    samples = toy_samples(8, 2, rng)
    split = DatasetSplit(samples[:12], samples[12:], [])
    cfg = TrainConfig(epochs=3, batch_size=4, seed=11)
    a, ha = train(build_architecture("MA", 2).init_weights(1), split, cfg)
    b, hb = train(build_architecture("MA", 2).init_weights(1), split, cfg)
    assert history_csv(ha) == history_csv(hb)
    for p, q in zip(a.params, b.params):
        assert np.array_equal(p.value, q.value)


def test_returns_best_validation_epoch():
    rng = np.random.default_rng(2)
    samples = toy_samples(10, 1, rng)
    split = DatasetSplit(samples[:14], samples[14:], [])
    net, hist = train(build_architecture("TN", 1).init_weights(0), split,
                      TrainConfig(epochs=6, batch_size=4, learning_rate=3e-3))
    xv = np.stack([s.patch for s in split.val])
    yv = [s.class_label for s in split.val]
    acc, _ = per_sample_balanced(yv, predict(net, xv).argmax(axis=1))
    assert acc == pytest.approx(max(h["val_balanced_acc"] for h in hist))


def test_training_does_not_mutate_input_network():
    samples = toy_samples()
    net = build_architecture("SN", 1).init_weights(0)
    before = [p.value.copy() for p in net.params]
    train(net, DatasetSplit(samples, [], []), TrainConfig(epochs=1))
    assert all(np.array_equal(a, p.value) for a, p in zip(before, net.params))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts():
    samples = toy_samples(4, 1, np.random.default_rng(0))
    cfg = TrainConfig(epochs=5, batch_size=2, learning_rate=1e38)
    with pytest.raises(TrainingDiverged, match="epoch"):
        train(build_architecture("BL", 1).init_weights(0), DatasetSplit(samples, [], []), cfg)


def test_train_input_checks():
    with pytest.raises(ValueError):
        train(build_architecture("SN", 1), DatasetSplit([], [], []))
    with pytest.raises(ValueError, match="expects"):
        train(build_architecture("SN", 2), DatasetSplit(toy_samples(), [], []))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_history_csv():
    text = history_csv([{"epoch": 1, "train_loss": 0.5, "val_balanced_acc": 75.0}])
    assert text == "epoch,train_loss,val_balanced_acc\n1,0.5,75.0\n"
