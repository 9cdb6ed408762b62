import numpy as np
import pytest

from cran_highlight.dataset import target_vector
from cran_highlight.errors import InvalidInputError, TrainingDivergedError
from cran_highlight.model import CRAN, ModelConfig
from cran_highlight.training import Example, TrainConfig, evaluate_examples, recall_at, train


def small_model(seed=0):
    return CRAN(ModelConfig.tiny(n_frames=64, pool=(2, 2), seed=seed))


def examples(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        g = i % 3
        x = rng.random((128, 64)) * 0.2
        x[40 * g:40 * g + 30] += 1.0
        out.append(Example(f"t{i}", x, target_vector([g], 3), (g,)))
    return out


def test_recall_at():
    assert recall_at(np.array([0.1, 0.7, 0.2]), (1,), 1) == 1
    assert recall_at(np.array([0.1, 0.7, 0.2]), (0,), 2) == 0


def test_lr_zero_keeps_parameters():
    m = small_model()
    before = {k: p.data.copy() for k, p in m.params.items()}
    train(m, examples(4), config=TrainConfig(epochs=1, batch_size=2, lr=0.0))
    for k, p in m.params.items():
        np.testing.assert_array_equal(p.data, before[k])


def test_same_seed_same_curve():
    curves = []
    for _ in range(2):
        ck = train(small_model(), examples(6), examples(3, seed=1), TrainConfig(epochs=2, batch_size=3, seed=4))
        curves.append(ck.metadata["history"])
    assert curves[0] == curves[1]


def test_history_and_callback():
    seen = []
    ck = train(small_model(), examples(6), examples(3, seed=1), TrainConfig(epochs=3, batch_size=3),
               on_epoch=seen.append)
    assert [r["epoch"] for r in seen] == [1, 2, 3]
    assert ck.metadata["epochs_run"] == 3
    best = min(seen, key=lambda r: r["val_loss"])
    assert ck.metadata["epoch"] == best["epoch"]
    assert set(seen[0]) >= {"train_loss", "val_loss", "val_recall3"}


def test_best_checkpoint_is_restored():
    m = small_model()
    val = examples(3, seed=1)
    ck = train(m, examples(6), val, TrainConfig(epochs=4, batch_size=3, lr=0.05))
    best = min(r["val_loss"] for r in ck.metadata["history"])
    assert evaluate_examples(m, val)["loss"] == pytest.approx(best, rel=1e-12)
    np.testing.assert_array_equal(ck.parameters["out.W"], m.params["out.W"].data)


def test_stop_loss_ends_early():
    ck = train(small_model(), examples(3), config=TrainConfig(epochs=50, batch_size=3, stop_loss=10.0))
    assert ck.metadata["epochs_run"] == 1


def test_training_reduces_loss():
    m = small_model()
    data = examples(6)
    start = evaluate_examples(m, data)["loss"]
    train(m, data, config=TrainConfig(epochs=15, batch_size=3, lr=0.01))
    assert evaluate_examples(m, data)["loss"] < start


def test_empty_dataset():
    with pytest.raises(InvalidInputError):
        train(small_model(), [])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported():
    bad = examples(2)
    bad[0].x = bad[0].x.copy()
    bad[0].x[0, 0] = np.inf
    with pytest.raises(TrainingDivergedError, match="t0"):
        train(small_model(), bad, config=TrainConfig(epochs=1, batch_size=2))


def test_evaluate_empty():
    assert evaluate_examples(small_model(), [])["loss"] is None
