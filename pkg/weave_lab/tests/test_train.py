import numpy as np
import pytest

from weave_lab.errors import ModelError, DivergedNaN
from weave_lab.regnet import weights
from weave_lab.regnet.model import ArchConfig, RegModel
from weave_lab.regnet.train import (TrainConfig, History, train, train_restarts,
                                    evaluate, write_evaluation_csv, _batches)


def tiny_config():
    return ArchConfig('reg_vgg', filters_per_kernel=1, stage_blocks=(1,),
                      stage_widths=(1,), dense_sizes=(4, 1), dropout=0.0,
                      input_side=16)


def make_corpus(n, seed=0):
    """ Flat patches whose density label grows with their brightness. """
    rng = np.random.Generator(np.random.Philox(seed))
    levels = rng.integers(20, 236, n)
    batch = np.repeat(levels.astype(np.float32), 16 * 16).reshape(n, 16, 16, 1)
    batch += rng.normal(0, 2, batch.shape).astype(np.float32)
    labels = 8.0 + levels / 20.0
    return batch, labels


def params(model):
    return [array.copy() for _, array in model.named_arrays(buffers=False)]


def test_config_validation():
    with pytest.raises(ModelError):
        TrainConfig(patience=10, max_epochs=5)
    with pytest.raises(ModelError):
        TrainConfig(lr=-1)
    with pytest.raises(ModelError):
        TrainConfig(beta1=1.0)
    with pytest.raises(ModelError):
        TrainConfig(batch_size=0)

    cfg = TrainConfig(lr=0.0)
    assert cfg.copy(seed=4).seed == 4
    assert cfg.copy(seed=4).lr == 0.0


def test_batches_avoid_single_trailing_record():
    assert [list(b) for b in _batches(np.arange(5), 2)] == [[0, 1], [2, 3, 4]]
    assert [list(b) for b in _batches(np.arange(4), 2)] == [[0, 1], [2, 3]]
    assert [list(b) for b in _batches(np.arange(1), 4)] == [[0]]


def test_zero_learning_rate_keeps_weights():
    model = RegModel(tiny_config(), seed=1)
    before = params(model)

    cfg = TrainConfig(batch_size=4, lr=0.0, max_epochs=5, patience=2)
    model, history = train(model, make_corpus(12), make_corpus(6, seed=1), cfg)

    for old, new in zip(before, params(model)):
        assert np.array_equal(old, new)
    assert 1 <= history.epochs <= 5
    assert history.best_epoch < history.epochs


def test_frozen_dense_layers_do_not_move():
    model = RegModel(tiny_config(), seed=2)
    frozen_before = [layer.params['W'].copy() for layer in model.dense_layers()]
    conv_before = model.layers[1].convs[0].params['W'].copy()

    cfg = TrainConfig(batch_size=4, lr=1e-2, max_epochs=3, patience=3,
                      freeze_last_dense=2)
    model, _ = train(model, make_corpus(12), make_corpus(6, seed=1), cfg)

    for old, layer in zip(frozen_before, model.dense_layers()):
        assert np.array_equal(old, layer.params['W'])
    assert not np.array_equal(conv_before, model.layers[1].convs[0].params['W'])


def test_training_reduces_error():
    model = RegModel(tiny_config(), seed=0)
    cfg = TrainConfig(batch_size=8, lr=1e-2, max_epochs=40, patience=40)
    model, history = train(model, make_corpus(32), make_corpus(8, seed=1), cfg)

    assert history.epochs == 40
    assert not history.stopped_early
    assert history.train_nmae()[-1] < 0.5 * history.train_nmae()[0]

    # best epoch weights are restored
    batch, labels = make_corpus(8, seed=1)
    value, rows = evaluate(model, (batch, labels))
    assert value == pytest.approx(history.best_val, rel=1e-6)
    assert len(rows) == 8


def test_training_is_reproducible():
    cfg = TrainConfig(batch_size=4, lr=1e-2, max_epochs=3, patience=3, seed=5)
    blobs = []
    for _ in range(2):
        model, _ = train(RegModel(tiny_config(), seed=5), make_corpus(12),
                         make_corpus(6, seed=1), cfg)
        blobs.append(weights.encode(model))
    assert blobs[0] == blobs[1]


def test_divergence_reports_epoch():
    batch, labels = make_corpus(8)
    batch[3, 0, 0, 0] = np.inf
    cfg = TrainConfig(batch_size=4, max_epochs=3, patience=1)
    with pytest.raises(DivergedNaN) as info:
        train(RegModel(tiny_config()), (batch, labels), make_corpus(4, seed=1), cfg)
    assert info.value.epoch == 0


def test_empty_corpus():
    empty = (np.zeros((0, 16, 16, 1)), np.zeros(0))
    with pytest.raises(ModelError):
        train(RegModel(tiny_config()), empty, make_corpus(4), TrainConfig())


def test_restarts_keep_best():
    cfg = TrainConfig(batch_size=4, lr=1e-2, max_epochs=2, patience=2, seed=7)
    model, history, seed = train_restarts(tiny_config(), make_corpus(12),
                                          make_corpus(6, seed=1), cfg, restarts=2)
    assert seed in (7, 8)
    assert isinstance(model, RegModel)
    assert history.best_val is not None


def test_history_csv(tmpdir):
    history = History()
    history.append(0, 0.5, 0.25)
    history.append(1, 0.125, 0.2)
    history.best_epoch = 1
    assert history.best_val == 0.2

    path = str(tmpdir.join('history.csv'))
    history.write_csv(path)
    with open(path) as f:
        assert f.read() == 'epoch,train_nmae,val_nmae\n0,0.5,0.25\n1,0.125,0.2\n'


def test_evaluation_csv(tmpdir):
    path = str(tmpdir.join('eval.csv'))
    write_evaluation_csv([('a.png', 10.0, 10.5, 0.05)], path)
    with open(path) as f:
        assert f.read().splitlines() == ['file,label,prediction,nae',
                                         'a.png,10,10.5,0.05']
