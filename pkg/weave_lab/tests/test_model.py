import json

import numpy as np
import pytest

from weave_lab.errors import (ModelError, ShapeMismatch, NonPositiveLabel,
                              NonFiniteActivation)
from weave_lab.raster import GrayImage
from weave_lab.regnet import arch
from weave_lab.regnet.layers import InceptionBlock, Dense, BatchNorm
from weave_lab.regnet.model import (ArchConfig, RegModel, Adam, nmae, nmae_grad,
                                    patches_to_batch)


def tiny_config(name='reg_vgg', dense=(4, 1)):
    return ArchConfig(name, filters_per_kernel=1, stage_blocks=(1,), stage_widths=(1,),
                      dense_sizes=dense, dropout=0.0, input_side=16)


def random_batch(n, side=16, seed=0):
    rng = np.random.Generator(np.random.Philox(seed))
    return rng.integers(0, 256, (n, side, side, 1)).astype(np.float32)


def test_registry():
    assert arch.names() == ['reg', 'reg_res', 'reg_vgg']
    with pytest.raises(ModelError):
        arch.get_arch('alexnet')
    with pytest.raises(ModelError):
        ArchConfig('alexnet')


def test_default_configs():
    vgg = ArchConfig('reg_vgg')
    assert vgg.stage_blocks == (2, 2, 3, 3, 3)
    assert vgg.dense_sizes == (512, 512, 1)
    assert vgg.final_side == 6
    assert vgg.flatten_size == 6 * 6 * 192

    reg = ArchConfig('reg')
    assert reg.stages == 6
    assert reg.final_side == 3
    assert reg.flatten_size == 3 * 3 * 192
    assert reg.dropout == 0.1


def test_config_validation():
    with pytest.raises(ModelError):
        tiny_config(dense=(4, 2))
    with pytest.raises(ModelError):
        ArchConfig('reg', stage_blocks=(1, 1), stage_widths=(1,))
    with pytest.raises(ModelError):
        ArchConfig('reg', dropout=1.0)
    with pytest.raises(ShapeMismatch):
        ArchConfig('reg', input_side=32)


def test_config_dict():
    config = tiny_config()
    assert ArchConfig.from_dict(config.to_dict()) == config
    assert tiny_config('reg') != config
    with pytest.raises(ModelError):
        ArchConfig.from_dict(dict(config.to_dict(), depth=3))


def test_dump():
    config = tiny_config()
    model = RegModel(config)
    data = json.loads(config.dump(model))
    assert data['flatten_size'] == 192
    assert data['stages'] == 1
    assert data['param_count'] == model.param_count()
    assert 'param_count' not in json.loads(config.dump())


def test_layer_stack():
    model = RegModel(tiny_config())
    kinds = [layer.kind for layer in model.layers]
    assert kinds == ['scale', 'inception', 'maxpool', 'dropout', 'flatten',
                     'dense', 'relu', 'dense']

    res = RegModel(ArchConfig('reg_res', filters_per_kernel=1, stage_blocks=(2,),
                              stage_widths=(1,), dense_sizes=(1,), input_side=16))
    assert [layer.kind for layer in res.layers[1:3]] == ['residual_inception'] * 2
    assert res.layers[1].projection is not None
    assert res.layers[2].projection is None


def test_hand_set_weights():
    model = RegModel(tiny_config())
    block = model.layers[1]
    assert isinstance(block, InceptionBlock)
    for conv in block.convs:
        conv.params['W'] = np.zeros_like(conv.params['W'])
    block.norm.params['beta'] = np.full(3, 0.5, dtype=np.float32)

    first, last = model.dense_layers()
    first.params['W'] = np.full((192, 4), 0.01, dtype=np.float32)
    first.params['b'] = np.zeros(4, dtype=np.float32)
    last.params['W'] = np.full((4, 1), 2.0, dtype=np.float32)
    last.params['b'] = np.ones(1, dtype=np.float32)

    preds = model.forward(random_batch(2))
    assert preds.shape == (2,)
    np.testing.assert_allclose(preds, [8.68, 8.68], rtol=1e-5)


def test_inference_is_deterministic():
    model = RegModel(tiny_config(), seed=3)
    batch = random_batch(4)
    first = model.forward(batch)
    assert np.array_equal(first, model.forward(batch))

    copies = np.repeat(batch[:1], 4, axis=0)
    preds = model.forward(copies)
    assert (preds == preds[0]).all()

    assert np.array_equal(RegModel(tiny_config(), seed=3).forward(batch), first)


def test_forward_errors():
    model = RegModel(tiny_config())
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((1, 32, 32, 1)))
    with pytest.raises(ShapeMismatch):
        model.forward(np.zeros((16, 16)))

    model.dense_layers()[0].params['W'][0, 0] = np.inf
    with pytest.raises(NonFiniteActivation):
        model.forward(random_batch(1) + 1)


def test_predict_chunks():
    model = RegModel(tiny_config())
    batch = random_batch(5)
    np.testing.assert_allclose(model.predict(batch, batch_size=2), model.forward(batch),
                               rtol=1e-6)
    assert model.predict(np.zeros((0, 16, 16, 1))).shape == (0,)


def test_patches_to_batch():
    pixels = np.full((200, 200), 7, dtype=np.uint8)
    patch = GrayImage(pixels, 200.0)
    batch = patches_to_batch([patch, patch], 16)
    assert batch.shape == (2, 16, 16, 1)
    np.testing.assert_allclose(batch, 7)


def test_nmae():
    assert nmae([10.2], [10.0]) == pytest.approx(0.02)
    assert nmae([12, 9], [12, 10]) == pytest.approx(0.05)
    assert nmae([1.05, 0.97], [1.0, 1.0]) == pytest.approx(0.04)

    with pytest.raises(NonPositiveLabel):
        nmae([1.0], [0.0])
    with pytest.raises(ShapeMismatch):
        nmae([1.0, 2.0], [1.0])
    with pytest.raises(ShapeMismatch):
        nmae([], [])


def test_nmae_grad():
    grad = nmae_grad(np.array([11.0, 9.0, 4.0]), np.array([10.0, 10.0, 4.0]))
    np.testing.assert_allclose(grad, [1 / 30.0, -1 / 30.0, 0.0])


def test_adam_first_step_moves_by_lr():
    dense = Dense(2, 1, dtype=np.float64)
    dense.params['W'] = np.array([[1.0], [1.0]])
    dense.grads['W'] = np.array([[3.0], [-0.5]])
    dense.grads['b'] = np.zeros(1)

    Adam(lr=0.1, eps=1e-12).step([(dense, 'W'), (dense, 'b')])
    np.testing.assert_allclose(dense.params['W'][:, 0], [0.9, 1.1])
    assert dense.params['b'][0] == 0


def test_freeze_last_dense():
    model = RegModel(tiny_config(dense=(8, 4, 1)))
    model.freeze_last_dense(2)
    assert [layer.frozen for layer in model.dense_layers()] == [False, True, True]

    frozen = set(id(layer) for layer, _ in model.trainable())
    assert all(id(layer) not in frozen for layer in model.dense_layers()[1:])

    model.freeze_last_dense(0)
    assert not any(layer.frozen for layer in model.dense_layers())


def test_state_round_trip():
    model = RegModel(tiny_config(), seed=1)
    other = RegModel(tiny_config(), seed=2)
    batch = random_batch(3)
    assert not np.array_equal(model.forward(batch), other.forward(batch))

    other.set_state(model.get_state())
    assert np.array_equal(model.forward(batch), other.forward(batch))

    norm = [layer for _, layer in model.net.iter_layers() if isinstance(layer, BatchNorm)]
    assert norm
    with pytest.raises(ShapeMismatch):
        other.set_state(model.get_state()[:-1])


def test_module_forward():
    from weave_lab import regnet

    model = RegModel(tiny_config(), seed=6)
    batch = random_batch(2)
    assert np.array_equal(regnet.forward(model, batch), model.forward(batch, train=False))
