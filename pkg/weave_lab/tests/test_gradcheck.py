import numpy as np

from weave_lab.regnet.gradcheck import grad_check, check_suite
from weave_lab.regnet.layers import (Conv2D, Dense, ReLU, MaxPool2, Flatten,
                                     Sequential, InceptionBlock)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


class FlippedConv(Conv2D):
    """ Convolution with a planted sign error in its weight gradient. """

    def backward(self, dout):
        dx = super(FlippedConv, self).backward(dout)
        self.grads['W'] = -self.grads['W']
        return dx


def test_dense_with_nmae():
    r = rng(1)
    net = Sequential([Dense(6, 1, r, np.float64)])
    x = r.standard_normal((8, 6))
    labels = r.uniform(5, 20, 8)
    assert grad_check(net, x, labels=labels) < 1e-6


def test_conv_relu_pool():
    r = rng(2)
    net = Sequential([Conv2D(2, 3, 3, r, dtype=np.float64), ReLU(), MaxPool2(),
                      Flatten()])
    x = r.standard_normal((2, 6, 6, 2))
    assert grad_check(net, x, eps=1e-5, wrt_input=True) < 1e-4


def test_inception_inference_mode():
    r = rng(3)
    net = Sequential([InceptionBlock(1, 2, r, np.float64), Flatten()])
    x = r.standard_normal((2, 6, 6, 1))
    assert grad_check(net, x, eps=1e-5, train=False) < 1e-4


def test_planted_bug_is_caught():
    r = rng(4)
    net = Sequential([FlippedConv(1, 2, 3, r, dtype=np.float64), Flatten()])
    x = r.standard_normal((2, 5, 5, 1))
    assert grad_check(net, x) > 1e-1


def test_suite():
    worst = check_suite(seeds=1)
    assert sorted(worst) == ['batchnorm', 'conv3', 'conv5', 'conv7', 'dense', 'dropout',
                             'inception', 'maxpool', 'relu', 'residual_inception']
    for name, error in worst.items():
        assert error < 1e-4, name
