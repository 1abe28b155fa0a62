"""
    Finite-difference check of analytic gradients.
"""
import logging

import numpy as np

from weave_lab.regnet.model import nmae, nmae_grad

log = logging.getLogger(__name__)

#: Central differences at step and half step disagreeing by more than this
#: (relative) mean the perturbation crossed a kink; the entry is skipped.
KINK_TOLERANCE = 1e-3


def _relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


class _Objective(object):
    """ Scalar loss of a network output: a fixed projection, or NMAE. """

    def __init__(self, net, x, train, labels=None):
        self.net = net
        self.x = x
        self.train = train
        self.labels = labels
        self.projection = None

    def __call__(self):
        out = self.net.forward(self.x, self.train)
        if self.labels is not None:
            return nmae(self._flat(out), self.labels)
        if self.projection is None:
            rng = np.random.Generator(np.random.Philox(0))
            self.projection = rng.standard_normal(out.shape)
        return float(np.sum(out * self.projection))

    def gradient(self):
        out = self.net.forward(self.x, self.train)
        if self.labels is not None:
            dout = nmae_grad(self._flat(out), self.labels).reshape(out.shape)
        else:
            if self.projection is None:
                self()
            dout = self.projection.astype(out.dtype)
        return self.net.backward(dout)

    @staticmethod
    def _flat(out):
        return out.reshape(-1) if out.ndim > 1 else out


def _numeric(objective, array, index, eps):
    original = array[index]

    def shifted(step):
        array[index] = original + step
        try:
            return objective()
        finally:
            array[index] = original

    full = (shifted(eps) - shifted(-eps)) / (2 * eps)
    half = (shifted(eps / 2) - shifted(-eps / 2)) / eps
    kink = abs(full - half) > KINK_TOLERANCE * (abs(full) + abs(half)) + 1e-7
    return full, kink


def grad_check(net, x, eps=1e-4, labels=None, train=True, wrt_input=False):
    """
        Largest relative error between analytic and central-difference
        gradients over every parameter of `net`.

        `net`
            A `Layer` (or `RegModel`-like object with `net`) in double
            precision.
        `x`
            Input batch.
        `labels`
            When given the loss is NMAE against them; otherwise the output
            is projected on a fixed random tensor.
        `train`
            Run batch norm with batch statistics. Dropout layers must have
            rate 0.
        `wrt_input`
            Also check the gradient with respect to `x`.

        Entries whose perturbation crosses a ReLU or max-pool kink are
        skipped.
    """
    layer = getattr(net, 'net', net)
    x = np.array(x, dtype=np.float64)
    objective = _Objective(layer, x, train, labels)

    dx = objective.gradient()
    analytic = [(name, owner.params, key, owner.grads[key].copy())
                for name, owner in layer.iter_layers()
                for key in sorted(owner.params)]

    worst = 0.0
    skipped = 0
    checked = 0

    targets = [(name + '.' + key, params[key], grad)
               for name, params, key, grad in analytic]
    if wrt_input:
        targets.append(('input', x, dx))

    for name, array, grad in targets:
        for index in np.ndindex(array.shape):
            numeric, kink = _numeric(objective, array, index, eps)
            if kink:
                skipped += 1
                continue
            checked += 1
            worst = max(worst, _relative_error(float(grad[index]), numeric))

    log.debug('Gradient check: %d entries, %d skipped at kinks, max error %.3g',
              checked, skipped, worst)
    return worst


def _suite_nets(rng):
    from weave_lab.regnet.layers import (Dense, Conv2D, BatchNorm, MaxPool2, Dropout,
                                         Flatten, ReLU, Sequential, InceptionBlock,
                                         ResidualInception)
    f64 = np.float64
    x_dense = rng.standard_normal((4, 6))
    x_map = rng.standard_normal((3, 6, 6, 2))
    return [
        ('dense', Sequential([Dense(6, 3, rng, f64)]), x_dense),
        ('conv3', Sequential([Conv2D(2, 3, 3, rng, dtype=f64)]), x_map),
        ('conv5', Sequential([Conv2D(2, 3, 5, rng, dtype=f64)]), x_map),
        ('conv7', Sequential([Conv2D(2, 3, 7, rng, dtype=f64)]), x_map),
        ('batchnorm', Sequential([BatchNorm(2, dtype=f64)]), x_map),
        ('maxpool', Sequential([Conv2D(2, 2, 3, rng, dtype=f64), MaxPool2()]), x_map),
        ('dropout', Sequential([Dropout(0.0), Dense(6, 2, rng, f64)]), x_dense),
        ('relu', Sequential([Dense(6, 4, rng, f64), ReLU()]), x_dense),
        ('inception', Sequential([InceptionBlock(2, 1, rng, f64), Flatten()]), x_map),
        ('residual_inception',
         Sequential([ResidualInception(2, 1, rng, f64), Flatten()]), x_map),
    ]


def check_suite(seeds=20, eps=1e-5):
    """
        Run `grad_check` on small double-precision nets of every layer
        type, `seeds` times each.

        Returns a mapping of layer type to its worst relative error.
    """
    worst = {}
    for seed in range(seeds):
        rng = np.random.Generator(np.random.Philox(seed))
        for name, net, x in _suite_nets(rng):
            error = grad_check(net, x, eps=eps, wrt_input=True)
            worst[name] = max(worst.get(name, 0.0), error)
    for name in sorted(worst):
        log.info('Gradient check %-18s max relative error %.3g', name, worst[name])
    return worst
