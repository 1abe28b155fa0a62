"""
    Regression model: architecture configuration, the model container,
    the NMAE loss and the Adam optimiser.
"""
import json
import logging

import numpy as np

from weave_lab import raster
from weave_lab.errors import (ModelError, ShapeMismatch, NonFiniteActivation,
                              NonPositiveLabel)
from weave_lab.regnet import arch
from weave_lab.regnet.layers import Dense, Dropout, Sequential

log = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.9


class ArchConfig(object):
    """
        Architecture of a `RegModel`.

        `arch`
            Registered architecture name: ``reg``, ``reg_vgg`` or ``reg_res``.
        `filters_per_kernel`
            Filters of every kernel size in the first stage.
        `stage_blocks`
            Blocks per pooling stage.
        `stage_widths`
            Filter multiplier per stage.
        `dense_sizes`
            Dense layer sizes; the last one must be 1.
        `dropout`
            Dropout rate after every pooling stage.
        `input_side`
            Side of the square input, in pixels.

        Unset fields take the architecture's defaults.
    """
    fields = ('arch', 'filters_per_kernel', 'stage_blocks', 'stage_widths',
              'dense_sizes', 'dropout', 'input_side')

    def __init__(self, arch_name='reg_vgg', filters_per_kernel=None, stage_blocks=None,
                 stage_widths=None, dense_sizes=None, dropout=None, input_side=200):
        backend = arch.get_arch(arch_name)
        defaults = backend.defaults

        def pick(value, key):
            return defaults[key] if value is None else value

        self.arch = arch_name
        self.filters_per_kernel = int(pick(filters_per_kernel, 'filters_per_kernel'))
        self.stage_blocks = tuple(int(v) for v in pick(stage_blocks, 'stage_blocks'))
        self.stage_widths = tuple(int(v) for v in pick(stage_widths, 'stage_widths'))
        self.dense_sizes = tuple(int(v) for v in pick(dense_sizes, 'dense_sizes'))
        self.dropout = float(pick(dropout, 'dropout'))
        self.input_side = int(input_side)

        self.validate()

    def validate(self):
        if self.filters_per_kernel < 1:
            raise ModelError('filters_per_kernel must be positive')
        if not self.stage_blocks or len(self.stage_blocks) != len(self.stage_widths):
            raise ModelError('stage_blocks and stage_widths must have the same, '
                             'non-zero length')
        if min(self.stage_blocks) < 1 or min(self.stage_widths) < 1:
            raise ModelError('Stage blocks and widths must be positive')
        if not self.dense_sizes or self.dense_sizes[-1] != 1:
            raise ModelError('The last dense layer must have exactly one neuron')
        if not 0 <= self.dropout < 1:
            raise ModelError('dropout must lie in [0, 1)')
        if self.final_side < 1:
            raise ShapeMismatch('Input side %d is too small for %d pooling stages'
                                % (self.input_side, self.stages))

    @property
    def stages(self):
        return len(self.stage_blocks)

    @property
    def final_side(self):
        side = self.input_side
        for _ in range(self.stages):
            side //= 2
        return side

    @property
    def final_channels(self):
        return arch.get_arch(self.arch).channels_per_filter * \
            self.filters_per_kernel * self.stage_widths[-1]

    @property
    def flatten_size(self):
        return self.final_side * self.final_side * self.final_channels

    def to_dict(self):
        return dict(arch=self.arch,
                    filters_per_kernel=self.filters_per_kernel,
                    stage_blocks=list(self.stage_blocks),
                    stage_widths=list(self.stage_widths),
                    dense_sizes=list(self.dense_sizes),
                    dropout=self.dropout,
                    input_side=self.input_side)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        unknown = set(data) - set(cls.fields)
        if unknown:
            raise ModelError('Unknown architecture fields: %s' % ', '.join(sorted(unknown)))
        return cls(data.pop('arch'), **data)

    def dump(self, model=None):
        """
            JSON description including the derived stage count, flatten
            size and, when a model is given, its parameter count.
        """
        data = self.to_dict()
        data['stages'] = self.stages
        data['final_side'] = self.final_side
        data['flatten_size'] = self.flatten_size
        data['batchnorm_eps'] = BN_EPS
        data['batchnorm_momentum'] = BN_MOMENTUM
        if model is not None:
            data['param_count'] = model.param_count()
        return json.dumps(data, sort_keys=True, indent=2)

    def __eq__(self, other):
        if not isinstance(other, ArchConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __ne__(self, other):
        result = self.__eq__(other)
        return result if result is NotImplemented else not result

    def __repr__(self):
        return '<ArchConfig %s>' % json.dumps(self.to_dict(), sort_keys=True)


class RegModel(object):
    """
        Thread-density regressor: a `Sequential` stack built by the
        configured architecture, predicting one density per input patch.

        `config`
            `ArchConfig`.
        `seed`
            He initialisation seed.
        `dtype`
            Floating type of weights and activations.
    """
    def __init__(self, config, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.train_mode = False

        rng = np.random.Generator(np.random.Philox(seed))
        backend = arch.get_arch(config.arch)
        self.net = Sequential(backend.build(config, rng, self.dtype,
                                            eps=BN_EPS, momentum=BN_MOMENTUM))

    @property
    def layers(self):
        return self.net.children

    def dense_layers(self):
        return [layer for layer in self.layers if isinstance(layer, Dense)]

    def freeze_last_dense(self, count):
        """ Freeze the last `count` dense layers, unfreezing the rest. """
        dense = self.dense_layers()
        for index, layer in enumerate(dense):
            layer.freeze(index >= len(dense) - count if count else False)

    def seed_dropout(self, seed):
        sequence = np.random.SeedSequence(seed)
        dropouts = [l for _, l in self.net.iter_layers() if isinstance(l, Dropout)]
        for layer, child in zip(dropouts, sequence.spawn(len(dropouts))):
            layer.rng = np.random.Generator(np.random.Philox(child))

    def named_arrays(self, buffers=True):
        return list(self.net.named_arrays(buffers=buffers))

    def trainable(self):
        """ ``(layer, key)`` of every parameter of non-frozen layers. """
        items = []
        for _, layer in self.net.iter_layers():
            if layer.frozen:
                continue
            for key in sorted(layer.params):
                items.append((layer, key))
        return items

    def param_count(self):
        return int(sum(a.size for _, a in self.named_arrays(buffers=False)))

    def get_state(self):
        return [a.copy() for _, a in self.named_arrays()]

    def set_state(self, state):
        for (name, layer), key, array in self._slots(state):
            source = layer.params if key in layer.params else layer.buffers
            source[key] = np.array(array, dtype=self.dtype)

    def _slots(self, state):
        slots = []
        for name, layer in self.net.iter_layers():
            for key in sorted(layer.params):
                slots.append(((name, layer), key))
            for key in sorted(layer.buffers):
                slots.append(((name, layer), key))
        if len(slots) != len(state):
            raise ShapeMismatch('State has %d arrays, model has %d'
                                % (len(state), len(slots)))
        return [(slot, key, array) for (slot, key), array in zip(slots, state)]

    def check_input(self, batch):
        side = self.config.input_side
        if batch.ndim != 4 or batch.shape[1:] != (side, side, 1):
            raise ShapeMismatch('Expected a (n, %d, %d, 1) batch, got %r'
                                % (side, side, batch.shape))

    def forward(self, batch, train=None):
        """
            Predictions, one per patch, in threads/cm.

            `train`
                Overrides `train_mode`: dropout and batch statistics are
                only used in training.
        """
        if train is None:
            train = self.train_mode
        batch = np.asarray(batch, dtype=self.dtype)
        self.check_input(batch)

        x = batch
        for layer in self.layers:
            x = layer.forward(x, train)
            if not np.isfinite(x).all():
                raise NonFiniteActivation('Non-finite activation after %r' % layer)
        return x[:, 0]

    def backward(self, dpred):
        dout = np.asarray(dpred, dtype=self.dtype)[:, None]
        return self.net.backward(dout)

    def predict(self, batch, batch_size=64):
        """ Inference in chunks. """
        batch = np.asarray(batch, dtype=self.dtype)
        out = [self.forward(batch[i:i + batch_size], train=False)
               for i in range(0, len(batch), batch_size)]
        if not out:
            return np.zeros(0, dtype=self.dtype)
        return np.concatenate(out)

    def to_batch(self, patches):
        return patches_to_batch(patches, self.config.input_side, self.dtype)


def patches_to_batch(patches, input_side, dtype=np.float32):
    """
        ``(n, side, side, 1)`` tensor of `GrayImage` patches, resampled to
        the model input side.
    """
    batch = np.empty((len(patches), input_side, input_side, 1), dtype=dtype)
    for index, patch in enumerate(patches):
        if patch.shape != (input_side, input_side):
            target = patch.ppcm * input_side / float(patch.width_px)
            patch = raster.rescale(patch, target)
        if patch.shape != (input_side, input_side):
            raise ShapeMismatch('Patch %r does not resample to %d px'
                                % (patch, input_side))
        batch[index, :, :, 0] = patch.pixels
    return batch


def nmae(preds, labels):
    """ Mean of ``|pred - label| / label``. """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ShapeMismatch('%d predictions for %d labels' % (preds.size, labels.size))
    if labels.size == 0:
        raise ShapeMismatch('Empty batch')
    if not (labels > 0).all():
        raise NonPositiveLabel('Labels must be positive')
    return float(np.mean(np.abs(preds - labels) / labels))


def nmae_grad(preds, labels):
    """ Subgradient of `nmae` with respect to the predictions; 0 at equality. """
    preds = np.asarray(preds)
    labels = np.asarray(labels, dtype=preds.dtype)
    return np.sign(preds - labels) / labels / preds.size


class Adam(object):
    """ Adam over ``(layer, key)`` parameter slots. """

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._moments = {}

    def step(self, slots):
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t

        for layer, key in slots:
            param = layer.params[key]
            grad = layer.grads[key]

            m, v = self._moments.get((id(layer), key), (None, None))
            if m is None:
                m = np.zeros_like(param)
                v = np.zeros_like(param)

            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self._moments[(id(layer), key)] = (m, v)

            update = (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            layer.params[key] = (param - self.lr * update).astype(param.dtype)
