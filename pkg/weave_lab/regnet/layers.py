"""
    Layers with analytic gradients. Tensors are ``(n, h, w, c)``.

    Every layer keeps its trainable arrays in `params`, their gradients
    (filled by `backward`) in `grads` and non-trainable state in
    `buffers`. Composite layers expose their children through `children`.
"""
import numpy as np

from weave_lab.errors import ShapeMismatch


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer(object):
    """
        Base class.

        `frozen`
            Frozen layers are skipped by the optimiser.
    """
    kind = 'layer'

    def __init__(self):
        self.params = {}
        self.grads = {}
        self.buffers = {}
        self.children = []
        self.frozen = False

    def forward(self, x, train=False):
        raise NotImplementedError()

    def backward(self, dout):
        raise NotImplementedError()

    def named_children(self):
        return [(str(i), child) for i, child in enumerate(self.children)]

    def iter_layers(self, prefix=''):
        """ ``(qualified_name, layer)`` for this layer and its descendants. """
        yield prefix, self
        for name, child in self.named_children():
            qualified = '%s.%s' % (prefix, name) if prefix else name
            for item in child.iter_layers(qualified):
                yield item

    def named_arrays(self, prefix='', buffers=True):
        """ Parameters (and buffers) in a fixed order, with dotted names. """
        for name, layer in self.iter_layers(prefix):
            sources = [layer.params]
            if buffers:
                sources.append(layer.buffers)
            for source in sources:
                for key in sorted(source):
                    yield ('%s.%s' % (name, key) if name else key), source[key]

    def freeze(self, frozen=True):
        for _, layer in self.iter_layers():
            layer.frozen = frozen

    def __repr__(self):
        return '<%s>' % self.__class__.__name__


class Scale(Layer):
    """ Multiplies the input by a constant, e.g. 1/255 on raw intensities. """
    kind = 'scale'

    def __init__(self, factor):
        super(Scale, self).__init__()
        self.factor = factor

    def forward(self, x, train=False):
        return x * x.dtype.type(self.factor)

    def backward(self, dout):
        return dout * dout.dtype.type(self.factor)


class Conv2D(Layer):
    """
        Stride-1 convolution with zero "same" padding.

        `W` is ``(k, k, c_in, c_out)``.
    """
    kind = 'conv'

    def __init__(self, in_channels, out_channels, kernel, rng=None, bias=True,
                 dtype=np.float32):
        super(Conv2D, self).__init__()
        if kernel % 2 != 1:
            raise ShapeMismatch('Convolution kernels must be odd, got %d' % kernel)

        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel

        shape = (kernel, kernel, in_channels, out_channels)
        if rng is None:
            self.params['W'] = np.zeros(shape, dtype=dtype)
        else:
            self.params['W'] = he_normal(rng, shape, kernel * kernel * in_channels, dtype)
        if bias:
            self.params['b'] = np.zeros(out_channels, dtype=dtype)

        self._xp = None

    def forward(self, x, train=False):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeMismatch('Convolution expects %d input channels, got shape %r'
                                % (self.in_channels, x.shape))

        k = self.kernel
        pad = k // 2
        n, h, w, _ = x.shape
        W = self.params['W']

        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        out = np.zeros((n, h, w, self.out_channels), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                out += np.matmul(xp[:, i:i + h, j:j + w, :], W[i, j])

        if 'b' in self.params:
            out += self.params['b']

        self._xp = xp
        return out

    def backward(self, dout):
        k = self.kernel
        pad = k // 2
        xp = self._xp
        n, h, w, _ = dout.shape
        W = self.params['W']

        dW = np.zeros_like(W)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                window = xp[:, i:i + h, j:j + w, :]
                dW[i, j] = np.tensordot(window, dout, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, i:i + h, j:j + w, :] += np.matmul(dout, W[i, j].T)

        self.grads['W'] = dW
        if 'b' in self.params:
            self.grads['b'] = dout.sum(axis=(0, 1, 2))

        return dxp[:, pad:pad + h, pad:pad + w, :]


class BatchNorm(Layer):
    """
        Per-channel batch normalisation. Training uses the (biased) batch
        statistics and updates the running ones with `momentum`; inference
        uses the running statistics.
    """
    kind = 'batchnorm'

    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=np.float32):
        super(BatchNorm, self).__init__()
        self.channels = channels
        self.eps = eps
        self.momentum = momentum

        self.params['gamma'] = np.ones(channels, dtype=dtype)
        self.params['beta'] = np.zeros(channels, dtype=dtype)
        self.buffers['running_mean'] = np.zeros(channels, dtype=dtype)
        self.buffers['running_var'] = np.ones(channels, dtype=dtype)

        self._cache = None

    def forward(self, x, train=False):
        if x.shape[-1] != self.channels:
            raise ShapeMismatch('Batch norm expects %d channels, got %d'
                                % (self.channels, x.shape[-1]))

        axes = tuple(range(x.ndim - 1))
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers['running_mean'] = (m * self.buffers['running_mean'] +
                                            (1 - m) * mean).astype(x.dtype)
            self.buffers['running_var'] = (m * self.buffers['running_var'] +
                                           (1 - m) * var).astype(x.dtype)
        else:
            mean = self.buffers['running_mean']
            var = self.buffers['running_var']

        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv_std
        self._cache = (xhat, inv_std, train, axes)

        return self.params['gamma'] * xhat + self.params['beta']

    def backward(self, dout):
        xhat, inv_std, train, axes = self._cache
        gamma = self.params['gamma']

        self.grads['gamma'] = (dout * xhat).sum(axis=axes)
        self.grads['beta'] = dout.sum(axis=axes)

        dxhat = dout * gamma
        if not train:
            return dxhat * inv_std

        count = float(np.prod([dout.shape[a] for a in axes]))
        return (inv_std / count) * (count * dxhat - dxhat.sum(axis=axes) -
                                    xhat * (dxhat * xhat).sum(axis=axes))


class ReLU(Layer):
    kind = 'relu'

    def forward(self, x, train=False):
        mask = x > 0
        self._mask = mask
        return np.where(mask, x, x.dtype.type(0))

    def backward(self, dout):
        return np.where(self._mask, dout, dout.dtype.type(0))


class MaxPool2(Layer):
    """ 2 x 2 max pooling, stride 2; odd trailing rows/columns are dropped. """
    kind = 'maxpool'

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ShapeMismatch('Cannot pool a %dx%d map' % (h, w))

        windows = (x[:, :2 * h2, :2 * w2, :]
                   .reshape(n, h2, 2, w2, 2, c)
                   .transpose(0, 1, 3, 5, 2, 4)
                   .reshape(n, h2, w2, c, 4))
        index = windows.argmax(axis=-1)
        self._index = index
        self._shape = x.shape
        return np.take_along_axis(windows, index[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        n, h, w, c = self._shape
        h2, w2 = h // 2, w // 2

        routed = np.zeros((n, h2, w2, c, 4), dtype=dout.dtype)
        np.put_along_axis(routed, self._index[..., None], dout[..., None], axis=-1)

        dx = np.zeros(self._shape, dtype=dout.dtype)
        dx[:, :2 * h2, :2 * w2, :] = (routed.reshape(n, h2, w2, c, 2, 2)
                                      .transpose(0, 1, 4, 2, 5, 3)
                                      .reshape(n, 2 * h2, 2 * w2, c))
        return dx


class Dropout(Layer):
    """ Inverted dropout: active only in training, scaled at train time. """
    kind = 'dropout'

    def __init__(self, rate):
        super(Dropout, self).__init__()
        self.rate = float(rate)
        self.rng = np.random.Generator(np.random.Philox(0))
        self._mask = None

    def forward(self, x, train=False):
        if not train or self.rate == 0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = ((self.rng.random(x.shape) < keep) / keep).astype(x.dtype)
        return x * self._mask

    def backward(self, dout):
        if self._mask is None:
            return dout
        return dout * self._mask


class Flatten(Layer):
    kind = 'flatten'

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._shape)


class Dense(Layer):
    kind = 'dense'

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        super(Dense, self).__init__()
        self.in_features = in_features
        self.out_features = out_features

        shape = (in_features, out_features)
        if rng is None:
            self.params['W'] = np.zeros(shape, dtype=dtype)
        else:
            self.params['W'] = he_normal(rng, shape, in_features, dtype)
        self.params['b'] = np.zeros(out_features, dtype=dtype)

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch('Dense layer expects %d features, got shape %r'
                                % (self.in_features, x.shape))
        self._x = x
        return np.matmul(x, self.params['W']) + self.params['b']

    def backward(self, dout):
        self.grads['W'] = np.matmul(self._x.T, dout)
        self.grads['b'] = dout.sum(axis=0)
        return np.matmul(dout, self.params['W'].T)


class Sequential(Layer):
    """ Layers applied in order. """
    kind = 'sequential'

    def __init__(self, layers=()):
        super(Sequential, self).__init__()
        self.children = list(layers)

    def forward(self, x, train=False):
        for layer in self.children:
            x = layer.forward(x, train)
        return x

    def backward(self, dout):
        for layer in reversed(self.children):
            dout = layer.backward(dout)
        return dout


class InceptionBlock(Layer):
    """
        Parallel 3x3, 5x5 and 7x7 same-padding convolutions with `filters`
        maps each, concatenated, batch-normalised and rectified. Output has
        ``3 * filters`` channels.
    """
    kind = 'inception'
    kernels = (3, 5, 7)

    def __init__(self, in_channels, filters, rng=None, dtype=np.float32,
                 eps=1e-5, momentum=0.9):
        super(InceptionBlock, self).__init__()
        self.in_channels = in_channels
        self.filters = filters
        self.out_channels = filters * len(self.kernels)

        self.convs = [Conv2D(in_channels, filters, k, rng, bias=False, dtype=dtype)
                      for k in self.kernels]
        self.norm = BatchNorm(self.out_channels, eps, momentum, dtype)
        self.relu = ReLU()

    def named_children(self):
        children = [('conv%d' % k, conv) for k, conv in zip(self.kernels, self.convs)]
        return children + [('norm', self.norm), ('relu', self.relu)]

    def _branches(self, x, train):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeMismatch('%s expects %d input channels, got shape %r'
                                % (self.__class__.__name__, self.in_channels, x.shape))
        return np.concatenate([conv.forward(x, train) for conv in self.convs], axis=3)

    def _branches_backward(self, dout):
        parts = np.split(dout, len(self.convs), axis=3)
        dx = None
        for conv, part in zip(self.convs, parts):
            grad = conv.backward(part)
            dx = grad if dx is None else dx + grad
        return dx

    def forward(self, x, train=False):
        out = self._branches(x, train)
        return self.relu.forward(self.norm.forward(out, train), train)

    def backward(self, dout):
        dout = self.norm.backward(self.relu.backward(dout))
        return self._branches_backward(dout)


class ResidualInception(InceptionBlock):
    """
        Inception block whose concatenated convolutions are added to the
        input before batch norm and ReLU. A 1x1 projection is inserted when
        the input channel count differs from the block output.
    """
    kind = 'residual_inception'

    def __init__(self, in_channels, filters, rng=None, dtype=np.float32,
                 eps=1e-5, momentum=0.9):
        super(ResidualInception, self).__init__(in_channels, filters, rng, dtype,
                                                eps, momentum)
        self.projection = None
        if in_channels != self.out_channels:
            self.projection = Conv2D(in_channels, self.out_channels, 1, rng,
                                     bias=False, dtype=dtype)

    def named_children(self):
        children = super(ResidualInception, self).named_children()
        if self.projection is not None:
            children.append(('projection', self.projection))
        return children

    def forward(self, x, train=False):
        out = self._branches(x, train)
        if self.projection is not None:
            out = out + self.projection.forward(x, train)
        else:
            out = out + x
        return self.relu.forward(self.norm.forward(out, train), train)

    def backward(self, dout):
        dout = self.norm.backward(self.relu.backward(dout))
        dx = self._branches_backward(dout)
        if self.projection is not None:
            return dx + self.projection.backward(dout)
        return dx + dout


def inception_forward(x, block, train=False):
    """ Forward pass of an `InceptionBlock`. """
    return block.forward(x, train)


def residual_inception_forward(x, block, train=False):
    """ Forward pass of a `ResidualInception` block. """
    return block.forward(x, train)
