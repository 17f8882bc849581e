import collections

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

import chorus.exceptions
from chorus import get_logger
from chorus.nn.tensor import Tensor

logger = get_logger(__name__)


def glorot_uniform(rng, shape, fan_in, fan_out):
    """
    Draws from U(-sqrt(6 / (fan_in + fan_out)), +sqrt(...)).
    """
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _rng(rng):
    if rng is None:
        return np.random.default_rng(0)
    if isinstance(rng, (int, np.integer)):
        return np.random.default_rng(int(rng))
    return rng


class Layer(object):
    """
    The Layer is the base-class of the fixed layer vocabulary. A layer caches whatever its
    backward pass needs during `forward`, and `backward` both returns the gradient w.r.t. its
    input and accumulates gradients into its parameter Tensors.
    """
    kind = None

    def __init__(self):
        self._cache = None

    def params(self):
        return collections.OrderedDict()

    def config(self):
        """
        :returns: The keyword arguments that rebuild this layer (without its weights).
        :rtype: dict
        """
        return {}

    def describe(self):
        d = collections.OrderedDict([("kind", self.kind)])
        d.update(self.config())
        return d

    def check_input(self, x):
        pass

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise chorus.exceptions.StateError("{}: backward called before forward".format(self.kind))
        return self._cache


def _expect_ndim(x, ndim, what):
    if x.ndim != ndim:
        raise chorus.exceptions.ShapeError(
            "{} expects a {}-d input, got shape {}".format(what, ndim, x.shape))


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=0, rng=None):
        super(Conv2d, self).__init__()
        if isinstance(kernel_size, int):
            kernel_size = (kernel_size, kernel_size)
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = tuple(int(k) for k in kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        kh, kw = self.kernel_size
        rng = _rng(rng)
        self.weight = Tensor(
            glorot_uniform(rng, (self.out_channels, self.in_channels, kh, kw),
                           self.in_channels * kh * kw, self.out_channels * kh * kw),
            name="weight")
        self.bias = Tensor(np.zeros(self.out_channels), name="bias")

    def params(self):
        return collections.OrderedDict([("weight", self.weight), ("bias", self.bias)])

    def config(self):
        return collections.OrderedDict([
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("kernel_size", list(self.kernel_size)),
            ("stride", self.stride),
            ("padding", self.padding),
        ])

    def output_size(self, h, w):
        kh, kw = self.kernel_size
        p, s = self.padding, self.stride
        return (h + 2 * p - kh) // s + 1, (w + 2 * p - kw) // s + 1

    def check_input(self, x):
        _expect_ndim(x, 4, "conv2d")
        if x.shape[1] != self.in_channels:
            raise chorus.exceptions.ShapeError(
                "conv2d expects {} input channels, got {}".format(self.in_channels, x.shape[1]))
        kh, kw = self.kernel_size
        if x.shape[2] + 2 * self.padding < kh or x.shape[3] + 2 * self.padding < kw:
            raise chorus.exceptions.ShapeError(
                "conv2d input {}x{} smaller than kernel {}x{}".format(x.shape[2], x.shape[3], kh, kw))

    def forward(self, x):
        self.check_input(x)
        n, c, h, w = x.shape
        kh, kw = self.kernel_size
        s, p = self.stride, self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        ho, wo = self.output_size(h, w)

        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
        wmat = self.weight.data.reshape(self.out_channels, -1)
        out = cols @ wmat.T + self.bias.data

        self._cache = (x.shape, xp.shape, cols, ho, wo)
        return out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy):
        x_shape, xp_shape, cols, ho, wo = self._cached()
        n, c, h, w = x_shape
        kh, kw = self.kernel_size
        s, p = self.stride, self.padding

        dyr = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.weight.accumulate((dyr.T @ cols).reshape(self.weight.shape))
        self.bias.accumulate(dyr.sum(axis=0))

        wmat = self.weight.data.reshape(self.out_channels, -1)
        dcols = (dyr @ wmat).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros(xp_shape)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        return dxp[:, :, p:p + h, p:p + w]


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features, out_features, rng=None):
        super(Linear, self).__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        rng = _rng(rng)
        self.weight = Tensor(
            glorot_uniform(rng, (self.in_features, self.out_features), self.in_features, self.out_features),
            name="weight")
        self.bias = Tensor(np.zeros(self.out_features), name="bias")

    def params(self):
        return collections.OrderedDict([("weight", self.weight), ("bias", self.bias)])

    def config(self):
        return collections.OrderedDict([("in_features", self.in_features), ("out_features", self.out_features)])

    def check_input(self, x):
        _expect_ndim(x, 2, "linear")
        if x.shape[1] != self.in_features:
            raise chorus.exceptions.ShapeError(
                "linear expects {} features, got {}".format(self.in_features, x.shape[1]))

    def forward(self, x):
        self.check_input(x)
        self._cache = x
        return x @ self.weight.data + self.bias.data

    def backward(self, dy):
        x = self._cached()
        self.weight.accumulate(x.T @ dy)
        self.bias.accumulate(dy.sum(axis=0))
        return dy @ self.weight.data.T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._cached()


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        y = expit(x)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._cached()
        return dy * y * (1.0 - y)


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel_size=2, stride=None):
        super(MaxPool2d, self).__init__()
        self.kernel_size = int(kernel_size)
        self.stride = int(stride or kernel_size)

    def config(self):
        return collections.OrderedDict([("kernel_size", self.kernel_size), ("stride", self.stride)])

    def check_input(self, x):
        _expect_ndim(x, 4, "maxpool2d")
        if x.shape[2] < self.kernel_size or x.shape[3] < self.kernel_size:
            raise chorus.exceptions.ShapeError(
                "maxpool2d input {}x{} smaller than window {}".format(x.shape[2], x.shape[3], self.kernel_size))

    def forward(self, x):
        self.check_input(x)
        k, s = self.kernel_size, self.stride
        ho = (x.shape[2] - k) // s + 1
        wo = (x.shape[3] - k) // s + 1
        windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s][:, :, :ho, :wo]
        flat = windows.reshape(windows.shape[:4] + (k * k,))
        winner = flat.argmax(axis=-1)  # first maximum wins ties
        self._cache = (x.shape, winner, ho, wo)
        return np.take_along_axis(flat, winner[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        x_shape, winner, ho, wo = self._cached()
        k, s = self.kernel_size, self.stride
        dx = np.zeros(x_shape)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + s * ho:s, j:j + s * wo:s] += dy * (winner == i * k + j)
        return dx


class Upsample(Layer):
    """
    Nearest-neighbour upsampling by an integer factor.
    """
    kind = "upsample"

    def __init__(self, factor=2):
        super(Upsample, self).__init__()
        self.factor = int(factor)

    def config(self):
        return collections.OrderedDict([("factor", self.factor)])

    def check_input(self, x):
        _expect_ndim(x, 4, "upsample")

    def forward(self, x):
        self.check_input(x)
        self._cache = x.shape
        return x.repeat(self.factor, axis=2).repeat(self.factor, axis=3)

    def backward(self, dy):
        n, c, h, w = self._cached()
        f = self.factor
        return dy.reshape(n, c, h, f, w, f).sum(axis=(3, 5))


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._cached())


class L2Normalize(Layer):
    """
    Scales every row of a (N, D) input to unit Euclidean norm. A row whose norm is below eps
    (a static lip window or silence after mean removal) maps to the fixed direction
    ones(D) / sqrt(D) and passes no gradient.
    """
    kind = "l2norm"

    def __init__(self, eps=1e-12):
        super(L2Normalize, self).__init__()
        self.eps = float(eps)

    def config(self):
        return collections.OrderedDict([("eps", self.eps)])

    def check_input(self, x):
        _expect_ndim(x, 2, "l2norm")

    def forward(self, x):
        self.check_input(x)
        norm = np.sqrt(np.sum(x * x, axis=1, keepdims=True))
        degenerate = norm < self.eps
        safe = np.where(degenerate, 1.0, norm)
        y = np.where(degenerate, 1.0 / np.sqrt(x.shape[1]), x / safe)
        self._cache = (y, safe, degenerate)
        return y

    def backward(self, dy):
        y, norm, degenerate = self._cached()
        dx = (dy - y * np.sum(dy * y, axis=1, keepdims=True)) / norm
        return np.where(degenerate, 0.0, dx)


class Sequential(object):
    """
    An ordered stack of layers. Shape errors raised by any layer are re-raised naming the
    index of the layer that rejected its input.
    """

    def __init__(self, layers):
        self.layers = list(layers)
        self._recorded = False

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, i):
        return self.layers[i]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except chorus.exceptions.ShapeError as e:
                raise chorus.exceptions.ShapeError("layer {} ({}): {}".format(i, layer.kind, e), layer_index=i)
        self._recorded = True
        return x

    def backward(self, dy):
        if not self._recorded:
            raise chorus.exceptions.StateError("backward called before forward")
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def params(self):
        out = collections.OrderedDict()
        for i, layer in enumerate(self.layers):
            for name, p in layer.params().items():
                out["{}.{}".format(i, name)] = p
        return out

    def zero_grad(self):
        for p in self.params().values():
            p.zero_grad()

    def describe(self):
        return [layer.describe() for layer in self.layers]


def forward(layers, x):
    """
    Runs `x` through `layers` in order.

    :param list layers: Layer instances, or a Sequential.
    :param numpy.ndarray x: The input batch.
    :returns: The output of the last layer.
    """
    if not isinstance(layers, Sequential):
        layers = Sequential(layers)
    return layers.forward(x)


def backward(layers, dy):
    """
    Propagates the loss gradient `dy` back through `layers`, filling every parameter's grad.

    :returns: The gradient w.r.t. the input of the first layer.
    """
    if isinstance(layers, Sequential):
        return layers.backward(dy)
    for layer in reversed(list(layers)):
        dy = layer.backward(dy)
    return dy
