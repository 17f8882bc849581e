import numpy as np

import chorus.exceptions


class Tensor(object):
    """
    A dense array of reals with a gradient slot. Every learned parameter in the package is a
    Tensor; activations flowing between layers are plain numpy arrays.

    Data is held as float64 in row-major order so that finite-difference checks at 1e-4 are
    meaningful.
    """

    def __init__(self, data, name=None):
        """
        :param data: Anything numpy can turn into a float64 array.
        :param str name: optional, a label used in diagnostics and checkpoints.
        """
        self.data = np.ascontiguousarray(data, dtype=np.float64)
        if self.data.ndim == 0:
            self.data = self.data.reshape(1)
        if any(d <= 0 for d in self.data.shape):
            raise chorus.exceptions.ShapeError(
                "tensor dimensions must be positive, got {}".format(self.data.shape))
        self.grad = None
        self.name = name

    @classmethod
    def from_flat(cls, shape, values, name=None):
        values = np.asarray(values, dtype=np.float64)
        if int(np.prod(shape)) != values.size:
            raise chorus.exceptions.ShapeError(
                "product of shape {} != {} values".format(tuple(shape), values.size))
        return cls(values.reshape(shape), name=name)

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def accumulate(self, grad):
        """
        Adds `grad` into the gradient slot, allocating it on first use.
        """
        if grad.shape != self.data.shape:
            raise chorus.exceptions.ShapeError(
                "gradient shape {} != parameter shape {} ({})".format(grad.shape, self.data.shape, self.name))
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64)
        else:
            self.grad += grad

    def is_finite(self):
        finite = bool(np.all(np.isfinite(self.data)))
        if self.grad is not None:
            finite = finite and bool(np.all(np.isfinite(self.grad)))
        return finite

    def copy(self):
        t = Tensor(self.data.copy(), name=self.name)
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def __repr__(self):
        return "Tensor(name={!r}, shape={})".format(self.name, self.shape)
