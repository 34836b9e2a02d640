"""Gradient-check cases: every differentiable op plus the MBConv and mixed-layer composites.

Each builder takes ``(rng, dtype)`` and returns ``(inputs, loss_fn)``. Values are
drawn in float64 before casting, so the same seed gives a float32 case and its
float64 reference with identical (rounded) values.
"""

import numpy as np

from fna.autodiff import BatchNormParams, Tensor
from fna.autodiff import functional as F
from fna.netgraph import IDENTITY, MB, ParamStore, mbconv_forward, mbconv_shapes
from fna.supernet import MixedLayer, mixed_forward


def _rand(r, shape, dtype, lo=None):
    a = r.normal(size=shape)
    if lo is not None:
        a = np.abs(a) + lo
    return Tensor(a, requires_grad=True, dtype=dtype)


def _const(a, dtype):
    return Tensor(np.asarray(a, dtype=np.float64), dtype=dtype)


def _bn(r, c, dtype):
    return BatchNormParams(_rand(r, (c,), dtype), _rand(r, (c,), dtype), r.normal(size=c).astype(dtype),
                           r.uniform(0.5, 2, c).astype(dtype))


def _sq(y):
    return F.sum(y * y)


def mbconv_store(r, choice, cin, cout, dtype) -> ParamStore:
    """MBConv parameters with random weights and non-trivial BN statistics."""
    shapes, bns = mbconv_shapes(choice, cin, cout)
    return ParamStore({n: Tensor(r.normal(size=s) * 0.5, requires_grad=True, dtype=dtype) for n, s in shapes.items()},
                      {n: _bn(r, c, dtype) for n, c in bns.items()})


def _mbconv_case(choice, cin, cout, stride):
    def build(r, dtype):
        x = _rand(r, (2, cin, 5, 5), dtype)
        store = mbconv_store(r, choice, cin, cout, dtype)
        probe = _const(r.normal(size=(2, cout, (5 - 1) // stride + 1, (5 - 1) // stride + 1)), dtype)

        def fn():
            return F.sum(mbconv_forward(x, store, "", choice, cin, cout, stride, True, update_stats=False) * probe)
        return [x] + store.trainable(), fn
    return build


def _mixed_case(r, dtype):
    choices = (MB(3, 3), MB(5, 3), IDENTITY)
    layer = MixedLayer(choices, [mbconv_store(r, c, 3, 3, dtype) for c in choices],
                       _rand(r, (3,), dtype), 3, 3, 1)
    x = _rand(r, (2, 3, 4, 4), dtype)
    probe = _const(r.normal(size=(2, 3, 4, 4)), dtype)
    inputs = [x, layer.alpha] + [t for cand in layer.candidates for t in cand.trainable()]
    return inputs, lambda: F.sum(mixed_forward(layer, x, training=True, update_stats=False) * probe)


def _bn_case(training):
    def build(r, dtype):
        x = _rand(r, (3, 2, 3, 3), dtype)
        bn = _bn(r, 2, dtype)
        weights = _const(r.normal(size=(3, 2, 3, 3)), dtype)
        return [x, bn.gamma, bn.beta], lambda: F.sum(F.batch_norm(x, bn, training, update_stats=False) * weights)
    return build


def _c(fn_of_inputs, *shapes):
    """Case from plain input shapes (``(shape, lo)`` pairs allowed) and a loss of those inputs."""
    def build(r, dtype):
        inputs = [_rand(r, s[0], dtype, s[1]) if isinstance(s[0], tuple) else _rand(r, s, dtype) for s in shapes]
        return inputs, lambda: fn_of_inputs(*inputs, dtype=dtype)
    return build


CASES = {
    "add": _c(lambda a, b, dtype: _sq(F.add(a, b)), (3, 4), (4,)),
    "sub": _c(lambda a, b, dtype: F.sum(F.sub(a, b) * a), (3, 4), (3, 1)),
    "mul": _c(lambda a, b, dtype: F.sum(F.mul(a, b)), (2, 3), (2, 3)),
    "div": _c(lambda a, b, dtype: F.sum(F.div(a, b)), (2, 3), ((2, 3), 0.5)),
    "exp": _c(lambda a, dtype: F.sum(F.exp(a)), (5,)),
    "log": _c(lambda a, dtype: F.sum(F.log(a)), ((5,), 0.5)),
    "relu6": _c(lambda a, dtype: _sq(F.relu6(a * 4.0 + 2.0)), (40,)),
    "mean": _c(lambda a, dtype: _sq(F.mean(a, axis=1)), (3, 4)),
    "reshape_getitem": _c(lambda a, dtype: F.sum(F.getitem(F.reshape(a, (3, 4)), 1) * 3.0), (2, 6)),
    "stack": _c(lambda a, b, dtype: F.sum(F.stack([a, b], 1) * F.stack([b, a], 1)), (3,), (3,)),
    "matmul": _c(lambda a, b, dtype: _sq(F.matmul(a, b)), (3, 4), (4, 2)),
    "cast": _c(lambda a, dtype: _sq(F.cast(a, np.float64)), (4,)),
    "softmax": _c(lambda a, dtype: F.sum(F.softmax(a, axis=1) * _const(np.arange(10.0).reshape(2, 5), dtype)),
                  (2, 5)),
    "log_softmax": _c(lambda a, dtype: F.sum(F.log_softmax(a, axis=1)
                                             * _const(np.arange(10.0).reshape(2, 5), dtype)), (2, 5)),
    "cross_entropy_cls": _c(lambda a, dtype: F.cross_entropy(a, np.array([0, 2, 1, 2])), (4, 3)),
    "cross_entropy_seg": _c(lambda a, dtype: F.cross_entropy(a, np.arange(18).reshape(2, 3, 3) % 4), (2, 4, 3, 3)),
    "conv2d": _c(lambda x, w, dtype: _sq(F.conv2d(x, w, 2, 1)), (2, 3, 5, 5), (4, 3, 3, 3)),
    "conv2d_pointwise": _c(lambda x, w, dtype: _sq(F.conv2d(x, w)), (2, 3, 4, 4), (5, 3, 1, 1)),
    "conv2d_bias": _c(lambda x, w, b, dtype: _sq(F.conv2d(x, w, bias=b)), (1, 2, 4, 4), (3, 2, 1, 1), (3,)),
    "depthwise": _c(lambda x, w, dtype: _sq(F.depthwise_conv2d(x, w, 1, 2)), (2, 3, 6, 6), (3, 1, 5, 5)),
    "depthwise_stride2": _c(lambda x, w, dtype: _sq(F.depthwise_conv2d(x, w, 2, 1)), (1, 2, 7, 7), (2, 1, 3, 3)),
    "global_avg_pool": _c(lambda x, dtype: _sq(F.global_avg_pool(x)), (2, 3, 4, 4)),
    "linear": _c(lambda x, w, b, dtype: _sq(F.linear(x, w, b)), (3, 4), (2, 4), (2,)),
    "upsample": _c(lambda x, dtype: F.sum(F.upsample_nearest(x, 2) * _const(np.arange(32.0).reshape(1, 2, 4, 4),
                                                                           dtype)), (1, 2, 2, 2)),
    "batch_norm_train": _bn_case(True),
    "batch_norm_eval": _bn_case(False),
    "mbconv_residual": _mbconv_case(MB(3, 3), 3, 3, 1),
    "mbconv_stride2_k5": _mbconv_case(MB(5, 3), 2, 3, 2),
    "mixed_layer": _mixed_case,
}


def case_seed(name: str) -> int:
    return sum(map(ord, name))
