"""Central finite-difference oracle shared by the tensor tests and the acceptance suite."""

from __future__ import annotations

import numpy as np

from evcgan import layers as L
from evcgan import tensor as T
from evcgan.models import GeneratorConfig, generator_forward, init_generator
from evcgan.tensor import Tensor

H = 1e-5
TOL = 1e-4
SEEDS = (0, 1, 2, 3, 4)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / scale)


def check(fn, arrays, rng, max_coords=None, h=H):
    """Relative error between backward() and central differences.

    The error is measured on the gradient vector concatenated over all
    inputs, so inputs whose true gradient is zero (a key bias under softmax)
    are judged against the overall gradient scale, not against roundoff.

    ``fn`` maps Tensors to an output Tensor; it is reduced against a fixed
    random projection so that every output element contributes.
    ``max_coords`` samples that many coordinates per input instead of all.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    proj = {}

    def loss_value(arrs):
        out = fn(*[Tensor(a) for a in arrs])
        if "w" not in proj:
            proj["w"] = rng.standard_normal(out.shape)
        return float(np.sum(out.data * proj["w"]))

    loss_value(arrays)
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    T.backward(T.tsum(out * Tensor(proj["w"])))
    all_num, all_ana = [], []
    for i, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        coords = list(np.ndindex(*arrays[i].shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[j] for j in pick]
        num = np.empty(len(coords))
        ana = np.empty(len(coords))
        for j, c in enumerate(coords):
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[i][c] += h
            minus[i][c] -= h
            num[j] = (loss_value(plus) - loss_value(minus)) / (2 * h)
            ana[j] = analytic[c]
        all_num.append(num)
        all_ana.append(ana)
    return rel_error(np.concatenate(all_ana), np.concatenate(all_num))


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * (margin + np.abs(x)), x)


def _away_from_edges(rng, shape, edge, margin=0.05):
    x = rng.standard_normal(shape)
    near = np.abs(np.abs(x) - edge) < margin
    return np.where(near, x * 1.5, x)


def _attn_params(rng, d):
    return {k: rng.standard_normal((d, d)) * 0.4 for k in ("wq", "wk", "wv", "wo")} | {
        k: rng.standard_normal(d) * 0.1 for k in ("bq", "bk", "bv", "bo")}


def _mha_case(rng):
    d = 4
    p = _attn_params(rng, d)
    names = sorted(p)

    def fn(x, *ps):
        return L.multi_head_attention(x, dict(zip(names, ps)), heads=2)

    return fn, [rng.standard_normal((2, 3, d))] + [p[k] for k in names]


def _dropout_case(rng):
    seed = int(rng.integers(1 << 30))
    return (lambda a: T.dropout(a, 0.3, rng=np.random.default_rng(seed))), [rng.standard_normal((3, 4))]


def tiny_generator_config(**kw) -> GeneratorConfig:
    base = dict(in_channels=3, kernel=3, channels=4, hidden=6, heads=2, dropout=0.1,
                post_kernel=3, gated_repeat=1, residual_repeat=1)
    base.update(kw)
    return GeneratorConfig(**base).validate()


def _generator_case(rng):
    cfg = tiny_generator_config()
    seed = int(rng.integers(1 << 30))
    params = init_generator(cfg, seed=seed, dtype=np.float64)
    # widen the init so every path carries a visible gradient
    for p in params.values():
        p.data = p.data + rng.standard_normal(p.shape) * 0.3
    names = sorted(params)
    graph_seed = int(rng.integers(1 << 30))

    def fn(x, *ps):
        with T.Graph(seed=graph_seed):
            return generator_forward(dict(zip(names, ps)), cfg, x, training=True)

    return fn, [rng.standard_normal((1, 3, 6))] + [params[k].data for k in names]


def _chain_case(rng):
    """conv1d -> glu_gate -> instance_norm -> attention -> L1 against a target."""
    d = 4
    p = _attn_params(rng, d)
    names = sorted(p)
    target = rng.standard_normal((1, 5, d))

    def fn(x, k, kg, *ps):
        h = L.glu_gate(L.conv1d(x, k), L.conv1d(x, kg))
        h = L.instance_norm(h, Tensor(np.ones(d)), Tensor(np.zeros(d)))
        h = L.multi_head_attention(h.transpose(0, 2, 1), dict(zip(names, ps)), heads=2)
        return T.tabs(h - Tensor(target)).mean()

    return fn, [rng.standard_normal((1, 3, 5)), rng.standard_normal((d, 3, 3)),
                rng.standard_normal((d, 3, 3))] + [p[k] for k in names]


def _conv_case(conv, xshape, kshape, **kw):
    def make(rng):
        return (lambda x, k, b: conv(x, k, b, **kw)), [
            rng.standard_normal(xshape), rng.standard_normal(kshape), rng.standard_normal(kshape[0])]
    return make


# name -> factory(rng) returning (fn, input arrays[, max_coords])
OP_CASES = {
    "add": lambda r: (T.add, [r.standard_normal((2, 3)), r.standard_normal((3,))]),
    "sub": lambda r: (T.sub, [r.standard_normal((2, 3)), r.standard_normal((2, 1))]),
    "mul": lambda r: (T.mul, [r.standard_normal((2, 3)), r.standard_normal((2, 3))]),
    "div": lambda r: (T.div, [r.standard_normal((2, 3)), r.uniform(0.5, 2.0, (2, 3))]),
    "neg": lambda r: (T.neg, [r.standard_normal((4,))]),
    "exp": lambda r: (T.exp, [r.standard_normal((2, 3))]),
    "log": lambda r: (T.log, [r.uniform(0.5, 3.0, (2, 3))]),
    "sqrt": lambda r: (T.sqrt, [r.uniform(0.5, 3.0, (2, 3))]),
    "abs": lambda r: (T.tabs, [_away_from_zero(r, (2, 3))]),
    "relu": lambda r: (T.relu, [_away_from_zero(r, (2, 3))]),
    "leaky_relu": lambda r: (T.leaky_relu, [_away_from_zero(r, (2, 3))]),
    "sigmoid": lambda r: (T.sigmoid, [r.standard_normal((2, 3)) * 3]),
    "tanh": lambda r: (T.tanh, [r.standard_normal((2, 3))]),
    "clip": lambda r: ((lambda a: T.clip(a, -0.5, 0.5)), [_away_from_edges(r, (3, 3), 0.5)]),
    "softmax": lambda r: ((lambda a: T.softmax(a, axis=-1)), [r.standard_normal((2, 5))]),
    "dropout": _dropout_case,
    "sum": lambda r: ((lambda a: T.tsum(a, axis=1)), [r.standard_normal((2, 3, 2))]),
    "mean": lambda r: ((lambda a: T.mean(a, axis=(0, 2))), [r.standard_normal((2, 3, 2))]),
    "reshape": lambda r: ((lambda a: a.reshape(3, 4)), [r.standard_normal((2, 6))]),
    "transpose": lambda r: ((lambda a: a.transpose(2, 0, 1)), [r.standard_normal((2, 3, 4))]),
    "matmul": lambda r: (T.matmul, [r.standard_normal((2, 3, 4)), r.standard_normal((4, 2))]),
    "concat": lambda r: ((lambda a, b: T.concat([a, b], axis=1)),
                         [r.standard_normal((2, 3)), r.standard_normal((2, 2))]),
    "conv1d_same": _conv_case(L.conv1d, (2, 3, 7), (2, 3, 3)),
    "conv1d_stride2_valid": _conv_case(L.conv1d, (1, 2, 8), (3, 2, 3), stride=2, padding="valid"),
    "conv2d_same": _conv_case(L.conv2d, (1, 2, 5, 4), (2, 2, 3, 3)),
    "conv2d_stride2": _conv_case(L.conv2d, (2, 1, 6, 5), (2, 1, 3, 3), stride=(2, 2)),
    "glu_gate": lambda r: (L.glu_gate, [r.standard_normal((2, 5)), r.standard_normal((2, 5))]),
    "instance_norm": lambda r: (L.instance_norm, [r.standard_normal((2, 3, 5)), r.uniform(0.5, 1.5, 3),
                                                  r.standard_normal(3)]),
    "layer_norm": lambda r: ((lambda x, g, b: L.layer_norm(x, g, b, axis=1)),
                             [r.standard_normal((2, 4, 3)), r.uniform(0.5, 1.5, 4), r.standard_normal(4)]),
    "linear": lambda r: (L.linear, [r.standard_normal((2, 3)), r.standard_normal((3, 4)), r.standard_normal(4)]),
    "multi_head_attention": _mha_case,
    "composite_chain": _chain_case,
    "generator_composite": lambda r: (*_generator_case(r), 40),
}


def run_case(name: str, seed: int) -> float:
    rng = np.random.default_rng(1000 * seed + sum(map(ord, name)))
    case = OP_CASES[name](rng)
    fn, arrays = case[0], case[1]
    max_coords = case[2] if len(case) > 2 else None
    return check(fn, arrays, rng, max_coords=max_coords)
