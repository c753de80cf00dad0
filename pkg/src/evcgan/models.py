"""Generators and discriminators for the spectrogram and F0 streams.

Parameters live in flat ``name -> Tensor`` dicts whose keys and shapes are a
pure function of the config, so they serialize straight into EVCK files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import tensor as T
from .layers import (
    conv1d,
    conv2d,
    conv_output_length,
    glu_gate,
    instance_norm,
    layer_norm,
    linear,
    multi_head_attention,
    positional_embedding,
)
from .tensor import ConfigError, ShapeError, Tensor

VARIANTS = ("base", "cl", "all")
INIT_STD = 0.02


class InputLengthError(ShapeError):
    pass


@dataclass(frozen=True)
class GeneratorConfig:
    in_channels: int
    kernel: int = 15
    channels: int = 128
    stride: int = 1
    gated_repeat: int = 2
    residual_repeat: int = 2
    hidden: int = 256
    heads: int = 4
    dropout: float = 0.1
    post_kernel: int = 15
    use_transformer: bool = True
    norm: str = "instance"          # "instance" or "layer" (per-frame, across channels)
    input_skip: bool = False
    eps: float = 1e-5

    def validate(self):
        if self.stride != 1:
            raise ConfigError("generators run at stride 1 so segment length is preserved")
        if self.norm not in ("instance", "layer"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.use_transformer and self.channels % self.heads:
            raise ConfigError(f"channels {self.channels} not divisible by {self.heads} heads")
        return self


@dataclass(frozen=True)
class DiscriminatorConfig:
    in_channels: int
    dims: int = 2
    kernel: tuple = (3, 3)
    channels: tuple = (64, 128, 256)
    strides: tuple = ((1, 1), (2, 2), (2, 2))
    fine_grained: bool = False
    head: int = 1
    eps: float = 1e-5

    def validate(self):
        if self.dims not in (1, 2):
            raise ConfigError(f"discriminator dims must be 1 or 2, got {self.dims}")
        if len(self.kernel) != self.dims or any(len(s) != self.dims for s in self.strides):
            raise ConfigError(f"kernel and strides must have {self.dims} entries each")
        if len(self.channels) != 3 or len(self.strides) != 3:
            raise ConfigError("discriminator uses exactly three gated blocks")
        if self.head != 1:
            raise ConfigError("dense head must produce a single logit")
        return self


def spectrogram_generator_config(in_channels: int, **kw) -> GeneratorConfig:
    return GeneratorConfig(in_channels=in_channels, **kw).validate()


def f0_generator_config(in_channels: int = 10, **kw) -> GeneratorConfig:
    kw = {**kw, "use_transformer": False, "gated_repeat": 1, "residual_repeat": 1}
    return GeneratorConfig(in_channels=in_channels, **kw).validate()


def spectrogram_discriminator_config(in_channels: int, fine_grained: bool = False, **kw) -> DiscriminatorConfig:
    return DiscriminatorConfig(in_channels=in_channels, dims=2, fine_grained=fine_grained, **kw).validate()


def f0_discriminator_config(in_channels: int = 10, fine_grained: bool = False, **kw) -> DiscriminatorConfig:
    kw.setdefault("kernel", (5,))
    kw.setdefault("strides", ((1,), (2,), (2,)))
    return DiscriminatorConfig(in_channels=in_channels, dims=1, fine_grained=fine_grained, **kw).validate()


def config_to_dict(cfg) -> dict:
    d = asdict(cfg)
    d["kind"] = type(cfg).__name__
    return d


def config_from_dict(d: dict):
    d = dict(d)
    kind = d.pop("kind")
    if kind == "GeneratorConfig":
        return GeneratorConfig(**d).validate()
    if kind == "DiscriminatorConfig":
        for key in ("kernel", "channels", "strides"):
            d[key] = _tuplify(d[key])
        return DiscriminatorConfig(**d).validate()
    raise ConfigError(f"unknown config kind {kind!r}")


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=list).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# -- parameter construction ------------------------------------------------------------

class _Init:
    def __init__(self, rng, dtype):
        self.rng = rng
        self.dtype = dtype
        self.params = {}

    def normal(self, name, shape):
        self.params[name] = Tensor((self.rng.standard_normal(shape) * INIT_STD).astype(self.dtype),
                                   requires_grad=True)

    def const(self, name, shape, value):
        self.params[name] = Tensor(np.full(shape, value, dtype=self.dtype), requires_grad=True)

    def conv(self, name, c_out, c_in, kernel):
        self.normal(f"{name}/w", (c_out, c_in) + tuple(kernel))
        self.const(f"{name}/b", (c_out,), 0.0)

    def norm(self, name, c):
        self.const(f"{name}/gamma", (c,), 1.0)
        self.const(f"{name}/beta", (c,), 0.0)

    def gated(self, name, c_out, c_in, kernel):
        for branch in ("a", "g"):
            self.conv(f"{name}/{branch}", c_out, c_in, kernel)
            self.norm(f"{name}/{branch}_norm", c_out)

    def dense(self, name, d_in, d_out):
        self.normal(f"{name}/w", (d_in, d_out))
        self.const(f"{name}/b", (d_out,), 0.0)


def init_generator(config: GeneratorConfig, seed: int = 0, dtype=np.float32) -> dict:
    config.validate()
    ini = _Init(np.random.default_rng(seed), dtype)
    k, c, h = (config.kernel,), config.channels, config.hidden
    c_in = config.in_channels
    for i in range(config.gated_repeat):
        ini.gated(f"pre{i}", c, c_in if i == 0 else c, k)
    for j in range(config.residual_repeat):
        ini.gated(f"res{j}/gated", h, c, k)
        ini.conv(f"res{j}/out", c, h, k)
        ini.norm(f"res{j}/out_norm", c)
        if config.use_transformer:
            for proj in ("q", "k", "v", "o"):
                ini.normal(f"tf{j}/attn/w{proj}", (c, c))
                ini.const(f"tf{j}/attn/b{proj}", (c,), 0.0)
            ini.norm(f"tf{j}/ln1", c)
            ini.dense(f"tf{j}/ff1", c, h)
            ini.dense(f"tf{j}/ff2", h, c)
            ini.norm(f"tf{j}/ln2", c)
    ini.gated("mid", c, c, k)
    ini.conv("post", c_in, c, (config.post_kernel,))
    if config.input_skip:
        ini.const("skip/w", (c_in, c_in, 1), 0.0)
    return ini.params


def init_discriminator(config: DiscriminatorConfig, seed: int = 0, dtype=np.float32) -> dict:
    config.validate()
    ini = _Init(np.random.default_rng(seed), dtype)
    kernel = tuple(config.kernel)
    c_prev = 1 if config.dims == 2 else config.in_channels
    for i, c in enumerate(config.channels):
        ini.gated(f"block{i}", c, c_prev, kernel)
        c_prev = c
    ini.dense("utt", c_prev, 1)
    if config.fine_grained:
        ini.dense("frame", c_prev, 1)
    return ini.params


def count_parameters(params: dict) -> int:
    return int(sum(p.size for p in params.values()))


# -- forward passes --------------------------------------------------------------------

def _norm(x, params, name, config):
    if getattr(config, "norm", "instance") == "layer":
        return layer_norm(x, params[f"{name}/gamma"], params[f"{name}/beta"], axis=1, eps=config.eps)
    return instance_norm(x, params[f"{name}/gamma"], params[f"{name}/beta"], eps=config.eps)


def _gated_block(x, params, name, config, conv=conv1d, stride=1):
    a = conv(x, params[f"{name}/a/w"], params[f"{name}/a/b"], stride=stride, padding="same")
    g = conv(x, params[f"{name}/g/w"], params[f"{name}/g/b"], stride=stride, padding="same")
    return glu_gate(_norm(a, params, f"{name}/a_norm", config), _norm(g, params, f"{name}/g_norm", config))


def _transformer(h, params, name, config, training, rng):
    b, c, t = h.shape
    z = h.transpose(0, 2, 1) + positional_embedding(t, c, dtype=h.dtype)
    attn_params = {key: params[f"{name}/attn/{key}"] for key in
                   ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}
    p = config.dropout if training else 0.0
    a = multi_head_attention(z, attn_params, config.heads, dropout_p=p, rng=rng, training=training)
    z = layer_norm(z + T.dropout(a, p, rng=rng, training=training),
                   params[f"{name}/ln1/gamma"], params[f"{name}/ln1/beta"], eps=config.eps)
    f = linear(T.relu(linear(z, params[f"{name}/ff1/w"], params[f"{name}/ff1/b"])),
               params[f"{name}/ff2/w"], params[f"{name}/ff2/b"])
    z = layer_norm(z + T.dropout(f, p, rng=rng, training=training),
                   params[f"{name}/ln2/gamma"], params[f"{name}/ln2/beta"], eps=config.eps)
    return z.transpose(0, 2, 1)


def min_generator_length(config: GeneratorConfig) -> int:
    return max(config.kernel, config.post_kernel)


def generator_forward(params: dict, config: GeneratorConfig, features: Tensor,
                      training: bool = False, rng: Optional[np.random.Generator] = None) -> Tensor:
    """Map [B, C, T] features to [B, C, T] converted features.

    Order: gated blocks, then residual conv blocks each followed by a
    transformer layer (positional embedding added before each), a final
    gated block and a post convolution.  Dropout is active only when
    ``training`` is set.
    """
    if features.ndim != 3 or features.shape[1] != config.in_channels:
        raise ShapeError(f"generator expects [B, {config.in_channels}, T], got {features.shape}")
    if features.shape[2] < min_generator_length(config):
        raise InputLengthError(f"segment of {features.shape[2]} frames is shorter than the "
                               f"generator's minimum {min_generator_length(config)}")
    if training and config.use_transformer and config.dropout > 0 and rng is None:
        graph = T.current_graph()
        rng = graph.rng if graph is not None else None
        if rng is None:
            raise T.ContractError("training-mode generator needs an rng for dropout")
    h = features
    for i in range(config.gated_repeat):
        h = _gated_block(h, params, f"pre{i}", config)
    for j in range(config.residual_repeat):
        r = _gated_block(h, params, f"res{j}/gated", config)
        r = conv1d(r, params[f"res{j}/out/w"], params[f"res{j}/out/b"])
        h = h + _norm(r, params, f"res{j}/out_norm", config)
        if config.use_transformer:
            h = _transformer(h, params, f"tf{j}", config, training, rng)
    h = _gated_block(h, params, "mid", config)
    out = conv1d(h, params["post/w"], params["post/b"])
    if config.input_skip:
        out = out + conv1d(features, params["skip/w"])
    return out


def receptive_radius(config: GeneratorConfig) -> int:
    """One-sided receptive radius (frames) of the convolution-only path."""
    r = (config.kernel - 1) // 2
    n_convs = config.gated_repeat + 2 * config.residual_repeat + 1
    return n_convs * r + (config.post_kernel - 1) // 2


def discriminator_output_length(config: DiscriminatorConfig, t: int) -> int:
    for s in config.strides:
        t = conv_output_length(t, config.kernel[-1], s[-1], "same")
    return t


def discriminator_forward(params: dict, config: DiscriminatorConfig, features: Tensor, eps: float = 1e-7):
    """Return ``(utterance_scores [B], frame_scores [B, T'] or None)``, all inside (0, 1)."""
    if features.ndim != 3:
        raise ShapeError(f"discriminator expects [B, C, T] features, got rank {features.ndim}")
    b, c, t = features.shape
    if c != config.in_channels:
        raise ShapeError(f"discriminator channel axis (1): expected {config.in_channels}, got {c}")
    if config.dims == 2:
        h = features.reshape(b, 1, c, t)
        for i, s in enumerate(config.strides):
            h = _gated_block(h, params, f"block{i}", config, conv=conv2d, stride=tuple(s))
        spatial = (2, 3)
    else:
        h = features
        for i, s in enumerate(config.strides):
            h = _gated_block(h, params, f"block{i}", config, conv=conv1d, stride=s[0])
        spatial = (2,)
    pooled = h.mean(axis=spatial)
    utt = T.clip(T.sigmoid(linear(pooled, params["utt/w"], params["utt/b"])), eps, 1 - eps).reshape(b)
    frames = None
    if config.fine_grained:
        per_frame = h.mean(axis=2) if config.dims == 2 else h          # [B, C, T']
        logits = linear(per_frame.transpose(0, 2, 1), params["frame/w"], params["frame/b"])
        frames = T.clip(T.sigmoid(logits), eps, 1 - eps).reshape(b, -1)
    return utt, frames


# -- model suite -----------------------------------------------------------------------

@dataclass
class Network:
    config: object
    params: dict

    def forward(self, x, **kw):
        if isinstance(self.config, GeneratorConfig):
            return generator_forward(self.params, self.config, x, **kw)
        return discriminator_forward(self.params, self.config, x, **kw)

    __call__ = forward


@dataclass
class ModelSuite:
    variant: str
    networks: dict = field(default_factory=dict)

    @property
    def fine_grained(self) -> bool:
        return self.variant == "all"

    @property
    def curriculum(self) -> bool:
        return self.variant in ("cl", "all")

    def manifest(self) -> dict:
        configs = {name: config_to_dict(net.config) for name, net in self.networks.items()}
        return {"variant": self.variant, "configs": configs, "config_hash": config_hash(configs)}

    def flat_params(self) -> dict:
        return {f"{name}/{key}": p for name, net in self.networks.items() for key, p in net.params.items()}

    def load_flat(self, flat: dict) -> None:
        for name, net in self.networks.items():
            for key in net.params:
                arr = flat[f"{name}/{key}"]
                net.params[key] = Tensor(np.asarray(arr, dtype=net.params[key].dtype), requires_grad=True)

    def __getitem__(self, name) -> Network:
        return self.networks[name]


GENERATOR_NAMES = ("spec_G_ab", "spec_G_ba", "f0_G_ab", "f0_G_ba")
DISCRIMINATOR_NAMES = ("spec_D_a", "spec_D_b", "f0_D_a", "f0_D_b")


def build_model_suite(variant: str, spec_channels: int = 513, f0_channels: int = 10, seed: int = 0,
                      generator_overrides: Optional[dict] = None,
                      discriminator_overrides: Optional[dict] = None,
                      f0_discriminator_overrides: Optional[dict] = None,
                      dtype=np.float32) -> ModelSuite:
    """Two generators and two discriminators per stream for one emotion pair."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    fine = variant == "all"
    g_kw = dict(generator_overrides or {})
    d_kw = dict(discriminator_overrides or {})
    d1_kw = dict(f0_discriminator_overrides or {})
    cfgs = {
        "spec_G_ab": spectrogram_generator_config(spec_channels, **g_kw),
        "spec_G_ba": spectrogram_generator_config(spec_channels, **g_kw),
        "f0_G_ab": f0_generator_config(f0_channels, **g_kw),
        "f0_G_ba": f0_generator_config(f0_channels, **g_kw),
        "spec_D_a": spectrogram_discriminator_config(spec_channels, fine, **d_kw),
        "spec_D_b": spectrogram_discriminator_config(spec_channels, fine, **d_kw),
        "f0_D_a": f0_discriminator_config(f0_channels, fine, **d1_kw),
        "f0_D_b": f0_discriminator_config(f0_channels, fine, **d1_kw),
    }
    suite = ModelSuite(variant=variant)
    for i, (name, cfg) in enumerate(cfgs.items()):
        init = init_generator if isinstance(cfg, GeneratorConfig) else init_discriminator
        suite.networks[name] = Network(cfg, init(cfg, seed=seed * 1000 + i, dtype=dtype))
    return suite


def suite_from_manifest(manifest: dict, dtype=np.float32) -> ModelSuite:
    if config_hash(manifest["configs"]) != manifest["config_hash"]:
        raise ConfigError("model manifest config hash does not match its configs")
    suite = ModelSuite(variant=manifest["variant"])
    for name, d in manifest["configs"].items():
        cfg = config_from_dict(d)
        init = init_generator if isinstance(cfg, GeneratorConfig) else init_discriminator
        suite.networks[name] = Network(cfg, init(cfg, dtype=dtype))
    return suite


def identity_generator_params(config: GeneratorConfig, dtype=np.float64) -> dict:
    """Debug generator whose output equals its input.

    Requires ``input_skip``: the skip kernel is the identity, the post
    convolution is zeroed and every gate is saturated open.
    """
    if not config.input_skip:
        raise ConfigError("identity debug generator needs input_skip=True")
    params = init_generator(config, dtype=dtype)
    for name, p in params.items():
        if name.endswith("g_norm/beta"):
            p.data[...] = 40.0
    params["post/w"].data[...] = 0.0
    params["skip/w"].data[...] = np.eye(config.in_channels, dtype=dtype)[:, :, None]
    return params


def with_norm(config: GeneratorConfig, norm: str) -> GeneratorConfig:
    return replace(config, norm=norm).validate()
