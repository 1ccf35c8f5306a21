"""Full trajectory model: embedding + channel attention + transformer
encoder stack + autoregressive decoder.

Temporal attention runs inside each agent channel; interaction between
agents flows only through the squeeze-and-excitation block applied to the
embedded scene. The decoder cross-attends to the encoder latent of its own
agent channel and is seeded with the agent's last observed position.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import blocks, embedding, se
from .autodiff import Tensor
from .blocks import AttentionConfig, FeedForwardWeights, MultiHeadWeights
from .errors import ConfigError, DataError, UsageError


@dataclass
class ModelConfig:
    n_agents: int = 10
    t_obs: int = 15
    t_pred: int = 25
    model_dim: int = 512
    heads: int = 8
    layers: int = 2
    ffn_dim: int = 0          # 0 -> 4 * model_dim
    dropout: float = 0.1
    se_reduction: int = 2
    se_enabled: bool = True
    se_on_decoder: bool = False
    embed_hidden: bool = False
    predict_offsets: bool = False
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.t_obs < 1 or self.t_pred < 1 or self.n_agents < 1:
            raise ConfigError("t_obs, t_pred and n_agents must be >= 1")
        if self.ffn_dim == 0:
            self.ffn_dim = 4 * self.model_dim
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"unsupported dtype {self.dtype}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def attention_config(self):
        return AttentionConfig(model_dim=self.model_dim, num_heads=self.heads,
                               ffn_dim=self.ffn_dim, dropout_rate=self.dropout)

    def fingerprint(self):
        return (f"N{self.n_agents}_T{self.t_obs}+{self.t_pred}_D{self.model_dim}"
                f"_h{self.heads}_L{self.layers}_se{int(self.se_enabled)}"
                f"r{self.se_reduction}_seed{self.seed}")


PROFILES = {
    "desk": dict(model_dim=64, heads=4, layers=2, dropout=0.0),
    "paper": dict(model_dim=512, heads=8, layers=2, dropout=0.1),
}

# small enough that full-model finite differencing stays interactive
TOY_DIMS = dict(n_agents=3, t_obs=4, t_pred=3, model_dim=16, heads=2,
                layers=1, dropout=0.0, dtype="float64")


def config_for_profile(profile, **overrides):
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    kw = dict(PROFILES[profile])
    kw.update(overrides)
    return ModelConfig(**kw)


@dataclass
class Scene:
    """N agent channels over T frames; channel 0 is conventionally the target."""
    positions: np.ndarray          # N x T x 2, metres in the segment frame
    channel_mask: np.ndarray       # N bools, True = real agent
    target_index: int = 0
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.channel_mask = np.asarray(self.channel_mask, dtype=bool)
        if not self.channel_mask[self.target_index]:
            raise DataError("target channel must be a real agent")

    @property
    def n_agents(self):
        return self.positions.shape[0]

    @property
    def n_frames(self):
        return self.positions.shape[1]

    def observed(self, t_obs):
        return self.positions[:, :t_obs]

    def future(self, t_obs):
        return self.positions[:, t_obs:]


class ModelWeights:
    """Named registry of every learnable tensor, in deterministic order."""

    def __init__(self, config):
        self.config = config
        self.registry = {}
        self.table = embedding.PositionalTable.build(
            config.model_dim, t_max=max(embedding.DEFAULT_T_MAX,
                                        config.t_obs + config.t_pred + 1))
        self._rng = np.random.default_rng(config.seed)
        self._build()

    def _param(self, name, shape, fan_in=None):
        if name in self.registry:
            raise UsageError(f"duplicate parameter name {name}")
        if fan_in is None:
            data = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            data = self._rng.uniform(-bound, bound, size=shape)
        t = Tensor(data.astype(self.config.np_dtype), requires_grad=True)
        self.registry[name] = t
        return t

    def _norm(self, prefix):
        d = self.config.model_dim
        gain = self.registry[f"{prefix}/gain"] = Tensor(
            np.ones(d, dtype=self.config.np_dtype), requires_grad=True)
        bias = self.registry[f"{prefix}/bias"] = Tensor(
            np.zeros(d, dtype=self.config.np_dtype), requires_grad=True)
        return gain, bias

    def _mha(self, prefix):
        cfg = self.config
        d, dk = cfg.model_dim, cfg.model_dim // cfg.heads
        w = MultiHeadWeights()
        for i in range(cfg.heads):
            w.w_q.append(self._param(f"{prefix}/wq{i}", (d, dk), fan_in=d))
            w.w_k.append(self._param(f"{prefix}/wk{i}", (d, dk), fan_in=d))
            w.w_v.append(self._param(f"{prefix}/wv{i}", (d, dk), fan_in=d))
        w.w_o = self._param(f"{prefix}/wo", (d, d), fan_in=d)
        return w

    def _ffn(self, prefix):
        cfg = self.config
        return FeedForwardWeights(
            w1=self._param(f"{prefix}/w1", (cfg.model_dim, cfg.ffn_dim),
                           fan_in=cfg.model_dim),
            b1=self._param(f"{prefix}/b1", (cfg.ffn_dim,)),
            w2=self._param(f"{prefix}/w2", (cfg.ffn_dim, cfg.model_dim),
                           fan_in=cfg.ffn_dim),
            b2=self._param(f"{prefix}/b2", (cfg.model_dim,)),
        )

    def _se(self, prefix):
        cfg = self.config
        width = se.bottleneck_width(cfg.n_agents, cfg.se_reduction)
        return se.SEWeights(
            w1=self._param(f"{prefix}/w1", (cfg.n_agents, width), fan_in=cfg.n_agents),
            w2=self._param(f"{prefix}/w2", (width, cfg.n_agents), fan_in=width),
            reduction_ratio=cfg.se_reduction,
        )

    def _build(self):
        cfg = self.config
        d = cfg.model_dim
        if cfg.embed_hidden:
            self._param("embed/w0", (2, d), fan_in=2)
            self._param("embed/b0", (d,))
            self.embed = embedding.EmbeddingWeights(
                mlp_w=self._param("embed/w", (d, d), fan_in=d),
                mlp_b=self._param("embed/b", (d,)))
        else:
            self.embed = embedding.EmbeddingWeights(
                mlp_w=self._param("embed/w", (2, d), fan_in=2),
                mlp_b=self._param("embed/b", (d,)))
        self.se_enc = self._se("se_enc") if cfg.se_enabled else None
        self.se_dec = (self._se("se_dec")
                       if cfg.se_enabled and cfg.se_on_decoder else None)
        self.encoder = []
        for l in range(cfg.layers):
            self.encoder.append(dict(
                attn=self._mha(f"enc{l}/attn"),
                attn_norm=self._norm(f"enc{l}/attn_norm"),
                ffn=self._ffn(f"enc{l}/ffn"),
                ffn_norm=self._norm(f"enc{l}/ffn_norm"),
            ))
        self.decoder = []
        for l in range(cfg.layers):
            self.decoder.append(dict(
                self_attn=self._mha(f"dec{l}/self"),
                self_norm=self._norm(f"dec{l}/self_norm"),
                cross=self._mha(f"dec{l}/cross"),
                cross_norm=self._norm(f"dec{l}/cross_norm"),
                ffn=self._ffn(f"dec{l}/ffn"),
                ffn_norm=self._norm(f"dec{l}/ffn_norm"),
            ))
        self.out_w = self._param("out/w", (d, 2), fan_in=d)
        self.out_b = self._param("out/b", (2,))

    def parameters(self):
        return list(self.registry.values())

    def zero_grads(self):
        for t in self.registry.values():
            t.zero_grad()

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.registry.items()}

    def load_state_dict(self, state):
        for name, t in self.registry.items():
            if name not in state:
                raise DataError(f"checkpoint is missing parameter {name}")
            arr = np.asarray(state[name], dtype=self.config.np_dtype)
            if arr.shape != t.data.shape:
                raise DataError(
                    f"parameter {name} shape {arr.shape} != expected {t.data.shape}")
            t.data = arr
            t.zero_grad()


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _embed(points, weights, start_t):
    cfg = weights.config
    if cfg.embed_hidden:
        pts = Tensor(np.asarray(points, dtype=cfg.np_dtype))
        hidden = ad.relu(ad.add(ad.matmul(pts, weights.registry["embed/w0"]),
                                weights.registry["embed/b0"]))
        emb = ad.add(ad.matmul(hidden, weights.embed.mlp_w), weights.embed.mlp_b)
        pos = weights.table.rows(start_t, points.shape[1]).astype(cfg.np_dtype)
        pos_block = Tensor(np.broadcast_to(
            pos[None], (points.shape[0],) + pos.shape).copy())
        return ad.add(emb, pos_block)
    return embedding.compose_input(points, weights.embed, weights.table,
                                   start_t=start_t, dtype=cfg.np_dtype)


def _sublayer(x, branch, norm, cfg, training, rng):
    gain, bias = norm
    return blocks.residual_sublayer(x, branch, gain, bias,
                                    dropout_rate=cfg.dropout,
                                    training=training, rng=rng)


def encode(scene, weights, config, training=False, rng=None):
    """Observation half -> latent N x T_obs x D."""
    obs = scene.observed(config.t_obs)
    if obs.shape[1] != config.t_obs:
        raise DataError(f"scene has {obs.shape[1]} frames, expected {config.t_obs}")
    acfg = config.attention_config()
    x = _embed(obs, weights, start_t=0)
    if weights.se_enc is not None:
        x = se.se_pass(x, weights.se_enc, channel_mask=scene.channel_mask)
    for layer in weights.encoder:
        attn = blocks.multi_head_attention(x, x, layer["attn"], acfg)
        x = _sublayer(x, attn, layer["attn_norm"], config, training, rng)
        x = _sublayer(x, blocks.feed_forward(x, layer["ffn"]),
                      layer["ffn_norm"], config, training, rng)
    return x


def _decode_sequence(dec_points, z, scene, weights, config, training=False, rng=None):
    """Run the decoder stack over a (possibly partial) input sequence.

    dec_points: N x t x 2 (seed token first); returns N x t x 2 outputs.
    """
    acfg = config.attention_config()
    t = dec_points.shape[1]
    x = _embed(dec_points, weights, start_t=config.t_obs)
    if weights.se_dec is not None:
        x = se.se_pass(x, weights.se_dec, channel_mask=scene.channel_mask)
    mask = blocks.causal_mask(t)
    for layer in weights.decoder:
        attn = blocks.multi_head_attention(x, x, layer["self_attn"], acfg, mask=mask)
        x = _sublayer(x, attn, layer["self_norm"], config, training, rng)
        cross = blocks.multi_head_attention(x, z, layer["cross"], acfg)
        x = _sublayer(x, cross, layer["cross_norm"], config, training, rng)
        x = _sublayer(x, blocks.feed_forward(x, layer["ffn"]),
                      layer["ffn_norm"], config, training, rng)
    out = ad.add(ad.matmul(x, weights.out_w), weights.out_b)
    if config.predict_offsets:
        # offset head: step t produces a displacement added to its input point
        out = ad.add(out, Tensor(np.asarray(dec_points, dtype=config.np_dtype)))
    return out


def decode_step(partial_outputs, z, scene, weights, config):
    """Next point for every agent given t already-decoded inputs: N x 1 x 2."""
    t = np.asarray(partial_outputs).shape[1]
    if not 1 <= t <= config.t_pred:
        raise UsageError(f"decode step {t} outside 1..{config.t_pred}")
    out = _decode_sequence(np.asarray(partial_outputs), z, scene, weights, config)
    return out.data[:, -1:, :]


def predict(scene, weights, config):
    """Autoregressive rollout: encode once, then T_pred decode steps."""
    z = encode(scene, weights, config, training=False)
    seed = scene.observed(config.t_obs)[:, -1:, :].astype(config.np_dtype)
    buf = seed
    outputs = []
    for _ in range(config.t_pred):
        nxt = decode_step(buf, z, scene, weights, config)
        outputs.append(nxt)
        buf = np.concatenate([buf, nxt], axis=1)
    return np.concatenate(outputs, axis=1)


def teacher_forced_forward(scene, weights, config, training=True, rng=None):
    """Single parallel decoder pass on the ground-truth future shifted right.

    Requires the full T_obs + T_pred window; output is a Tensor aligned with
    the T_pred ground-truth frames.
    """
    if scene.n_frames != config.t_obs + config.t_pred:
        raise DataError(
            f"scene has {scene.n_frames} frames, expected {config.t_obs + config.t_pred}")
    z = encode(scene, weights, config, training=training, rng=rng)
    obs = scene.observed(config.t_obs)
    future = scene.future(config.t_obs)
    dec_in = np.concatenate([obs[:, -1:, :], future[:, :-1, :]], axis=1)
    return _decode_sequence(dec_in.astype(config.np_dtype), z, scene, weights,
                            config, training=training, rng=rng)
