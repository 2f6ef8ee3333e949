"""3D convolutional variational autoencoder over 24 x 24 x L shards.

Encoder: strided 3-D conv stages with leaky-ReLU, flattened into two linear
heads for the latent mean and log-variance. Decoder: linear projection back
to the deepest feature map, then transposed convolutions to one channel of
per-energy logits. Spectra are probability vectors; the loss is the summed
per-spectrum cross-entropy plus beta times the Gaussian KL term.
"""
from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ndtensor as nd
from .config import substream
from .datacube import Datacube, Shard, extract_shards, normalize_spectra, recombine
from .errors import ContractViolation, DimensionError, FormatError, TrainingDiverged
from .ndtensor import Tensor

log = logging.getLogger(__name__)

LOGVAR_MIN, LOGVAR_MAX = -30.0, 10.0


@dataclass(frozen=True)
class ModelConfig:
    shard: int = 24
    L: int = 640
    channels: tuple[int, ...] = (16, 32, 64)
    kernel: tuple[int, int, int] = (3, 3, 5)
    stride: tuple[int, int, int] = (2, 2, 2)
    latent_dim: int = 40
    slope: float = 0.1
    channel_start: int = 0  # first cube channel fed to the model

    @property
    def padding(self) -> tuple[int, int, int]:
        return tuple(k // 2 for k in self.kernel)

    def stage_extents(self) -> list[tuple[int, int, int]]:
        """(x, y, energy) extents entering each encoder stage, plus the bottleneck."""
        ext = [(self.shard, self.shard, self.L)]
        for _ in self.channels:
            ext.append(tuple(nd.conv_output_extent(n, k, s, p) for n, k, s, p in
                             zip(ext[-1], self.kernel, self.stride, self.padding)))
        return ext

    @property
    def flat_features(self) -> int:
        return self.channels[-1] * math.prod(self.stage_extents()[-1])


@dataclass
class TrainConfig:
    beta: float = 1.2
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    kl_warmup_epochs: int = 0  # 0 = fixed beta from the first step

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size >= 1 and epochs >= 0 required")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def values(self) -> list[Tensor]:
        return list(self.tensors.values())

    @property
    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: Tensor(t.data.copy(), t.requires_grad, k)
                                         for k, t in self.tensors.items()})

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


@dataclass
class LatentCode:
    mu: np.ndarray
    logvar: np.ndarray


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """He-style uniform fan-in initialization, zero biases."""
    rng = substream(seed, "init")
    kvol = math.prod(config.kernel)
    chans = (1,) + tuple(config.channels)
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(len(config.channels)):
        shapes[f"enc{i}.w"] = (chans[i + 1], chans[i]) + config.kernel
        shapes[f"enc{i}.b"] = (chans[i + 1],)
    F, J = config.flat_features, config.latent_dim
    shapes.update({"mu.w": (J, F), "mu.b": (J,), "logvar.w": (J, F), "logvar.b": (J,),
                   "dec_in.w": (F, J), "dec_in.b": (F,)})
    for i in reversed(range(len(config.channels))):
        # transposed-conv kernels are (in, out, ...) = the mirrored encoder stage
        shapes[f"dec{i}.w"] = (chans[i + 1], chans[i]) + config.kernel
        shapes[f"dec{i}.b"] = (chans[i],)
    tensors = {}
    for name, shape in shapes.items():
        if name.endswith(".b"):
            data = np.zeros(shape)
        else:
            if name.startswith("dec") and name != "dec_in.w":
                fan_in = shape[0] * kvol / math.prod(config.stride)
            elif len(shape) == 5:
                fan_in = shape[1] * kvol
            else:
                fan_in = shape[1]
            bound = math.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    # start the posterior near the prior: unit variance, small means
    tensors["logvar.w"].data *= 0.01
    tensors["mu.w"].data *= 0.1
    return ModelParams(config, tensors)


def _as_batch(shards, config: ModelConfig) -> np.ndarray:
    """Stack shards into (B, size, size, L) and check the shape against the model."""
    if isinstance(shards, Shard):
        shards = [shards]
    if isinstance(shards, np.ndarray):
        arr = shards[None] if shards.ndim == 3 else shards
    else:
        arr = np.stack([s.block if isinstance(s, Shard) else np.asarray(s) for s in shards])
    want = (config.shard, config.shard, config.L)
    if arr.ndim != 4 or arr.shape[1:] != want:
        raise DimensionError(f"shard shape {arr.shape[1:]} does not match model input {want}")
    return arr.astype(np.float64, copy=False)


def _encode_t(x: np.ndarray, params: ModelParams) -> tuple[Tensor, Tensor]:
    c = params.config
    # normalized spectra average 1/L per channel; rescale to unit mean
    h = Tensor(x[:, None] * c.L)
    for i in range(len(c.channels)):
        h = nd.leaky_relu(nd.conv3d(h, params[f"enc{i}.w"], c.stride, c.padding,
                                    bias=params[f"enc{i}.b"]), c.slope)
    flat = nd.reshape(h, (x.shape[0], c.flat_features))
    mu = nd.linear(flat, params["mu.w"], params["mu.b"])
    logvar = nd.clip(nd.linear(flat, params["logvar.w"], params["logvar.b"]), LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def _decode_t(z: Tensor, params: ModelParams) -> Tensor:
    c = params.config
    ext = c.stage_extents()
    B = z.shape[0]
    h = nd.leaky_relu(nd.linear(z, params["dec_in.w"], params["dec_in.b"]), c.slope)
    h = nd.reshape(h, (B, c.channels[-1]) + ext[-1])
    for i in reversed(range(len(c.channels))):
        h = nd.conv3d_transpose(h, params[f"dec{i}.w"], c.stride, c.padding,
                                output_shape=ext[i], bias=params[f"dec{i}.b"])
        if i > 0:
            h = nd.leaky_relu(h, c.slope)
    # (B, 1, X, Y, L) -> (B, X, Y, L)
    return nd.reshape(h, (B,) + ext[0])


def _reparam_t(mu: Tensor, logvar: Tensor, eps: np.ndarray) -> Tensor:
    return mu + nd.exp(logvar * 0.5) * Tensor(eps)


def encode(shard, params: ModelParams) -> LatentCode:
    """Posterior mean and log-variance for one shard, or a batch of them."""
    x = _as_batch(shard, params.config)
    mu, logvar = _encode_t(x, params)
    single = isinstance(shard, Shard) or (isinstance(shard, np.ndarray) and shard.ndim == 3)
    if single:
        return LatentCode(mu.data[0].copy(), logvar.data[0].copy())
    return LatentCode(mu.data.copy(), logvar.data.copy())


def reparameterize(code: LatentCode, rng: np.random.Generator | None = None,
                   eps: np.ndarray | None = None) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I)."""
    if eps is None:
        eps = (rng or np.random.default_rng()).standard_normal(np.shape(code.mu))
    logvar = np.clip(code.logvar, LOGVAR_MIN, LOGVAR_MAX)
    return code.mu + np.exp(0.5 * logvar) * eps


def decode(z: np.ndarray, params: ModelParams) -> np.ndarray:
    """Raw per-energy logits, (size, size, L) per latent vector."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if z.shape[-1] != params.config.latent_dim:
        raise DimensionError(f"latent vector has {z.shape[-1]} dims, model expects "
                             f"{params.config.latent_dim}")
    out = _decode_t(Tensor(np.atleast_2d(z)), params).data
    return out[0] if single else out


@dataclass
class LossTerms:
    total: Tensor
    ce: Tensor
    kl: Tensor

    def floats(self) -> tuple[float, float, float]:
        return float(self.total.data), float(self.ce.data), float(self.kl.data)


def loss_total(shards, params: ModelParams, beta: float = 1.2,
               rng: np.random.Generator | None = None, eps: np.ndarray | None = None) -> LossTerms:
    """CE summed over each shard's spectra (batch mean) + beta * KL (batch mean).

    Pass ``eps`` to freeze the reparameterization noise.
    """
    x = _as_batch(shards, params.config)
    sums = x.sum(axis=-1)
    if np.any(x < 0) or np.max(np.abs(sums - 1.0)) > 1e-6:
        raise ContractViolation("loss_total needs per-spectrum normalized shards")
    B = x.shape[0]
    mu, logvar = _encode_t(x, params)
    if eps is None:
        eps = (rng or np.random.default_rng()).standard_normal(mu.shape)
    z = _reparam_t(mu, logvar, eps)
    logits = _decode_t(z, params)
    ce = nd.cross_entropy(x, logits) * (1.0 / B)
    kl = nd.kl_standard_normal(mu, logvar)
    return LossTerms(ce + kl * float(beta), ce, kl)


class Adam:
    def __init__(self, params: list[Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochStats:
    epoch: int
    mean_total: float
    mean_ce: float
    mean_kl: float


def train(bulk_shards, config: TrainConfig, model_config: ModelConfig | None = None,
          params: ModelParams | None = None, progress=None) -> tuple[ModelParams, list[EpochStats]]:
    """Fit the VAE to normalized bulk shards with Adam.

    Deterministic per ``config.seed``. ``progress`` (optional) is called with
    each EpochStats as epochs finish.
    """
    if params is None:
        if model_config is None:
            raise ValueError("need a model_config or initial params")
        params = init_params(model_config, config.seed)
    else:
        params = params.copy()
    data = _as_batch(list(bulk_shards) if not isinstance(bulk_shards, np.ndarray) else bulk_shards,
                     params.config)
    if len(data) == 0:
        raise ValueError("training needs at least one shard")
    if np.max(np.abs(data.sum(axis=-1) - 1.0)) > 1e-6:
        raise ContractViolation("training shards must be normalized per spectrum")
    rng = substream(config.seed, "train")
    opt = Adam(params.values(), config.learning_rate, config.adam_beta1, config.adam_beta2,
               config.adam_eps)
    history: list[EpochStats] = []
    n = len(data)
    for epoch in range(config.epochs):
        beta = config.beta
        if config.kl_warmup_epochs > 0:
            beta *= min(1.0, (epoch + 1) / config.kl_warmup_epochs)
        order = rng.permutation(n)
        totals = np.zeros(3)
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            params.zero_grad()
            eps = rng.standard_normal((len(idx), params.config.latent_dim))
            with nd.Tape() as tape:
                terms = loss_total(data[idx], params, beta, eps=eps)
            values = terms.floats()
            for name, v in zip(("total", "ce", "kl"), values):
                if not math.isfinite(v):
                    raise TrainingDiverged(epoch, b, name)
            tape.backward(terms.total)
            opt.step()
            totals += np.array(values) * len(idx)
        stats = EpochStats(epoch, *(totals / n))
        history.append(stats)
        log.info("epoch %d total %.4f ce %.4f kl %.4f", epoch, *(totals / n))
        if progress is not None:
            progress(stats)
    params.zero_grad()
    return params, history


def softmax_np(logits: np.ndarray) -> np.ndarray:
    return nd.softmax_energy(Tensor(logits)).data


def model_input(cube: Datacube, config: ModelConfig) -> Datacube:
    """Crop the cube to the model's channels and normalize each spectrum."""
    from .datacube import crop_energy

    start, stop = config.channel_start, config.channel_start + config.L
    if stop > cube.channels:
        raise DimensionError(f"model reads channels [{start}, {stop}) but cube has {cube.channels}")
    if start == 0 and stop == cube.channels and cube.normalized:
        return cube
    return normalize_spectra(crop_energy(cube, start, stop))


def reconstruct_cube(cube: Datacube, params: ModelParams, stride: int | None = None,
                     batch_size: int = 8) -> Datacube:
    """Shard, encode to the posterior mean, decode, softmax and recombine.

    The result covers the model's channel range with unit-sum spectra.
    """
    c = params.config
    cube_n = model_input(cube, c)
    shards = extract_shards(cube_n, stride or c.shard, c.shard)
    out: list[Shard] = []
    for start in range(0, len(shards), batch_size):
        chunk = shards[start:start + batch_size]
        mu, _ = _encode_t(_as_batch(chunk, c), params)
        probs = softmax_np(_decode_t(mu, params).data)
        out += [Shard(s.origin, p, s.padded) for s, p in zip(chunk, probs)]
    rec = recombine(out, cube.width, cube.height, cube_n.axis, normalized=True)
    # averaging overlapping shards keeps unit sums up to rounding
    rec.intensities /= rec.intensities.sum(axis=2, keepdims=True)
    return rec


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"CVW1"


def _config_ints(c: ModelConfig) -> list[int]:
    return [c.shard, c.L, len(c.channels), *c.channels, *c.kernel, *c.stride, c.latent_dim,
            c.channel_start]


def dumps_params(params: ModelParams, beta: float = 1.2) -> bytes:
    c = params.config
    ints = _config_ints(c)
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<I", len(ints)))
    buf.write(struct.pack(f"<{len(ints)}I", *ints))
    buf.write(struct.pack("<ddI", float(beta), float(c.slope), c.latent_dim))
    buf.write(struct.pack("<I", len(params.tensors)))
    for t in params.tensors.values():
        buf.write(struct.pack("<I", t.data.ndim))
        buf.write(struct.pack(f"<{t.data.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    return buf.getvalue()


def loads_params(blob: bytes) -> tuple[ModelParams, float]:
    view = memoryview(blob)
    pos = 0

    def take(fmt: str):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(view):
            raise FormatError("truncated checkpoint", pos)
        vals = struct.unpack_from(fmt, view, pos)
        pos += size
        return vals

    if bytes(view[:4]) != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {bytes(view[:4])!r}", 0)
    pos = 4
    (n_ints,) = take("<I")
    ints = take(f"<{n_ints}I")
    beta, slope, J = take("<ddI")
    shard, L, nst = ints[:3]
    chans = tuple(ints[3:3 + nst])
    kernel, stride = tuple(ints[3 + nst:6 + nst]), tuple(ints[6 + nst:9 + nst])
    latent, channel_start = ints[9 + nst], ints[10 + nst]
    if latent != J:
        raise FormatError("latent dimension disagrees between config block and header", 4)
    config = ModelConfig(shard, L, chans, kernel, stride, latent, slope, channel_start)
    expected = init_params(config, 0)
    (n_t,) = take("<I")
    if n_t != len(expected.tensors):
        raise FormatError(f"checkpoint holds {n_t} tensors, architecture needs "
                          f"{len(expected.tensors)}", pos)
    tensors = {}
    for name, ref in expected.tensors.items():
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        if tuple(shape) != ref.shape:
            raise FormatError(f"tensor {name} has shape {shape}, expected {ref.shape}", pos)
        count = math.prod(shape)
        if pos + 8 * count > len(view):
            raise FormatError(f"truncated tensor {name}", pos)
        data = np.frombuffer(view, dtype="<f8", count=count, offset=pos).reshape(shape).copy()
        pos += 8 * count
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    if pos != len(view):
        raise FormatError("trailing bytes after checkpoint", pos)
    return ModelParams(config, tensors), beta


def save_params(params: ModelParams, path, beta: float = 1.2) -> None:
    Path(path).write_bytes(dumps_params(params, beta))


def load_params(path) -> tuple[ModelParams, float]:
    return loads_params(Path(path).read_bytes())


def write_history_csv(history: list[EpochStats], path) -> None:
    lines = ["epoch,mean_total,mean_ce,mean_kl"]
    lines += [f"{h.epoch},{h.mean_total!r},{h.mean_ce!r},{h.mean_kl!r}" for h in history]
    Path(path).write_text("\n".join(lines) + "\n")
