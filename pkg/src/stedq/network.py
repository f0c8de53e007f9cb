"""The quality-regression network: 6 conv blocks, 2 dense layers, sigmoid head.

Block order is conv -> batchnorm (where enabled) -> ELU -> 2x2 max pool for
the six convolutional blocks, then dense -> batchnorm -> ELU -> dense ->
sigmoid.  Batch normalization covers every layer except the first conv and
the output layer.  Checkpoints are a self-describing binary container with a
trailing SHA-256 digest; a save/load round trip reproduces outputs bitwise.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import (CheckpointDigestError, CheckpointFormatError,
                     CheckpointVersionError, ConfigError, ShapeError)

MAGIC = b"STEDQ1"
FORMAT_VERSION = 1

DEFAULT_CONV_CHANNELS = (16, 32, 64, 64, 128, 128)
DEFAULT_DENSE_WIDTHS = (128, 1)


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters; parameter shapes follow from these."""

    input_size: int = 224
    conv_channels: tuple[int, ...] = DEFAULT_CONV_CHANNELS
    kernel_size: int = 3
    pool_stride: int = 2
    dense_widths: tuple[int, ...] = DEFAULT_DENSE_WIDTHS
    batchnorm_from_layer: int = 2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        object.__setattr__(self, "dense_widths", tuple(int(w) for w in self.dense_widths))
        if len(self.conv_channels) != 6:
            raise ConfigError(f"need exactly 6 conv channel counts, got {len(self.conv_channels)}")
        if len(self.dense_widths) != 2:
            raise ConfigError(f"need exactly 2 dense widths, got {len(self.dense_widths)}")
        if self.dense_widths[1] != 1:
            raise ConfigError("final dense width must be 1 (scalar quality score)")
        if any(c < 1 for c in self.conv_channels) or self.dense_widths[0] < 1:
            raise ConfigError("layer widths must be positive")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.pool_stride not in (1, 2):
            raise ConfigError(f"pool_stride must be 1 or 2, got {self.pool_stride}")
        if self.input_size < 2:
            raise ConfigError(f"input_size must be >= 2, got {self.input_size}")
        if not 1 <= self.batchnorm_from_layer <= 8:
            raise ConfigError("batchnorm_from_layer must be in 1..8")

    def spatial_trace(self) -> list[int]:
        """Spatial size after the input and after each conv block's pool."""
        sizes = [self.input_size]
        s = self.input_size
        for i in range(6):
            # 'same' conv keeps the size; pooling needs at least a 2x2 window
            if s < 2:
                raise ConfigError(f"spatial size collapsed to {s} before conv block {i + 1}")
            s = (s - 2) // self.pool_stride + 1
            sizes.append(s)
        if s < 1:
            raise ConfigError(f"spatial size collapsed to {s} after conv block 6")
        return sizes

    def flat_features(self) -> int:
        return self.conv_channels[-1] * self.spatial_trace()[-1] ** 2

    def has_batchnorm(self, layer_index: int) -> bool:
        """layer_index counts conv1..conv6 = 1..6, dense1 = 7; the output
        layer never carries batch normalization."""
        return layer_index >= self.batchnorm_from_layer


def _canonical_kv(pairs: list[tuple[str, str]]) -> str:
    return "".join(f"{k}={v}\n" for k, v in pairs)


def config_to_text(cfg: NetworkConfig) -> str:
    return _canonical_kv([
        ("input_size", str(cfg.input_size)),
        ("conv_channels", ",".join(str(c) for c in cfg.conv_channels)),
        ("kernel_size", str(cfg.kernel_size)),
        ("pool_stride", str(cfg.pool_stride)),
        ("dense_widths", ",".join(str(w) for w in cfg.dense_widths)),
        ("batchnorm_from_layer", str(cfg.batchnorm_from_layer)),
        ("seed", str(cfg.seed)),
    ])


def config_from_text(text: str) -> NetworkConfig:
    values = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        values[key] = value
    try:
        return NetworkConfig(
            input_size=int(values["input_size"]),
            conv_channels=tuple(int(c) for c in values["conv_channels"].split(",")),
            kernel_size=int(values["kernel_size"]),
            pool_stride=int(values["pool_stride"]),
            dense_widths=tuple(int(w) for w in values["dense_widths"].split(",")),
            batchnorm_from_layer=int(values["batchnorm_from_layer"]),
            seed=int(values["seed"]),
        )
    except KeyError as exc:
        raise CheckpointFormatError(f"config text missing key {exc}") from exc


class Network:
    """Parameter container plus forward/backward orchestration."""

    def __init__(self, config: NetworkConfig, parameters: dict[str, np.ndarray],
                 running_stats: dict[str, np.ndarray]):
        self.config = config
        self.parameters = parameters
        self.running_stats = running_stats

    # -- construction -------------------------------------------------------

    @classmethod
    def build(cls, config: NetworkConfig) -> "Network":
        """Initialize with fan-in-scaled uniform weights, zero biases."""
        config.spatial_trace()  # raises ConfigError on degenerate sizes
        rng = np.random.default_rng(config.seed)
        params: dict[str, np.ndarray] = {}
        running: dict[str, np.ndarray] = {}
        k = config.kernel_size

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        in_ch = 1
        for i, out_ch in enumerate(config.conv_channels, start=1):
            params[f"conv{i}.kernels"] = uniform((out_ch, in_ch, k, k), in_ch * k * k)
            params[f"conv{i}.bias"] = np.zeros(out_ch)
            if config.has_batchnorm(i):
                params[f"bn{i}.gamma"] = np.ones(out_ch)
                params[f"bn{i}.beta"] = np.zeros(out_ch)
                running[f"bn{i}.mean"] = np.zeros(out_ch)
                running[f"bn{i}.var"] = np.ones(out_ch)
            in_ch = out_ch

        n_flat = config.flat_features()
        h1 = config.dense_widths[0]
        params["dense1.weights"] = uniform((h1, n_flat), n_flat)
        params["dense1.bias"] = np.zeros(h1)
        if config.has_batchnorm(7):
            params["bn7.gamma"] = np.ones(h1)
            params["bn7.beta"] = np.zeros(h1)
            running["bn7.mean"] = np.zeros(h1)
            running["bn7.var"] = np.ones(h1)
        params["dense2.weights"] = uniform((1, h1), h1)
        params["dense2.bias"] = np.zeros(1)
        return cls(config, params, running)

    # -- forward / backward -------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 1 or x.shape[2] != s or x.shape[3] != s:
            raise ShapeError(f"expected input (batch, 1, {s}, {s}), got {x.shape}")
        return x

    def _bn_forward(self, idx: int, x, train: bool, frozen_stats: bool):
        p, r = self.parameters, self.running_stats
        use_batch_stats = train and not frozen_stats
        y, cache, new_rm, new_rv = engine.batchnorm(
            x, p[f"bn{idx}.gamma"], p[f"bn{idx}.beta"],
            r[f"bn{idx}.mean"], r[f"bn{idx}.var"], train=use_batch_stats)
        if use_batch_stats:
            r[f"bn{idx}.mean"] = new_rm
            r[f"bn{idx}.var"] = new_rv
        return y, (cache, use_batch_stats)

    def forward(self, x, train: bool = False, frozen_stats: bool = False):
        """Run the network; returns (scores, caches).

        ``train=True`` uses batch statistics for normalization and updates the
        running stats; ``frozen_stats=True`` keeps running statistics fixed
        while still recording caches (used for single-sample gradient checks).
        """
        x = self._check_input(x)
        cfg = self.config
        p = self.parameters
        k = cfg.kernel_size
        caches = {"input": x, "conv": [], "dense": []}
        record = train or frozen_stats
        for i in range(1, 7):
            conv_in = x
            cols = engine.conv2d_columns(conv_in, k, k, "same")
            x = engine.conv2d(conv_in, p[f"conv{i}.kernels"], p[f"conv{i}.bias"],
                              "same", columns=cols)
            bn_cache = None
            if cfg.has_batchnorm(i):
                x, bn_cache = self._bn_forward(i, x, train, frozen_stats)
            elu_in = x
            x = engine.elu(elu_in)
            pool_in = x
            x = engine.maxpool2d(pool_in, cfg.pool_stride)
            if record:
                caches["conv"].append((conv_in, cols, bn_cache, elu_in, pool_in))
        flat_in_shape = x.shape
        x = x.reshape(x.shape[0], -1)
        d1_in = x
        x = engine.dense(d1_in, p["dense1.weights"], p["dense1.bias"])
        bn7_cache = None
        if cfg.has_batchnorm(7):
            x, bn7_cache = self._bn_forward(7, x, train, frozen_stats)
        elu7_in = x
        x = engine.elu(elu7_in)
        d2_in = x
        x = engine.dense(d2_in, p["dense2.weights"], p["dense2.bias"])
        scores = engine.sigmoid(x[:, 0])
        if record:
            caches["dense"] = (flat_in_shape, d1_in, bn7_cache, elu7_in, d2_in)
            caches["scores"] = scores
            return scores, caches
        return scores, None

    def backward(self, caches, score_grad) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every parameter, given
        d(loss)/d(scores) from the loss function."""
        cfg = self.config
        p = self.parameters
        grads: dict[str, np.ndarray] = {}
        scores = caches["scores"]
        d = engine.sigmoid_backward(scores, np.asarray(score_grad))[:, None]

        flat_in_shape, d1_in, bn7_cache, elu7_in, d2_in = caches["dense"]
        g2 = engine.dense_backward(d2_in, p["dense2.weights"], d)
        grads["dense2.weights"] = g2.parameter_grads["weights"]
        grads["dense2.bias"] = g2.parameter_grads["bias"]
        d = engine.elu_backward(elu7_in, g2.input_grad)
        if bn7_cache is not None:
            cache, was_train = bn7_cache
            d, dg, db = engine.batchnorm_backward(cache, d, train=was_train)
            grads["bn7.gamma"] = dg
            grads["bn7.beta"] = db
        g1 = engine.dense_backward(d1_in, p["dense1.weights"], d)
        grads["dense1.weights"] = g1.parameter_grads["weights"]
        grads["dense1.bias"] = g1.parameter_grads["bias"]
        d = g1.input_grad.reshape(flat_in_shape)

        for i in range(6, 0, -1):
            conv_in, cols, bn_cache, elu_in, pool_in = caches["conv"][i - 1]
            d = engine.maxpool2d_backward(pool_in, d, cfg.pool_stride)
            d = engine.elu_backward(elu_in, d)
            if bn_cache is not None:
                cache, was_train = bn_cache
                d, dg, db = engine.batchnorm_backward(cache, d, train=was_train)
                grads[f"bn{i}.gamma"] = dg
                grads[f"bn{i}.beta"] = db
            g = engine.conv2d_backward(conv_in, p[f"conv{i}.kernels"], d, "same",
                                       columns=cols)
            grads[f"conv{i}.kernels"] = g.parameter_grads["kernels"]
            grads[f"conv{i}.bias"] = g.parameter_grads["bias"]
            d = g.input_grad
        return grads

    def predict(self, images) -> np.ndarray:
        """Quality scores in [0, 1] for normalized images (inference mode).

        Callers must normalize with the training statistics first; raw
        intensities are not detected here and simply score garbage.
        """
        scores, _ = self.forward(images, train=False)
        return scores

    def snapshot(self) -> tuple[dict[str, np.ndarray], dict[str, np.ndarray]]:
        return ({k: v.copy() for k, v in self.parameters.items()},
                {k: v.copy() for k, v in self.running_stats.items()})

    def restore(self, snapshot) -> None:
        params, running = snapshot
        self.parameters = {k: v.copy() for k, v in params.items()}
        self.running_stats = {k: v.copy() for k, v in running.items()}


def build(config: NetworkConfig) -> Network:
    return Network.build(config)


# ---------------------------------------------------------------------------
# checkpoint container
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """A network's weights, running stats, and training metadata."""

    config: NetworkConfig
    parameters: dict[str, np.ndarray]
    running_stats: dict[str, np.ndarray]
    metadata: dict[str, str] = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @classmethod
    def from_network(cls, net: Network, metadata: dict[str, str] | None = None) -> "Checkpoint":
        params, running = net.snapshot()
        return cls(net.config, params, running, dict(metadata or {}))

    def to_network(self) -> Network:
        return Network(self.config,
                       {k: v.copy() for k, v in self.parameters.items()},
                       {k: v.copy() for k, v in self.running_stats.items()})


def _write_block(buf: io.BytesIO, data: bytes) -> None:
    buf.write(struct.pack("<I", len(data)))
    buf.write(data)


def _write_tensor_map(buf: io.BytesIO, tensors: dict[str, np.ndarray]) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        _write_block(buf, name.encode("utf-8"))
        arr = np.asarray(arr, dtype=np.float64)
        buf.write(struct.pack("<B", arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.astype("<f8").tobytes(order="C"))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError("checkpoint is truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def block(self) -> bytes:
        return self.take(self.u32())


def _read_tensor_map(r: _Reader) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.block().decode("utf-8")
        ndim = r.u8()
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * 8)
        out[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return out


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", ckpt.format_version))
    _write_block(buf, config_to_text(ckpt.config).encode("utf-8"))
    meta_text = _canonical_kv(sorted(ckpt.metadata.items()))
    _write_block(buf, meta_text.encode("utf-8"))
    _write_tensor_map(buf, ckpt.parameters)
    _write_tensor_map(buf, ckpt.running_stats)
    body = buf.getvalue()
    digest = hashlib.sha256(body).digest()
    with open(path, "wb") as fh:
        fh.write(body)
        fh.write(digest)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 4 + 32:
        raise CheckpointFormatError(f"{path}: file too short to be a checkpoint")
    body, digest = raw[:-32], raw[-32:]
    if not body.startswith(MAGIC):
        raise CheckpointFormatError(f"{path}: bad magic, not a checkpoint file")
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointDigestError(f"{path}: content digest mismatch (corrupt file)")
    r = _Reader(body)
    r.take(len(MAGIC))
    version = r.u32()
    if version > FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} is newer than supported {FORMAT_VERSION}")
    config = config_from_text(r.block().decode("utf-8"))
    metadata = {}
    for line in r.block().decode("utf-8").splitlines():
        if line:
            key, _, value = line.partition("=")
            metadata[key] = value
    parameters = _read_tensor_map(r)
    running = _read_tensor_map(r)
    if r.pos != len(body):
        raise CheckpointFormatError(f"{path}: {len(body) - r.pos} trailing bytes")
    return Checkpoint(config, parameters, running, metadata, version)


def save(net: Network, path, metadata: dict[str, str] | None = None) -> Checkpoint:
    ckpt = Checkpoint.from_network(net, metadata)
    save_checkpoint(ckpt, path)
    return ckpt


def load(path) -> Network:
    return load_checkpoint(path).to_network()


def checkpoint_digest(path) -> str:
    """Hex digest stored in the checkpoint's trailer."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 32:
        raise CheckpointFormatError(f"{path}: file too short to be a checkpoint")
    return raw[-32:].hex()
