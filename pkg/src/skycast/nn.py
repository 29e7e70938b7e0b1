"""Sequence regression network with hand-derived gradients.

Layer stack: per-step Gaussian noise channels are appended to the
input, inverted dropout is applied during training, a valid 1-d
convolution over time feeds a recurrent layer whose final hidden state
drives two dense layers. Training minimizes mean absolute error with
Adam. All gradients are coded by hand and checked against central
differences; no autograd framework is involved.

Arrays are float64 throughout. Input is (batch, time, features) and
the output is one value per forecast horizon.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, DataError

_CHECKPOINT_MAGIC = b"SKNET1\n"


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters. Shapes derive from these alone."""

    n_features: int
    sequence_length: int
    n_outputs: int
    conv_filters: int = 64
    conv_kernel: int = 3
    lstm_hidden: int = 64
    dense_hidden: int = 128
    noise_channels: int = 16
    noise_scale: float = 1.0
    dropout: float = 0.2

    def __post_init__(self):
        for name in ("n_features", "sequence_length", "n_outputs", "conv_filters",
                     "conv_kernel", "lstm_hidden", "dense_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.noise_channels < 0 or self.noise_scale < 0:
            raise ConfigError("noise settings must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def conv_kernel_eff(self) -> int:
        # Valid convolution cannot span more steps than the sequence has.
        return min(self.conv_kernel, self.sequence_length)

    @property
    def conv_steps(self) -> int:
        return self.sequence_length - self.conv_kernel_eff + 1

    @property
    def input_channels(self) -> int:
        return self.n_features + self.noise_channels


class Network:
    """The model itself: parameters plus forward and backward passes."""

    def __init__(self, config: NetworkConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        c_in = config.input_channels
        k = config.conv_kernel_eff
        self.params = {}

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, shape)

        self.params["conv_w"] = uniform((k, c_in, config.conv_filters), k * c_in)
        self.params["conv_b"] = np.zeros(config.conv_filters)
        self.params["lstm_w"] = uniform(
            (config.conv_filters, 4 * config.lstm_hidden), config.conv_filters
        )
        self.params["lstm_r"] = uniform(
            (config.lstm_hidden, 4 * config.lstm_hidden), config.lstm_hidden
        )
        self.params["lstm_b"] = np.zeros(4 * config.lstm_hidden)
        # Open forget gates at the start of training.
        h = config.lstm_hidden
        self.params["lstm_b"][h : 2 * h] = 1.0
        self.params["dense1_w"] = uniform(
            (config.lstm_hidden, config.dense_hidden), config.lstm_hidden
        )
        self.params["dense1_b"] = np.zeros(config.dense_hidden)
        self.params["out_w"] = uniform(
            (config.dense_hidden, config.n_outputs), config.dense_hidden
        )
        self.params["out_b"] = np.zeros(config.n_outputs)

    @property
    def n_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy_params(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict) -> None:
        for k, v in self.params.items():
            if k not in params or params[k].shape != v.shape:
                raise ConfigError(f"parameter set does not match architecture: {k}")
        self.params = {k: np.asarray(params[k], dtype=float).copy() for k in self.params}

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        cfg = self.config
        if x.ndim != 3 or x.shape[1] != cfg.sequence_length or x.shape[2] != cfg.n_features:
            raise ConfigError(
                f"expected input (batch, {cfg.sequence_length}, {cfg.n_features}),"
                f" got {x.shape}"
            )
        return x

    def forward(self, x, noise=None, drop_mask=None, need_cache: bool = False):
        """One pass through the stack.

        ``noise`` is a (batch, time, noise_channels) draw; None means the
        noise channels are zero, the inference behaviour. ``drop_mask``
        is a pre-scaled inverted dropout mask over the augmented input.
        Returns (output, cache); cache is None unless requested.
        """
        x = self._check_input(x)
        cfg = self.config
        n = x.shape[0]
        if cfg.noise_channels:
            if noise is None:
                z = np.zeros((n, cfg.sequence_length, cfg.noise_channels))
            else:
                z = np.asarray(noise, dtype=float) * cfg.noise_scale
                if z.shape != (n, cfg.sequence_length, cfg.noise_channels):
                    raise ConfigError(f"noise shape {z.shape} does not match input")
            aug = np.concatenate([x, z], axis=2)
        else:
            aug = x
        if drop_mask is not None:
            aug = aug * drop_mask

        k, tp = cfg.conv_kernel_eff, cfg.conv_steps
        conv_w, conv_b = self.params["conv_w"], self.params["conv_b"]
        pre = np.broadcast_to(conv_b, (n, tp, cfg.conv_filters)).copy()
        for j in range(k):
            pre += aug[:, j : j + tp, :] @ conv_w[j]
        conv = np.maximum(pre, 0.0)

        h_seq, c_seq, gates = kernels.lstm_forward(
            conv, self.params["lstm_w"], self.params["lstm_r"], self.params["lstm_b"]
        )
        h_last = h_seq[:, -1, :]
        d1_pre = h_last @ self.params["dense1_w"] + self.params["dense1_b"]
        d1 = np.maximum(d1_pre, 0.0)
        out = d1 @ self.params["out_w"] + self.params["out_b"]

        if not need_cache:
            return out, None
        cache = {
            "aug": aug, "drop_mask": drop_mask, "pre": pre, "conv": conv,
            "h_seq": h_seq, "c_seq": c_seq, "gates": gates,
            "d1_pre": d1_pre, "d1": d1,
        }
        return out, cache

    def backward(self, cache: dict, d_out: np.ndarray) -> dict:
        """Gradients of a scalar loss given its gradient at the output."""
        cfg = self.config
        grads = {}
        d1 = cache["d1"]
        grads["out_w"] = d1.T @ d_out
        grads["out_b"] = d_out.sum(axis=0)
        dd1 = d_out @ self.params["out_w"].T
        dd1 *= cache["d1_pre"] > 0
        h_last = cache["h_seq"][:, -1, :]
        grads["dense1_w"] = h_last.T @ dd1
        grads["dense1_b"] = dd1.sum(axis=0)
        dh_last = dd1 @ self.params["dense1_w"].T

        dconv, grads["lstm_w"], grads["lstm_r"], grads["lstm_b"] = kernels.lstm_backward(
            cache["conv"], self.params["lstm_w"], self.params["lstm_r"],
            cache["gates"], cache["c_seq"], cache["h_seq"], dh_last,
        )
        dpre = dconv * (cache["pre"] > 0)
        grads["conv_b"] = dpre.sum(axis=(0, 1))

        aug = cache["aug"]
        k, tp = cfg.conv_kernel_eff, cfg.conv_steps
        conv_w = self.params["conv_w"]
        dw = np.zeros_like(conv_w)
        daug = np.zeros_like(aug)
        for j in range(k):
            seg = aug[:, j : j + tp, :]
            dw[j] = np.tensordot(seg, dpre, axes=([0, 1], [0, 1]))
            daug[:, j : j + tp, :] += dpre @ conv_w[j].T
        grads["conv_w"] = dw
        if cache["drop_mask"] is not None:
            daug *= cache["drop_mask"]
        grads["_input"] = daug[:, :, : cfg.n_features]
        return grads

    def predict(self, x, batch_size: int = 4096) -> np.ndarray:
        """Inference pass: zero noise, no dropout."""
        x = self._check_input(x)
        chunks = []
        for start in range(0, len(x), batch_size):
            out, _ = self.forward(x[start : start + batch_size])
            chunks.append(out)
        if not chunks:
            return np.zeros((0, self.config.n_outputs))
        return np.concatenate(chunks, axis=0)

    def save(self, path) -> None:
        """Write config and weights as one self-describing binary file."""
        names = sorted(self.params)
        header = {
            "config": asdict(self.config),
            "arrays": [
                {"name": k, "dtype": str(self.params[k].dtype),
                 "shape": list(self.params[k].shape)}
                for k in names
            ],
        }
        blob = json.dumps(header, sort_keys=True).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_CHECKPOINT_MAGIC)
            fh.write(len(blob).to_bytes(8, "little"))
            fh.write(blob)
            for k in names:
                fh.write(np.ascontiguousarray(self.params[k]).tobytes())

    @classmethod
    def load(cls, path) -> "Network":
        with open(path, "rb") as fh:
            magic = fh.read(len(_CHECKPOINT_MAGIC))
            if magic != _CHECKPOINT_MAGIC:
                raise DataError(f"{path}: not a model checkpoint")
            header_len = int.from_bytes(fh.read(8), "little")
            header = json.loads(fh.read(header_len).decode("utf-8"))
            net = cls(NetworkConfig(**header["config"]), seed=0)
            params = {}
            for meta in header["arrays"]:
                dtype = np.dtype(meta["dtype"])
                shape = tuple(meta["shape"])
                count = int(np.prod(shape)) if shape else 1
                buf = fh.read(count * dtype.itemsize)
                if len(buf) != count * dtype.itemsize:
                    raise DataError(f"{path}: truncated checkpoint")
                params[meta["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
        net.set_params(params)
        return net


class AdamOptimizer:
    """Adam with bias correction; state keyed by parameter name."""

    def __init__(self, params: dict, learning_rate: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = learning_rate
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k in params:
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be positive")


@dataclass
class TrainingResult:
    history: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_mae: float = float("inf")

    @property
    def n_epochs(self) -> int:
        return len(self.history)


def fit(
    network: Network,
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    config: TrainingConfig = TrainingConfig(),
    log_path=None,
) -> TrainingResult:
    """Minimize mean absolute error with early stopping on validation MAE.

    Shuffling, noise draws and dropout masks come from independent
    streams spawned off one seed, so a rerun reproduces training
    exactly. The network is left holding its best validation weights.
    """
    x_train = np.asarray(x_train, dtype=float)
    y_train = np.asarray(y_train, dtype=float)
    x_val = np.asarray(x_val, dtype=float)
    y_val = np.asarray(y_val, dtype=float)
    cfg = network.config
    if y_train.shape != (len(x_train), cfg.n_outputs):
        raise ConfigError("y_train shape does not match the network outputs")
    if len(x_train) == 0 or len(x_val) == 0:
        raise ConfigError("training and validation sets must be non-empty")

    root = np.random.SeedSequence(config.seed)
    shuffle_rng, noise_rng, drop_rng = (
        np.random.default_rng(s) for s in root.spawn(3)
    )
    adam = AdamOptimizer(network.params, learning_rate=config.learning_rate)
    result = TrainingResult()
    best_params = network.copy_params()
    epochs_since_best = 0
    use_noise = cfg.noise_channels > 0 and cfg.noise_scale > 0
    log = open(log_path, "w") if log_path is not None else None
    try:
        if log is not None:
            log.write("epoch\ttrain_mae\tval_mae\n")
        for epoch in range(config.max_epochs):
            order = shuffle_rng.permutation(len(x_train))
            abs_sum, n_terms = 0.0, 0
            for start in range(0, len(order), config.batch_size):
                idx = order[start : start + config.batch_size]
                xb, yb = x_train[idx], y_train[idx]
                noise = None
                if use_noise:
                    noise = noise_rng.standard_normal(
                        (len(idx), cfg.sequence_length, cfg.noise_channels)
                    )
                mask = None
                if cfg.dropout > 0:
                    shape = (len(idx), cfg.sequence_length, cfg.input_channels)
                    mask = (drop_rng.random(shape) >= cfg.dropout) / (1.0 - cfg.dropout)
                pred, cache = network.forward(xb, noise=noise, drop_mask=mask,
                                              need_cache=True)
                err = pred - yb
                abs_sum += float(np.abs(err).sum())
                n_terms += err.size
                # sign() is 0 at exact ties, the subgradient convention.
                grads = network.backward(cache, np.sign(err) / err.size)
                adam.step(network.params, grads)
            train_mae = abs_sum / n_terms
            val_mae = float(np.mean(np.abs(network.predict(x_val) - y_val)))
            result.history.append(
                {"epoch": epoch, "train_mae": train_mae, "val_mae": val_mae}
            )
            if log is not None:
                log.write(f"{epoch}\t{train_mae!r}\t{val_mae!r}\n")
                log.flush()
            if val_mae < result.best_val_mae:
                result.best_val_mae = val_mae
                result.best_epoch = epoch
                best_params = network.copy_params()
                epochs_since_best = 0
            else:
                epochs_since_best += 1
                if epochs_since_best >= config.patience:
                    break
    finally:
        if log is not None:
            log.close()
    network.set_params(best_params)
    return result


def gradient_check(
    network: Network,
    x: np.ndarray,
    y: np.ndarray,
    noise: np.ndarray = None,
    eps: float = 1e-5,
    samples_per_tensor: int = 25,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between analytic and numeric gradients.

    Uses a squared-error objective, which is smooth, so the central
    difference is trustworthy; dropout stays off and any noise draw is
    held fixed across evaluations. Returns the max over sampled entries
    of every parameter tensor.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    pred, cache = network.forward(x, noise=noise, need_cache=True)
    grads = network.backward(cache, 2.0 * (pred - y) / pred.size)

    def loss():
        out, _ = network.forward(x, noise=noise)
        return float(np.mean((out - y) ** 2))

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(network.params):
        flat = network.params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        n_pick = min(samples_per_tensor, flat.size)
        for i in rng.choice(flat.size, size=n_pick, replace=False):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss()
            flat[i] = orig - eps
            down = loss()
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            denom = max(abs(numeric) + abs(gflat[i]), 1e-8)
            worst = max(worst, abs(numeric - gflat[i]) / denom)
    return worst
