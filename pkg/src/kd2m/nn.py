"""A minimal float64 MLP engine with explicit forward traces.

Networks are lists of affine layers ``a_{l+1} = act(a_l @ W_l + b_l)`` with
the activation on hidden layers only. :func:`backward` takes an arbitrary
output cotangent, so the distillation gradient on the features can be fed
straight into the encoder.

Parameters are initialized from a Philox-4x64 counter-based generator
(``numpy.random.Philox``), keyed by ``SeedSequence([seed, role])``.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError, ShapeError, TraceMismatchError

ACTIVATIONS = ("relu", "tanh")
ROLES = ("encoder", "head")
MODEL_FORMAT = "kd2m-mlp/1"


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"
    role: str = "encoder"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ConfigError(f"layer_sizes needs >= 2 positive entries, got {list(self.layer_sizes)}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.role not in ROLES:
            raise ConfigError(f"role must be one of {ROLES}, got {self.role!r}")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation, "role": self.role}


@dataclass
class MlpParams:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int | None = None

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    def zeros_like(self) -> "MlpParams":
        return MlpParams(self.spec, [np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases], self.seed)

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def equals(self, other: "MlpParams") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(x, y) for x, y in zip(self.arrays(), other.arrays()))


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.post[-1]


def _rng(seed: int, role: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), ROLES.index(role)])))


def init_mlp(spec: MlpSpec, seed: int) -> MlpParams:
    """He-uniform (relu) or Glorot-uniform (tanh) weights, zero biases."""
    rng = _rng(seed, spec.role)
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        if spec.activation == "relu":
            bound = math.sqrt(6.0 / fan_in)
        else:
            bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(spec, weights, biases, seed)


def _act(name, x):
    return np.maximum(x, 0.0) if name == "relu" else np.tanh(x)


def _act_grad(name, pre, post):
    return (pre > 0.0).astype(np.float64) if name == "relu" else 1.0 - post**2


def forward(params: MlpParams, X) -> ForwardTrace:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != params.spec.n_in:
        raise ShapeError(f"input width {X.shape[1]} does not match network input {params.spec.n_in}")
    pre, post = [], []
    a = X
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ W + b
        a = z if l == last else _act(params.spec.activation, z)
        pre.append(z)
        post.append(a)
    return ForwardTrace(X, pre, post)


def backward(params: MlpParams, trace: ForwardTrace, d_out) -> tuple[MlpParams, np.ndarray]:
    """Reverse-mode gradients of ``sum(output * d_out)``.

    Returns the parameter gradients (as an :class:`MlpParams`) and the
    gradient with respect to the network input.
    """
    d_out = np.asarray(d_out, dtype=np.float64)
    n_layers = len(params.weights)
    if len(trace.pre) != n_layers or any(
            z.shape[1] != W.shape[1] for z, W in zip(trace.pre, params.weights)):
        raise TraceMismatchError("trace was not produced by these parameters")
    if d_out.shape != trace.output.shape:
        raise ShapeError(f"d_out shape {d_out.shape} does not match output {trace.output.shape}")
    grads = params.zeros_like()
    delta = d_out
    for l in range(n_layers - 1, -1, -1):
        a_prev = trace.inputs if l == 0 else trace.post[l - 1]
        grads.weights[l] = a_prev.T @ delta
        grads.biases[l] = delta.sum(axis=0)
        delta = delta @ params.weights[l].T
        if l > 0:
            delta = delta * _act_grad(params.spec.activation, trace.pre[l - 1], trace.post[l - 1])
    return grads, delta


def softmax_cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood of the true class and its logit gradient."""
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if labels.shape != (n,):
        raise ShapeError("one label per row required")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ShapeError("label out of range")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_p = shifted - log_z[:, None]
    loss = -float(np.mean(log_p[np.arange(n), labels]))
    d = np.exp(log_p)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def sgd_momentum_step(params: MlpParams, grads: MlpParams, velocity: MlpParams | None,
                      lr: float, momentum: float) -> tuple[MlpParams, MlpParams]:
    """Classical momentum: ``v <- momentum * v + g``; ``p <- p - lr * v``."""
    if velocity is None:
        velocity = params.zeros_like()
    new_v = params.zeros_like()
    new_p = params.copy()
    for src, dst in ((velocity.weights, new_v.weights), (velocity.biases, new_v.biases)):
        for i in range(len(src)):
            dst[i] = momentum * src[i]
    for i in range(len(params.weights)):
        new_v.weights[i] += grads.weights[i]
        new_v.biases[i] += grads.biases[i]
        new_p.weights[i] = params.weights[i] - lr * new_v.weights[i]
        new_p.biases[i] = params.biases[i] - lr * new_v.biases[i]
    return new_p, new_v


def cosine_lr(lr0: float, lr_min: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class MlpModel:
    """Encoder ``g`` (inputs to features) followed by a classifier head ``h``."""

    encoder: MlpParams
    head: MlpParams
    seed: int | None = None
    training_meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.encoder.spec.n_out != self.head.spec.n_in:
            raise ConfigError(
                f"encoder output {self.encoder.spec.n_out} does not match head input {self.head.spec.n_in}")

    @property
    def latent_dim(self) -> int:
        return self.encoder.spec.n_out

    @property
    def n_classes(self) -> int:
        return self.head.spec.n_out

    def features(self, X) -> np.ndarray:
        return forward(self.encoder, X).output

    def logits(self, X) -> np.ndarray:
        return forward(self.head, self.features(X)).output

    def copy(self) -> "MlpModel":
        return MlpModel(self.encoder.copy(), self.head.copy(), self.seed, json.loads(json.dumps(self.training_meta)))

    def equals(self, other: "MlpModel") -> bool:
        return self.encoder.equals(other.encoder) and self.head.equals(other.head)


def init_model(encoder_spec: MlpSpec, head_spec: MlpSpec, seed: int) -> MlpModel:
    return MlpModel(init_mlp(encoder_spec, seed), init_mlp(head_spec, seed), seed)


def _params_to_dict(p: MlpParams) -> dict:
    return {
        "spec": p.spec.to_dict(),
        "weights": [w.tolist() for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
    }


def _params_from_dict(d: dict, role: str, seed) -> MlpParams:
    spec = MlpSpec(tuple(d["spec"]["layer_sizes"]), d["spec"]["activation"], d["spec"].get("role", role))
    weights = [np.array(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(d["weights"], spec.layer_sizes[:-1], spec.layer_sizes[1:])]
    biases = [np.array(b, dtype=np.float64).reshape(n) for b, n in zip(d["biases"], spec.layer_sizes[1:])]
    if len(weights) != len(spec.layer_sizes) - 1 or len(biases) != len(weights):
        raise ParseError(f"{role}: layer count does not match spec")
    if not all(np.all(np.isfinite(a)) for a in weights + biases):
        raise ParseError(f"{role}: non-finite parameter")
    return MlpParams(spec, weights, biases, seed)


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "seed": model.seed,
        "encoder": _params_to_dict(model.encoder),
        "head": _params_to_dict(model.head),
        "training_meta": model.training_meta,
    }


def model_from_dict(d: dict) -> MlpModel:
    try:
        if d.get("format") != MODEL_FORMAT:
            raise ParseError(f"unsupported model format {d.get('format')!r}")
        seed = d.get("seed")
        return MlpModel(_params_from_dict(d["encoder"], "encoder", seed),
                        _params_from_dict(d["head"], "head", seed), seed, d.get("training_meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"malformed model: {exc}") from exc


def save_model(model: MlpModel, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1) + "\n")


def load_model(path) -> MlpModel:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from exc
    return model_from_dict(d)
