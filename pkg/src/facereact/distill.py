"""Teacher-student reaction distillation.

A three-layer fully connected network imitates the PCA responder on
half-length (30-frame) windows.  Layer 1 compresses the flattened input to
the teacher's retained rank k*, layer 2 keeps that width, and the
improvisation noise sqrt(lambda) * eps enters at the layer-2 bottleneck,
exactly where the teacher perturbs its coefficients.  Layer 3 expands back
to a 30-frame keypoint block.

During target generation the teacher's sampled eps is recorded per window
and fed to the student's bottleneck, which makes the regression
well-posed; at inference eps is freshly sampled.  Training is plain
mini-batch gradient descent (optional momentum) with analytic gradients,
deterministic under the configured seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from .core import ExpressionSequence, flatten, unflatten
from .exceptions import ArtifactFormatError, DimensionError, FitError, TrainingError
from .pca import ExpressionSpacePCA
from .validation import as_rng, check_sequence

SNN_MAGIC = b"SNN1"
_SNN_HEADER = struct.Struct("<4sIIIB")  # magic, n_kp, T, k*, activation

STUDENT_WINDOW = 30

_ACTIVATION_CODES = {"identity": 0, "tanh": 1}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_CODES.items()}


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else z


def _act_grad(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


@dataclass
class StudentNetwork:
    """Weights of the distilled responder; immutable by convention after training."""

    W1: np.ndarray  # (k*, D)
    b1: np.ndarray  # (k*,)
    W2: np.ndarray  # (k*, k*)
    b2: np.ndarray  # (k*,)
    W3: np.ndarray  # (D, k*)
    b3: np.ndarray  # (D,)
    activation: str
    teacher_eigenvalues: np.ndarray  # (k*,)
    n_kp: int
    window: int = STUDENT_WINDOW

    def __post_init__(self):
        if self.activation not in _ACTIVATION_CODES:
            raise ValueError(f"unknown activation {self.activation!r}")
        k, d = self.W1.shape
        if (
            self.W2.shape != (k, k)
            or self.W3.shape != (d, k)
            or self.b1.shape != (k,)
            or self.b2.shape != (k,)
            or self.b3.shape != (d,)
            or self.teacher_eigenvalues.shape != (k,)
        ):
            raise DimensionError("inconsistent weight shapes")
        if d != self.n_kp * self.window * 3:
            raise DimensionError(
                f"input dim {d} != n_kp*window*3 = {self.n_kp * self.window * 3}"
            )
        for arr in (self.W1, self.b1, self.W2, self.b2, self.W3, self.b3):
            if not np.all(np.isfinite(arr)):
                raise ValueError("network weights must be finite")

    @property
    def k_star(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def noise_scale(self) -> np.ndarray:
        return np.sqrt(self.teacher_eigenvalues)

    def forward(self, x: np.ndarray, eps: np.ndarray) -> np.ndarray:
        """Pure forward pass on flat vectors; eps enters at the bottleneck."""
        h1 = _act(self.activation, self.W1 @ x + self.b1)
        h2 = _act(self.activation, self.W2 @ h1 + self.b2) + self.noise_scale * eps
        return self.W3 @ h2 + self.b3

    def forward_batch(self, X: np.ndarray, Eps: np.ndarray) -> np.ndarray:
        H1 = _act(self.activation, X @ self.W1.T + self.b1)
        H2 = _act(self.activation, H1 @ self.W2.T + self.b2) + Eps * self.noise_scale
        return H2 @ self.W3.T + self.b3

    def copy(self) -> "StudentNetwork":
        return StudentNetwork(
            self.W1.copy(),
            self.b1.copy(),
            self.W2.copy(),
            self.b2.copy(),
            self.W3.copy(),
            self.b3.copy(),
            self.activation,
            self.teacher_eigenvalues.copy(),
            self.n_kp,
            self.window,
        )

    # -- persistence (SNN1, binary little-endian) --------------------------

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write(
                _SNN_HEADER.pack(
                    SNN_MAGIC,
                    self.n_kp,
                    self.window,
                    self.k_star,
                    _ACTIVATION_CODES[self.activation],
                )
            )
            for arr in (
                self.teacher_eigenvalues,
                self.W1,
                self.b1,
                self.W2,
                self.b2,
                self.W3,
                self.b3,
            ):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "StudentNetwork":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _SNN_HEADER.size or raw[:4] != SNN_MAGIC:
            raise ArtifactFormatError(f"{path}: not an SNN1 student-network file")
        magic, n_kp, window, k, act_code = _SNN_HEADER.unpack_from(raw)
        if act_code not in _ACTIVATION_NAMES:
            raise ArtifactFormatError(f"{path}: unknown activation code {act_code}")
        d = n_kp * window * 3
        sizes = [k, k * d, k, k * k, k, d * k, d]
        expected = _SNN_HEADER.size + 8 * sum(sizes)
        if len(raw) != expected:
            raise ArtifactFormatError(
                f"{path}: truncated or oversized payload "
                f"({len(raw)} bytes, expected {expected})"
            )
        offset = _SNN_HEADER.size
        arrays = []
        for size in sizes:
            arrays.append(
                np.frombuffer(raw, dtype="<f8", count=size, offset=offset).copy()
            )
            offset += 8 * size
        evals, w1, b1, w2, b2, w3, b3 = arrays
        return cls(
            W1=w1.reshape(k, d),
            b1=b1,
            W2=w2.reshape(k, k),
            b2=b2,
            W3=w3.reshape(d, k),
            b3=b3,
            activation=_ACTIVATION_NAMES[act_code],
            teacher_eigenvalues=evals,
            n_kp=int(n_kp),
            window=int(window),
        )

    def describe(self) -> dict:
        return {
            "kind": "student-network",
            "n_kp": self.n_kp,
            "window": self.window,
            "k_star": self.k_star,
            "input_dim": self.input_dim,
            "activation": self.activation,
        }


@dataclass(frozen=True)
class TrainConfig:
    """Distillation hyperparameters.  Loss is MSE over output coordinates."""

    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 16
    sigma_train: Optional[float] = None  # None -> teacher's sigma
    seed: int = 0
    momentum: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


class DistillPair(NamedTuple):
    """One training triple: student input, teacher-derived target, recorded eps."""

    input: ExpressionSequence
    target: ExpressionSequence
    eps: np.ndarray


def build_targets(
    teacher: ExpressionSpacePCA,
    windows: Sequence[ExpressionSequence],
    sigma: Optional[float] = None,
    rng=None,
    student_window: int = STUDENT_WINDOW,
) -> list[DistillPair]:
    """Run the teacher once per full-length window and record its noise draw.

    The student sees the first ``student_window`` frames of each window;
    its target is the same slice of the teacher's response.
    """
    if student_window < 1 or student_window > teacher.window_:
        raise ValueError(
            f"student_window must be in [1, {teacher.window_}], got {student_window}"
        )
    sigma = teacher.sigma if sigma is None else float(sigma)
    gen = as_rng(rng)
    pairs = []
    for seq in windows:
        check_sequence(seq, n_kp=teacher.n_kp_, n_frames=teacher.window_)
        if sigma == 0.0:
            eps = np.zeros(teacher.k_star_)
        else:
            eps = gen.normal(0.0, sigma, size=teacher.k_star_)
        noisy = teacher.coefficients(seq) + np.sqrt(teacher.eigenvalues_) * eps
        response = teacher.reconstruct(noisy, seq)
        pairs.append(
            DistillPair(
                input=ExpressionSequence(
                    seq.frames[:student_window], fps=seq.fps, label=seq.label
                ),
                target=ExpressionSequence(
                    response.frames[:student_window], fps=seq.fps
                ),
                eps=eps,
            )
        )
    return pairs


def init_network(
    input_dim: int,
    k_star: int,
    teacher_eigenvalues: np.ndarray,
    n_kp: int,
    window: int,
    activation: str = "identity",
    rng=None,
) -> StudentNetwork:
    """Uniform [-1/sqrt(fan_in), +1/sqrt(fan_in)] initialization, seeded."""
    gen = as_rng(rng)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return gen.uniform(-bound, bound, size=shape)

    return StudentNetwork(
        W1=uniform((k_star, input_dim), input_dim),
        b1=uniform((k_star,), input_dim),
        W2=uniform((k_star, k_star), k_star),
        b2=uniform((k_star,), k_star),
        W3=uniform((input_dim, k_star), k_star),
        b3=uniform((input_dim,), k_star),
        activation=activation,
        teacher_eigenvalues=np.asarray(teacher_eigenvalues, dtype=np.float64),
        n_kp=n_kp,
        window=window,
    )


def loss_and_gradients(net: StudentNetwork, X, Eps, Targets):
    """Batch MSE and analytic gradients for all six parameter blocks.

    Loss = mean over (batch * output coords) of squared error.
    """
    n, d = X.shape
    Z1 = X @ net.W1.T + net.b1
    H1 = _act(net.activation, Z1)
    Z2 = H1 @ net.W2.T + net.b2
    H2 = _act(net.activation, Z2) + Eps * net.noise_scale
    Y = H2 @ net.W3.T + net.b3

    diff = Y - Targets
    loss = float(np.mean(diff * diff))

    dY = 2.0 * diff / diff.size
    grads = {
        "W3": dY.T @ H2,
        "b3": dY.sum(axis=0),
    }
    dH2 = dY @ net.W3
    dZ2 = dH2 * _act_grad(net.activation, Z2)
    grads["W2"] = dZ2.T @ H1
    grads["b2"] = dZ2.sum(axis=0)
    dH1 = dZ2 @ net.W2
    dZ1 = dH1 * _act_grad(net.activation, Z1)
    grads["W1"] = dZ1.T @ X
    grads["b1"] = dZ1.sum(axis=0)
    return loss, grads


def pairs_to_arrays(pairs: Sequence[DistillPair]):
    X = np.stack([flatten(p.input) for p in pairs])
    T = np.stack([flatten(p.target) for p in pairs])
    E = np.stack([np.asarray(p.eps, dtype=np.float64) for p in pairs])
    return X, T, E


def sgd_train(net: StudentNetwork, X, Eps, Targets, cfg: TrainConfig):
    """Mini-batch gradient descent in place; returns per-epoch full-set loss.

    Batch order is drawn from the config seed, so runs are reproducible.
    Raises TrainingError as soon as the loss stops being finite.
    """
    n = X.shape[0]
    order_rng = np.random.default_rng(cfg.seed)
    velocity = {k: 0.0 for k in ("W1", "b1", "W2", "b2", "W3", "b3")}
    history = []
    # Overflow surfaces as a TrainingError below; suppress numpy's warning.
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(cfg.epochs):
            perm = order_rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = perm[start : start + cfg.batch_size]
                loss, grads = loss_and_gradients(net, X[idx], Eps[idx], Targets[idx])
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"training diverged (non-finite loss) at epoch {epoch}",
                        epoch=epoch,
                    )
                for name, grad in grads.items():
                    velocity[name] = (
                        cfg.momentum * velocity[name] - cfg.learning_rate * grad
                    )
                    setattr(net, name, getattr(net, name) + velocity[name])
            epoch_loss = float(np.mean((net.forward_batch(X, Eps) - Targets) ** 2))
            if not np.isfinite(epoch_loss):
                raise TrainingError(
                    f"training diverged (non-finite loss) at epoch {epoch}", epoch=epoch
                )
            history.append(epoch_loss)
    return history


def train(
    pairs: Sequence[DistillPair],
    cfg: TrainConfig,
    teacher_eigenvalues: np.ndarray,
    activation: str = "identity",
) -> tuple[StudentNetwork, list[float]]:
    """Train a fresh student on recorded teacher triples."""
    if not pairs:
        raise FitError("need at least one training pair")
    first = pairs[0].input
    net = init_network(
        input_dim=first.dim,
        k_star=len(pairs[0].eps),
        teacher_eigenvalues=teacher_eigenvalues,
        n_kp=first.n_kp,
        window=len(first),
        activation=activation,
        rng=np.random.default_rng(cfg.seed),
    )
    X, T, E = pairs_to_arrays(pairs)
    history = sgd_train(net, X, E, T, cfg)
    return net, history


def respond_nn(
    net: StudentNetwork,
    seq: ExpressionSequence,
    sigma: float = 0.0,
    rng=None,
) -> ExpressionSequence:
    """Student response to a 30-frame window; sigma=0 is deterministic."""
    check_sequence(seq, n_kp=net.n_kp, n_frames=net.window)
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        eps = np.zeros(net.k_star)
    else:
        eps = as_rng(rng).normal(0.0, sigma, size=net.k_star)
    return unflatten(net.forward(flatten(seq), eps), seq)


class StudentResponder(BaseEstimator):
    """sklearn-style facade over target generation plus network training.

    ``fit`` consumes full-length teacher windows; ``predict`` / ``respond``
    consume 30-frame windows.
    """

    def __init__(
        self,
        teacher: Optional[ExpressionSpacePCA] = None,
        learning_rate: float = 1e-3,
        epochs: int = 200,
        batch_size: int = 16,
        sigma_train: Optional[float] = None,
        seed: int = 0,
        activation: str = "identity",
        student_window: int = STUDENT_WINDOW,
    ):
        self.teacher = teacher
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.sigma_train = sigma_train
        self.seed = seed
        self.activation = activation
        self.student_window = student_window

    def fit(self, X: Sequence[ExpressionSequence], y=None):
        if self.teacher is None:
            raise FitError("a fitted teacher expression space is required")
        cfg = TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            sigma_train=self.sigma_train,
            seed=self.seed,
        )
        pairs = build_targets(
            self.teacher,
            X,
            sigma=cfg.sigma_train,
            rng=np.random.default_rng(cfg.seed),
            student_window=self.student_window,
        )
        self.network_, self.history_ = train(
            pairs, cfg, self.teacher.eigenvalues_, activation=self.activation
        )
        return self

    def predict(self, seq: ExpressionSequence) -> ExpressionSequence:
        return respond_nn(self.network_, seq, sigma=0.0)

    def respond(self, seq, sigma: float = 0.0, rng=None) -> ExpressionSequence:
        return respond_nn(self.network_, seq, sigma=sigma, rng=rng)
