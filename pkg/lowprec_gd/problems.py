"""
Objective functions with an exact (working-precision) gradient and a
low-precision gradient built from lp_arith kernels.

Parameters are flat float64 vectors; matrix-shaped models reshape on entry.
"""

import abc
import logging
from typing import Dict, Optional, Tuple, Union

import numpy as np

from . import bounds
from .errors import EmptyDataset, InvalidInput, NonFiniteGradient
from .lp_arith import CHOP, SEQUENTIAL, Arith, LPVector
from .mnist import Dataset
from .rounding import RN, RandomStream, RoundingMode, round_fl
from .softfloat import FloatFormat

logger = logging.getLogger(__name__)

SETTING_I_DIAG = 1e-3
SETTING_I_STEPSIZE = 1e-5
SETTING_II_TARGET = 2.0**-4

# (x - 1024)^2 in binary8 under RN: x settles at 896 from k = 8 on.
STAGNATION_TARGET = 1024.0
STAGNATION_START = -5120.0
STAGNATION_STEPSIZE = 0.1875


class Problem(abc.ABC):
    """An objective GD can run on."""

    name = "problem"
    accumulate = SEQUENTIAL
    lipschitz: Optional[float] = None
    optimum: Optional[np.ndarray] = None
    f_star = 0.0
    recommended_stepsize: Optional[float] = None

    def __init__(self) -> None:
        self._quantized: Dict[FloatFormat, Dict[str, np.ndarray]] = {}

    @property
    @abc.abstractmethod
    def dimension(self) -> int:
        ...

    @abc.abstractmethod
    def initial_point(self) -> np.ndarray:
        ...

    @abc.abstractmethod
    def objective(self, x: np.ndarray) -> float:
        ...

    @abc.abstractmethod
    def exact_gradient(self, x: np.ndarray) -> np.ndarray:
        ...

    @abc.abstractmethod
    def _lp_gradient(self, x: np.ndarray, arith: Arith) -> np.ndarray:
        ...

    def gradient(
        self,
        x: LPVector,
        mode: RoundingMode,
        rng: Optional[RandomStream] = None,
        shadow: bool = False,
    ) -> Tuple[LPVector, Optional[np.ndarray]]:
        """Gradient evaluated in x's format under ``mode``.

        Returns the low-precision gradient and, when ``shadow`` is set, the
        working-precision error sigma_1 = g_hat - grad f(x).
        """
        if len(x) != self.dimension:
            raise InvalidInput(f"{self.name} expects {self.dimension} parameters, got {len(x)}")
        arith = Arith(x.fmt, mode, rng, self.accumulate)
        g = self._lp_gradient(x.values, arith)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"{self.name} produced a non-finite gradient")
        sigma1 = g - self.exact_gradient(x.values) if shadow else None
        return LPVector(g, x.fmt, check=False), sigma1

    def quantized(self, fmt: FloatFormat, key: str, data: np.ndarray) -> np.ndarray:
        """RN image of constant problem data in ``fmt``, computed once per format."""
        cache = self._quantized.setdefault(fmt, {})
        if key not in cache:
            cache[key] = np.asarray(round_fl(data, RN, fmt))
        return cache[key]

    def metrics(self, x: np.ndarray) -> Dict[str, float]:
        """Problem-specific values traced next to f (test error, distance, ...)."""
        return {}


class QuadraticProblem(Problem):
    """f(x) = 1/2 (x - x*)^T A (x - x*) with A symmetric positive semi-definite.

    A one-dimensional ``A`` is stored as the diagonal of a diagonal matrix.
    The low-precision gradient is A_hat fl(x - x*) with A_hat = RN(A); the
    exact gradient uses A itself.
    """

    name = "quadratic"

    def __init__(
        self,
        A: np.ndarray,
        x_star: np.ndarray,
        x0: Optional[np.ndarray] = None,
        stepsize: Optional[float] = None,
        name: str = "quadratic",
    ):
        super().__init__()
        A = np.asarray(A, dtype=np.float64)
        self.x_star = np.asarray(x_star, dtype=np.float64)
        n = len(self.x_star)
        self.diagonal = A.ndim == 1
        if self.diagonal:
            if A.shape != (n,):
                raise InvalidInput(f"diagonal of length {A.shape[0]} for dimension {n}")
            if np.any(A < 0.0):
                raise InvalidInput("A must be positive semi-definite")
            self.lipschitz = float(A.max())
        else:
            if A.shape != (n, n):
                raise InvalidInput(f"A of shape {A.shape} for dimension {n}")
            if not np.array_equal(A, A.T):
                raise InvalidInput("A must be symmetric")
            eigenvalues = np.linalg.eigvalsh(A)
            if eigenvalues[0] < -1e-10 * max(abs(eigenvalues[-1]), 1.0):
                raise InvalidInput("A must be positive semi-definite")
            self.lipschitz = float(eigenvalues[-1])
        self.A = A
        self.optimum = self.x_star
        self.name = name
        self._x0 = np.array(self.x_star if x0 is None else x0, dtype=np.float64)
        self.recommended_stepsize = stepsize

    @property
    def dimension(self) -> int:
        return len(self.x_star)

    def initial_point(self) -> np.ndarray:
        return self._x0.copy()

    def _apply(self, A: np.ndarray, d: np.ndarray) -> np.ndarray:
        return A * d if self.diagonal else A @ d

    def objective(self, x: np.ndarray) -> float:
        d = np.asarray(x, dtype=np.float64) - self.x_star
        return 0.5 * float(d @ self._apply(self.A, d))

    def exact_gradient(self, x: np.ndarray) -> np.ndarray:
        return self._apply(self.A, np.asarray(x, dtype=np.float64) - self.x_star)

    def _lp_gradient(self, x: np.ndarray, arith: Arith) -> np.ndarray:
        A_hat = self.quantized(arith.fmt, "A", self.A)
        x_star_hat = self.quantized(arith.fmt, "x_star", self.x_star)
        d = arith.subtract(x, x_star_hat)
        if self.diagonal:
            return arith.hadamard(A_hat, d)
        return arith.matvec(A_hat, d)

    def gradient_error_constant(self, u: float, iterate_bound: float = 0.0) -> float:
        """c for this A; dense matrices need the iterate bound M."""
        a_inf = float(np.abs(self.A).max()) if self.diagonal else float(np.abs(self.A).sum(axis=1).max())
        return bounds.gradient_error_constant(self.dimension, u, self.diagonal, a_inf, iterate_bound)

    def metrics(self, x: np.ndarray) -> Dict[str, float]:
        distance = float(np.linalg.norm(np.asarray(x) - self.x_star))
        scale = float(np.linalg.norm(self.x_star))
        return {
            "distance": distance,
            "rel_error": distance / scale if scale > 0.0 else distance,
        }


def _setting_id(setting: Union[str, int]) -> str:
    key = str(setting).strip().upper()
    aliases = {"1": "I", "2": "II", "I": "I", "II": "II"}
    if key not in aliases:
        raise InvalidInput(f"unknown quadratic setting '{setting}', expected I or II")
    return aliases[key]


def quadratic_setting(setting: Union[str, int], n: int = 1000, seed: int = 0) -> QuadraticProblem:
    """Build one of the two benchmark quadratics.

    Setting I: A = diag(1e-3, ..., 1e-3, 1), x0 = diag(A), x* = 0, t = 1e-5.
    Setting II: A = Q diag(1..n) Q^T with Q orthogonal from the QR factors
    of a seeded Gaussian matrix, every entry nonzero; x0 = [n, ..., 1],
    x* = 2^-4, t = 1/n.
    """
    if n < 2:
        raise InvalidInput(f"dimension must be at least 2, got {n}")
    setting = _setting_id(setting)
    if setting == "I":
        diag = np.full(n, SETTING_I_DIAG)
        diag[-1] = 1.0
        return QuadraticProblem(
            diag, np.zeros(n), x0=diag.copy(), stepsize=SETTING_I_STEPSIZE, name=f"setting-I-n{n}"
        )

    rng = RandomStream(seed, stream_id=n)
    eigenvalues = np.arange(1, n + 1, dtype=np.float64)
    attempt = 0
    while True:
        attempt += 1
        Q, R = np.linalg.qr(rng.normal((n, n)))
        Q = Q * np.sign(np.diag(R))
        A = (Q * eigenvalues) @ Q.T
        A = 0.5 * (A + A.T)
        if np.all(A != 0.0):
            break
        logger.debug("Setting II matrix has zero entries, regenerating (attempt %d)", attempt)
    x0 = np.arange(n, 0, -1, dtype=np.float64)
    return QuadraticProblem(
        A, np.full(n, SETTING_II_TARGET), x0=x0, stepsize=1.0 / n, name=f"setting-II-n{n}"
    )


def stagnation_example() -> QuadraticProblem:
    """f(x) = (x - 1024)^2 started at -5120 with t = 0.1875."""
    return QuadraticProblem(
        np.array([2.0]),
        np.array([STAGNATION_TARGET]),
        x0=np.array([STAGNATION_START]),
        stepsize=STAGNATION_STEPSIZE,
        name="stagnation-1d",
    )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _require(dataset: Optional[Dataset], what: str) -> Dataset:
    if dataset is None:
        raise EmptyDataset(f"no {what} dataset attached")
    dataset.require_samples()
    return dataset


class MLRProblem(Problem):
    """Softmax regression: weights (785 x classes), last row is the bias.

    f(W) = mean over samples of -log softmax(x W)_y.
    """

    name = "mlr"
    accumulate = CHOP

    def __init__(
        self,
        train: Dataset,
        test: Optional[Dataset] = None,
        classes: int = 10,
        accumulate: str = CHOP,
    ):
        super().__init__()
        self.train = _require(train, "training")
        self.test = test
        self.classes = classes
        self.accumulate = accumulate
        self._X = train.with_bias()
        self._Y = np.eye(classes)[train.labels]
        self.features = self._X.shape[1]

    @property
    def dimension(self) -> int:
        return self.features * self.classes

    def initial_point(self) -> np.ndarray:
        return np.zeros(self.dimension)

    def _weights(self, w: np.ndarray) -> np.ndarray:
        return np.asarray(w, dtype=np.float64).reshape(self.features, self.classes)

    def _probabilities(self, w: np.ndarray) -> np.ndarray:
        Z = self._X @ self._weights(w)
        Z = Z - Z.max(axis=1, keepdims=True)
        E = np.exp(Z)
        return E / E.sum(axis=1, keepdims=True)

    def objective(self, w: np.ndarray) -> float:
        Z = self._X @ self._weights(w)
        m = Z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(Z - m).sum(axis=1))
        return float(np.mean(lse - Z[np.arange(len(Z)), self.train.labels]))

    def exact_gradient(self, w: np.ndarray) -> np.ndarray:
        R = self._probabilities(w) - self._Y
        return (self._X.T @ R / len(self._X)).ravel()

    def _lp_gradient(self, w: np.ndarray, arith: Arith) -> np.ndarray:
        X = self.quantized(arith.fmt, "X", self._X)
        Z = arith.matmul(X, self._weights(w))
        Zs = arith.subtract(Z, np.broadcast_to(Z.max(axis=1, keepdims=True), Z.shape))
        E = arith.elementwise(Zs, np.exp)
        S = arith.reduce_sum(E, axis=1)
        P = arith.divide(E, S[:, None])
        R = arith.subtract(P, self._Y)
        G = arith.matmul(X.T, R)
        return arith.scale(G, 1.0 / len(X)).ravel()

    def predict(self, w: np.ndarray, dataset: Dataset) -> np.ndarray:
        return np.argmax(dataset.with_bias() @ self._weights(w), axis=1)

    def test_error(self, w: np.ndarray, dataset: Optional[Dataset] = None) -> float:
        data = _require(dataset if dataset is not None else self.test, "test")
        return float(np.mean(self.predict(w, data) != data.labels))

    def metrics(self, w: np.ndarray) -> Dict[str, float]:
        if self.test is None or len(self.test) == 0:
            return {}
        return {"test_error": self.test_error(w)}


class TwoLayerNNProblem(Problem):
    """784 -> hidden (ReLU) -> 1 (sigmoid) binary classifier with cross-entropy loss.

    Parameter layout: W1 (784 x hidden), b1 (hidden), w2 (hidden), b2 (1).
    Label 1 is ``positive_digit``; a sample is predicted positive when the
    sigmoid output is at least 0.5.
    """

    name = "nn"
    accumulate = CHOP

    def __init__(
        self,
        train: Optional[Dataset] = None,
        test: Optional[Dataset] = None,
        hidden: int = 100,
        positive_digit: int = 8,
        seed: int = 0,
        inputs: int = 784,
        accumulate: str = CHOP,
    ):
        super().__init__()
        self.train = train
        self.test = test
        self.hidden = hidden
        self.inputs = inputs
        self.positive_digit = positive_digit
        self.accumulate = accumulate
        self.seed = seed
        self._theta0 = self._glorot(seed)

    @property
    def dimension(self) -> int:
        return self.inputs * self.hidden + 2 * self.hidden + 1

    def _glorot(self, seed: int) -> np.ndarray:
        rng = RandomStream(seed, stream_id=self.hidden)
        W1 = rng.normal((self.inputs, self.hidden), np.sqrt(2.0 / (self.inputs + self.hidden)))
        w2 = rng.normal((self.hidden,), np.sqrt(2.0 / (self.hidden + 1)))
        return np.concatenate([W1.ravel(), np.zeros(self.hidden), w2, np.zeros(1)])

    def initial_point(self) -> np.ndarray:
        return self._theta0.copy()

    def unpack(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, float]:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dimension,):
            raise InvalidInput(f"expected {self.dimension} parameters, got {theta.shape}")
        cut = self.inputs * self.hidden
        W1 = theta[:cut].reshape(self.inputs, self.hidden)
        b1 = theta[cut : cut + self.hidden]
        w2 = theta[cut + self.hidden : cut + 2 * self.hidden]
        return W1, b1, w2, float(theta[-1])

    def targets(self, dataset: Dataset) -> np.ndarray:
        return (dataset.labels == self.positive_digit).astype(np.float64)

    def forward(self, theta: np.ndarray, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Working-precision forward pass: (hidden activations, output logits)."""
        W1, b1, w2, b2 = self.unpack(theta)
        H = np.maximum(X @ W1 + b1, 0.0)
        return H, H @ w2 + b2

    def objective(self, theta: np.ndarray) -> float:
        data = _require(self.train, "training")
        _, o = self.forward(theta, data.images)
        y = self.targets(data)
        return float(np.mean(np.logaddexp(0.0, o) - y * o))

    def exact_gradient(self, theta: np.ndarray) -> np.ndarray:
        data = _require(self.train, "training")
        X = data.images
        _, _, w2, _ = self.unpack(theta)
        H, o = self.forward(theta, X)
        r = (_sigmoid(o) - self.targets(data)) / len(X)
        dH = np.outer(r, w2) * (H > 0.0)
        return np.concatenate([(X.T @ dH).ravel(), dH.sum(axis=0), H.T @ r, [r.sum()]])

    def _lp_gradient(self, theta: np.ndarray, arith: Arith) -> np.ndarray:
        data = _require(self.train, "training")
        X = self.quantized(arith.fmt, "X", data.images)
        W1, b1, w2, b2 = self.unpack(theta)
        A1 = arith.add(arith.matmul(X, W1), np.broadcast_to(b1, (len(X), self.hidden)))
        H = np.maximum(A1, 0.0)
        o = arith.add(arith.matvec(H, w2), np.full(len(X), b2))
        p = arith.elementwise(o, _sigmoid)
        r = arith.subtract(p, self.targets(data))
        g_w2 = arith.matvec(H.T, r)
        g_b2 = arith.reduce_sum(r[:, None], axis=0)
        dH = np.where(A1 > 0.0, arith.round(np.outer(r, w2)), 0.0)
        g_W1 = arith.matmul(X.T, dH)
        g_b1 = arith.reduce_sum(dH, axis=0)
        g = np.concatenate([g_W1.ravel(), g_b1, g_w2, g_b2])
        return arith.scale(g, 1.0 / len(X))

    def test_error(self, theta: np.ndarray, dataset: Optional[Dataset] = None) -> float:
        data = _require(dataset if dataset is not None else self.test, "test")
        _, o = self.forward(theta, data.images)
        predicted = (_sigmoid(o) >= 0.5).astype(np.float64)
        return float(np.mean(predicted != self.targets(data)))

    def metrics(self, theta: np.ndarray) -> Dict[str, float]:
        if self.test is None or len(self.test) == 0:
            return {}
        return {"test_error": self.test_error(theta)}


def init_nn(
    seed: int,
    train: Optional[Dataset] = None,
    test: Optional[Dataset] = None,
    hidden: int = 100,
    accumulate: str = CHOP,
) -> TwoLayerNNProblem:
    """Two-layer network with Xavier (Glorot normal) weights and zero biases."""
    return TwoLayerNNProblem(train, test, hidden=hidden, seed=seed, accumulate=accumulate)


def gradient(
    problem: Problem,
    x: LPVector,
    mode: RoundingMode,
    rng: Optional[RandomStream] = None,
    shadow: bool = False,
) -> Tuple[LPVector, Optional[np.ndarray]]:
    return problem.gradient(x, mode, rng, shadow)


def test_error(problem: Problem, params: np.ndarray, dataset: Dataset) -> float:
    """Misclassification rate of ``params`` on ``dataset``."""
    if not isinstance(problem, (MLRProblem, TwoLayerNNProblem)):
        raise InvalidInput(f"{problem.name} is not a classifier")
    return problem.test_error(params, dataset)


# pytest would otherwise collect the module-level helper as a test
test_error.__test__ = False  # type: ignore[attr-defined]
