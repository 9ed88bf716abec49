"""Small parametric feature maps with exact parameter gradients.

Three architectures are supported:

- ``precomputed``: identity map, no parameters.
- ``linear``: ``A x + b``.
- ``mlp1``: ``A2 relu(A1 x + b1) + b2``.

Parameters live in a single flat vector ``theta`` laid out as the weight
matrices (row-major) followed by their biases, layer by layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tdadapt.errors import ConfigError, ShapeError

ARCHITECTURES = ("precomputed", "linear", "mlp1")
ARCH_TAGS = {name: i for i, name in enumerate(ARCHITECTURES)}

DEFAULT_HIDDEN = 32


def param_count(arch: str, d_in: int, d_out: int, d_hidden: int = 0) -> int:
    if arch == "precomputed":
        return 0
    if arch == "linear":
        return d_out * d_in + d_out
    if arch == "mlp1":
        return d_hidden * d_in + d_hidden + d_out * d_hidden + d_out
    raise ConfigError(f"unknown architecture {arch!r}")


@dataclass(frozen=True, eq=False)
class FeatureFunction:
    """Feature map ``x -> Phi_theta(x)``; immutable, use :meth:`with_theta` to update."""

    arch: str
    d_in: int
    d_out: int
    d_hidden: int = 0
    theta: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ConfigError(f"unknown architecture {self.arch!r}")
        if self.d_in < 1 or self.d_out < 1:
            raise ConfigError("feature dimensions must be positive")
        if self.arch == "precomputed" and self.d_out != self.d_in:
            raise ConfigError("precomputed features require d_out == d_in")
        if self.arch == "mlp1" and self.d_hidden < 1:
            raise ConfigError("mlp1 requires d_hidden >= 1")
        if self.arch != "mlp1" and self.d_hidden != 0:
            raise ConfigError(f"d_hidden is only meaningful for mlp1, got {self.d_hidden}")
        theta = np.array(self.theta, dtype=np.float64).ravel()
        expected = param_count(self.arch, self.d_in, self.d_out, self.d_hidden)
        if theta.size != expected:
            raise ShapeError(f"{self.arch} expects {expected} parameters, got {theta.size}")
        if not np.all(np.isfinite(theta)):
            raise ConfigError("feature parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def __eq__(self, other):
        if not isinstance(other, FeatureFunction):
            return NotImplemented
        return (
            self.descriptor == other.descriptor
            and self.theta.tobytes() == other.theta.tobytes()
        )

    @property
    def descriptor(self) -> tuple[str, int, int, int]:
        return (self.arch, self.d_in, self.d_hidden, self.d_out)

    @property
    def n_params(self) -> int:
        return self.theta.size

    def with_theta(self, theta: np.ndarray) -> FeatureFunction:
        return FeatureFunction(self.arch, self.d_in, self.d_out, self.d_hidden, theta)

    def unpack(self) -> list[np.ndarray]:
        """Split ``theta`` into ``[A, b]`` or ``[A1, b1, A2, b2]``."""
        t = self.theta
        if self.arch == "precomputed":
            return []
        if self.arch == "linear":
            n = self.d_out * self.d_in
            return [t[:n].reshape(self.d_out, self.d_in), t[n:]]
        h, i, o = self.d_hidden, self.d_in, self.d_out
        sizes = [h * i, h, o * h, o]
        a1, b1, a2, b2 = np.split(t, np.cumsum(sizes)[:-1])
        return [a1.reshape(h, i), b1, a2.reshape(o, h), b2]

    def _check_input(self, x: np.ndarray) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.ndim != 2 or X.shape[1] != self.d_in:
            raise ShapeError(f"expected input of width {self.d_in}, got shape {x.shape}")
        return X, single

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate on one point (1-D) or a batch of rows (2-D)."""
        X, single = self._check_input(x)
        if self.arch == "precomputed":
            out = X.copy()
        elif self.arch == "linear":
            A, b = self.unpack()
            out = X @ A.T + b
        else:
            A1, b1, A2, b2 = self.unpack()
            out = np.maximum(X @ A1.T + b1, 0.0) @ A2.T + b2
        return out[0] if single else out

    def vjp(self, x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
        """Vector-Jacobian product ``sum_r upstream[r] . dPhi(x[r])/dtheta``.

        ``upstream`` has the same leading shape as the output of ``forward(x)``.
        relu is given subgradient 0 at exactly 0.
        """
        X, single = self._check_input(x)
        G = np.asarray(upstream, dtype=np.float64)
        G = G[None, :] if single else G
        if G.shape != (X.shape[0], self.d_out):
            raise ShapeError(f"upstream shape {G.shape} does not match output {(X.shape[0], self.d_out)}")
        if self.arch == "precomputed":
            return np.zeros(0)
        if self.arch == "linear":
            return np.concatenate([(G.T @ X).ravel(), G.sum(axis=0)])
        A1, b1, A2, _ = self.unpack()
        Z = X @ A1.T + b1
        H = np.maximum(Z, 0.0)
        dZ = (G @ A2) * (Z > 0.0)
        return np.concatenate([
            (dZ.T @ X).ravel(), dZ.sum(axis=0),
            (G.T @ H).ravel(), G.sum(axis=0),
        ])

    def preactivations(self, x: np.ndarray) -> np.ndarray:
        """Hidden-layer pre-activations for mlp1 (empty for other architectures)."""
        X, single = self._check_input(x)
        if self.arch != "mlp1":
            Z = np.zeros((X.shape[0], 0))
        else:
            A1, b1, _, _ = self.unpack()
            Z = X @ A1.T + b1
        return Z[0] if single else Z


def forward(f: FeatureFunction, x: np.ndarray) -> np.ndarray:
    return f.forward(x)


def param_grad_similarity(f: FeatureFunction, W: np.ndarray, x_src: np.ndarray, x_tgt: np.ndarray) -> np.ndarray:
    """Gradient over ``theta`` of ``Phi(x_src)^T W Phi(x_tgt)``.

    Both arguments pass through the same feature map, so the result is the
    sum of the source-side and target-side chain-rule terms.
    """
    W = np.asarray(W, dtype=np.float64)
    if W.shape != (f.d_out, f.d_out):
        raise ShapeError(f"W must be {f.d_out}x{f.d_out}, got {W.shape}")
    x_src = np.asarray(x_src, dtype=np.float64)
    x_tgt = np.asarray(x_tgt, dtype=np.float64)
    if x_src.shape != (f.d_in,) or x_tgt.shape != (f.d_in,):
        raise ShapeError("param_grad_similarity takes two single input vectors")
    phi_s = f.forward(x_src)
    phi_t = f.forward(x_tgt)
    return f.vjp(x_src, W @ phi_t) + f.vjp(x_tgt, W.T @ phi_s)


def _truncated_normal(rng: np.random.Generator, size: int, bound: float = 2.0) -> np.ndarray:
    out = rng.standard_normal(size)
    bad = np.abs(out) > bound
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def init_params(arch: str, d_in: int, d_out: int | None = None, d_hidden: int | None = None, seed: int = 0) -> FeatureFunction:
    """Draw initial parameters.

    Weights are standard normals truncated at +-2, scaled by ``1/sqrt(fan_in)``
    of their layer; biases start at zero.
    """
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}")
    if d_in is None or d_in < 1:
        raise ConfigError("d_in must be positive")
    if arch == "precomputed":
        if d_out is not None and d_out != d_in:
            raise ConfigError("precomputed features require d_out == d_in")
        return FeatureFunction(arch, d_in, d_in)
    if d_out is None or d_out < 1:
        raise ConfigError("d_out must be positive")
    rng = np.random.default_rng(seed)
    if arch == "linear":
        A = _truncated_normal(rng, d_out * d_in) / np.sqrt(d_in)
        return FeatureFunction(arch, d_in, d_out, 0, np.concatenate([A, np.zeros(d_out)]))
    h = DEFAULT_HIDDEN if d_hidden is None else d_hidden
    if h < 1:
        raise ConfigError("d_hidden must be positive")
    A1 = _truncated_normal(rng, h * d_in) / np.sqrt(d_in)
    A2 = _truncated_normal(rng, d_out * h) / np.sqrt(h)
    theta = np.concatenate([A1, np.zeros(h), A2, np.zeros(d_out)])
    return FeatureFunction(arch, d_in, d_out, h, theta)
