"""Finite-dimensional control systems with input-memory kernels.

The dynamics under study are

    w'(t) = A w(t) + B u(t) + int_0^t k(t - sigma) B u(sigma) dsigma,

on a horizon [0, T], with a quadratic cost ||C w||^2 + ||u||^2.  This module
defines the system container, the memory kernel, the uniform time grid every
table in the package is indexed by, and the spectral truncation of the 1D
Dirichlet-boundary-controlled heat equation used as the standard example.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

__all__ = [
    "MemoryKernel",
    "ControlSystem",
    "TimeGrid",
    "StatePoint",
    "ControlTrajectory",
    "StateTrajectory",
    "build_heat_model",
    "kernel_eval",
    "system_from_config",
]

# Relative tolerance for reconstructing A from supplied eigendata.
EIGEN_RECONSTRUCTION_RTOL = 1e-12
# Absolute tolerance for the kernel/semigroup commutation check.
COMMUTATION_ATOL = 1e-10


@dataclass(frozen=True)
class MemoryKernel:
    """Convolution kernel k(.) acting on past control contributions.

    Supported forms:
      * ``zero``                k(t) = 0
      * ``scalar-exponential``  k(t) = a * exp(-b t) * I
      * ``scalar-table``        linear interpolation of scalar samples, times I
      * ``matrix-table``        linear interpolation of matrix samples
    Scalar forms commute with any matrix exponential by construction; a
    matrix-table kernel must commute with the semigroup (checked by the
    owning ControlSystem).
    """

    form: str
    a: float = 0.0
    b: float = 0.0
    times: np.ndarray | None = None
    values: np.ndarray | None = None

    def __post_init__(self):
        if self.form not in ("zero", "scalar-exponential", "scalar-table", "matrix-table"):
            raise ValueError(f"unknown kernel form {self.form!r}")
        if self.form.endswith("-table"):
            if self.times is None or self.values is None:
                raise ValueError(f"{self.form} kernel needs times and values")
            times = np.asarray(self.times, dtype=float)
            values = np.asarray(self.values, dtype=float)
            if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
                raise ValueError("kernel sample times must be strictly increasing, >= 2 points")
            if values.shape[0] != times.size:
                raise ValueError("kernel needs one sample per time")
            if self.form == "matrix-table" and (values.ndim != 3 or values.shape[1] != values.shape[2]):
                raise ValueError("matrix-table samples must be square matrices")
            if self.form == "scalar-table" and values.ndim != 1:
                raise ValueError("scalar-table samples must be scalars")
            if not np.all(np.isfinite(values)):
                raise ValueError("kernel samples must be finite")
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "values", values)

    @property
    def is_zero(self) -> bool:
        return self.form == "zero"

    @property
    def is_scalar(self) -> bool:
        return self.form in ("zero", "scalar-exponential", "scalar-table")

    def scalar_at(self, t: float) -> float:
        """Scalar factor of a scalar-form kernel at time t (in [0, T] domain)."""
        if self.form == "zero":
            return 0.0
        if self.form == "scalar-exponential":
            return self.a * np.exp(-self.b * t)
        if self.form == "scalar-table":
            return float(np.interp(t, self.times, self.values))
        raise ValueError("matrix-table kernel has no scalar factor")

    def eval(self, t: float, n: int) -> np.ndarray:
        """k(t) as an n x n matrix."""
        if self.form == "matrix-table":
            if self.values.shape[1] != n:
                raise ValueError(f"kernel is {self.values.shape[1]}x{self.values.shape[1]}, system is {n}x{n}")
            i = int(np.searchsorted(self.times, t, side="right") - 1)
            i = min(max(i, 0), self.times.size - 2)
            t0, t1 = self.times[i], self.times[i + 1]
            lam = (t - t0) / (t1 - t0)
            return (1.0 - lam) * self.values[i] + lam * self.values[i + 1]
        return self.scalar_at(t) * np.eye(n)

    def matrix_factor(self, n: int) -> np.ndarray:
        """A representative matrix factor for the commutation check."""
        if self.form == "matrix-table":
            # the sample of largest norm is the sharpest test
            norms = [np.linalg.norm(v) for v in self.values]
            return self.values[int(np.argmax(norms))]
        return np.eye(n)


def kernel_eval(kernel: MemoryKernel, t: float, n: int, T: float | None = None) -> np.ndarray:
    """Evaluate k(t) as a matrix, rejecting t outside [0, T]."""
    if t < 0.0 or (T is not None and t > T + 1e-12 * max(T, 1.0)):
        raise ValueError(f"kernel evaluation time {t} outside [0, {T}]")
    return kernel.eval(t, n)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_i = i*h on [0, T] with N intervals."""

    T: float
    N: int

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.N < 2:
            raise ValueError("grid needs N >= 2 intervals")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    def node_index(self, t: float) -> int:
        """Index of a grid node, rejecting off-grid times."""
        j = int(round(t / self.h))
        if j < 0 or j > self.N or abs(j * self.h - t) > 1e-9 * max(self.T, 1.0):
            raise ValueError(f"time {t} is not a node of the grid (h={self.h})")
        return j

    def trapezoid_weights(self, a: int, b: int) -> np.ndarray:
        """Composite trapezoid weights (no h factor) for nodes a..b; zero if a == b."""
        if not 0 <= a <= b <= self.N:
            raise ValueError(f"invalid node range [{a}, {b}]")
        if a == b:
            return np.zeros(1)
        w = np.ones(b - a + 1)
        w[0] = w[-1] = 0.5
        return w

    def history_weights(self, count: int) -> np.ndarray:
        """Quadrature weights (no h factor) for history samples at nodes 0..count-1.

        Half weight on the first sample, full weight after; this is exactly the
        profile under which past controls re-enter the cost/dynamics when the
        problem is re-rooted at a later initial time, so the discrete problems
        embed into each other without error.
        """
        if count < 0:
            raise ValueError("negative history length")
        w = np.ones(count)
        if count:
            w[0] = 0.5
        return w


@dataclass
class ControlSystem:
    """Matrices (A, B, C), memory kernel, horizon, and unboundedness metadata.

    ``gamma`` records the control-operator singularity exponent of the
    underlying PDE model; it is metadata only (no fractional powers are ever
    formed), the unboundedness shows up as growth of B entries with the mode
    index.  ``eigen`` optionally carries (eigenvalues, orthogonal eigenbasis)
    of a symmetric A, used for fast exact semigroup tables.
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    kernel: MemoryKernel
    T: float
    gamma: float = 0.75
    eigen: tuple[np.ndarray, np.ndarray] | None = None
    label: str = "explicit"

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.asarray(self.B, dtype=float)
        if self.B.ndim == 1:
            self.B = self.B[:, None]
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.B.shape[0] != n:
            raise ValueError("B must have n rows")
        if self.C.shape[1] != n:
            raise ValueError("C must have n columns")
        if min(self.n, self.m, self.p) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if self.eigen is not None:
            vals, vecs = self.eigen
            vals = np.asarray(vals, dtype=float)
            vecs = np.asarray(vecs, dtype=float)
            recon = vecs @ np.diag(vals) @ vecs.T
            scale = max(np.linalg.norm(self.A), 1e-300)
            if np.linalg.norm(recon - self.A) > EIGEN_RECONSTRUCTION_RTOL * scale:
                raise ValueError("eigendata does not reconstruct A")
            self.eigen = (vals, vecs)
        self._check_kernel_commutation()

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[0]

    def _check_kernel_commutation(self):
        """e^{Ah} k = k e^{Ah} at one sampled h; trivial for scalar kernels."""
        if self.kernel.is_scalar:
            return
        K = self.kernel.matrix_factor(self.n)
        E = scipy.linalg.expm(self.A * (0.5 * self.T))
        defect = np.max(np.abs(E @ K - K @ E))
        if defect > COMMUTATION_ATOL:
            raise ValueError(f"kernel does not commute with the semigroup (defect {defect:.3e})")

    def kernel_matrix(self, t: float) -> np.ndarray:
        return kernel_eval(self.kernel, t, self.n, self.T)

    def ctc(self) -> np.ndarray:
        return self.C.T @ self.C


@dataclass
class ControlTrajectory:
    """Control samples u(t_i), i = start..start+len-1, on a shared grid."""

    grid: TimeGrid
    start: int
    values: np.ndarray  # (count, m)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if not 0 <= self.start <= self.grid.N:
            raise ValueError("start index outside grid")
        if self.start + len(self.values) > self.grid.N + 1:
            raise ValueError("trajectory runs past the grid")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trajectory has non-finite entries")

    @property
    def times(self) -> np.ndarray:
        return (self.start + np.arange(len(self.values))) * self.grid.h

    def __len__(self) -> int:
        return len(self.values)


class StateTrajectory(ControlTrajectory):
    """State samples w(t_i); identical storage with n-dimensional values."""


@dataclass
class StatePoint:
    """Embedded initial datum X0 = (w0, eta restricted to [0, s)).

    ``eta`` holds exactly s_index samples, at nodes 0..s_index-1; for
    s_index = 0 the datum is just w0.
    """

    s_index: int
    w0: np.ndarray
    eta: np.ndarray | None = None

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=float).ravel()
        if self.s_index < 0:
            raise ValueError("initial node must be >= 0")
        if self.s_index == 0:
            if self.eta is not None and len(np.atleast_1d(self.eta)) != 0:
                raise ValueError("s = 0 admits no control history")
            self.eta = None
        else:
            if self.eta is None:
                raise ValueError(f"s_index = {self.s_index} needs a control history")
            eta = np.asarray(self.eta, dtype=float)
            if eta.ndim == 1:
                eta = eta[:, None]
            if eta.shape[0] != self.s_index:
                raise ValueError(f"history must hold exactly {self.s_index} samples, got {eta.shape[0]}")
            if not np.all(np.isfinite(eta)):
                raise ValueError("history has non-finite entries")
            self.eta = eta


def build_heat_model(n_modes: int, kernel: MemoryKernel, T: float, weight="identity") -> ControlSystem:
    """Spectral truncation of the Dirichlet heat problem on (0,1), control at x = 1.

    In the sine basis e_k = sqrt(2) sin(k pi x): A = diag(-(k pi)^2), and the
    boundary-control operator obtained from the Dirichlet map D (harmonic
    extension (Dv)(x) = x v) via B = -A D has components
    B_k = sqrt(2) (-1)^(k+1) k pi, growing linearly in k.
    """
    if n_modes < 1:
        raise ValueError("need at least one mode")
    k = np.arange(1, n_modes + 1)
    eigvals = -((k * np.pi) ** 2)
    A = np.diag(eigvals)
    B = (np.sqrt(2.0) * (-1.0) ** (k + 1) * k * np.pi)[:, None]
    if isinstance(weight, str):
        if weight != "identity":
            raise ValueError(f"unknown observation weight {weight!r}")
        C = np.eye(n_modes)
    else:
        C = np.atleast_2d(np.asarray(weight, dtype=float))
    return ControlSystem(
        A=A, B=B, C=C, kernel=kernel, T=T, gamma=0.75,
        eigen=(eigvals.astype(float), np.eye(n_modes)), label="heat",
    )


def kernel_from_config(cfg: dict) -> MemoryKernel:
    form = cfg.get("form", "zero")
    if form == "zero":
        return MemoryKernel("zero")
    if form == "scalar-exponential":
        return MemoryKernel("scalar-exponential", a=float(cfg["a"]), b=float(cfg["b"]))
    if form in ("scalar-table", "matrix-table"):
        return MemoryKernel(form, times=np.asarray(cfg["times"], dtype=float),
                            values=np.asarray(cfg["values"], dtype=float))
    raise ValueError(f"unknown kernel form {form!r}")


def system_from_config(cfg: dict) -> tuple[ControlSystem, TimeGrid]:
    """Build (system, grid) from a configuration mapping.

    Schema: {"model": "heat"|"explicit", "n": int, "kernel": {...}, "T": float,
    "N": int, "C": "identity"|matrix, and for explicit models row-major
    "A"/"B"/["C"] arrays}.
    """
    kernel = kernel_from_config(cfg.get("kernel", {"form": "zero"}))
    T = float(cfg.get("T", 1.0))
    N = int(cfg.get("N", 64))
    kind = cfg.get("model", "heat")
    if kind == "heat":
        weight = cfg.get("C", "identity")
        sys_ = build_heat_model(int(cfg.get("n", 8)), kernel, T, weight=weight)
    elif kind == "explicit":
        A = np.asarray(cfg["A"], dtype=float)
        B = np.asarray(cfg["B"], dtype=float)
        C = cfg.get("C", "identity")
        n = np.atleast_2d(A).shape[0]
        C = np.eye(n) if (isinstance(C, str) and C == "identity") else np.asarray(C, dtype=float)
        sys_ = ControlSystem(A=A, B=B, C=C, kernel=kernel, T=T,
                             gamma=float(cfg.get("gamma", 0.75)))
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return sys_, TimeGrid(T=T, N=N)


def load_config(path: str) -> dict:
    """Read a JSON configuration, reporting parse errors with line context."""
    with open(path) as f:
        text = f.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        line = text.splitlines()[e.lineno - 1] if e.lineno - 1 < len(text.splitlines()) else ""
        raise ValueError(f"{path}:{e.lineno}:{e.colno}: {e.msg}\n  {line}") from e
