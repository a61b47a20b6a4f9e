"""Finite-support Volterra kernels, single and dual input.

A dual-input kernel takes the excitation and a process-noise sequence as
separate inputs.  Averaging its output over Gaussian process noise is the
same as evaluating an effective single-input kernel whose coefficients are
the noise tap indices contracted against Gaussian joint moments; that
contraction is :func:`expected_kernel` and the moments come from
:func:`gaussian_moment` (Isserlis pairing enumeration).

Kernels are stored dense over the full tap hypercube.  Enumeration cost
grows as ``(taps+1)**degree``, so construction is bounded to total degree
``m + n <= 6`` and tap lag ``<= 8``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "MAX_TOTAL_DEGREE",
    "MAX_TAP_LAG",
    "VolterraKernel",
    "DualVolterraKernel",
    "NoiseMomentModel",
    "evaluate_kernel",
    "evaluate_dual_kernel",
    "gaussian_moment",
    "expected_kernel",
    "kernel_to_json",
    "kernel_from_json",
]

MAX_TOTAL_DEGREE = 6
MAX_TAP_LAG = 8


def _check_coefficients(coefficients: np.ndarray, degree: int, name: str) -> np.ndarray:
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.ndim != degree:
        raise ValueError(
            f"{name}: coefficient array has {coefficients.ndim} axes, degree is {degree}"
        )
    if degree and len(set(coefficients.shape)) != 1:
        raise ValueError(f"{name}: tap hypercube must be square, got {coefficients.shape}")
    if degree and coefficients.shape[0] - 1 > MAX_TAP_LAG:
        raise ValueError(f"{name}: tap lag {coefficients.shape[0] - 1} exceeds {MAX_TAP_LAG}")
    if not np.isfinite(coefficients).all():
        raise ValueError(f"{name}: coefficients must be finite")
    return coefficients


@dataclass(frozen=True)
class VolterraKernel:
    """Dense kernel of a single-input homogeneous term.

    ``coefficients`` has one axis per degree, each of length ``max_lag + 1``.
    Degree 0 (a scalar constant) arises from contracting pure-noise kernels
    and is allowed here even though it never appears in user-built systems.
    """

    coefficients: np.ndarray

    def __post_init__(self):
        coeff = _check_coefficients(self.coefficients, np.ndim(self.coefficients), "kernel")
        if coeff.ndim > MAX_TOTAL_DEGREE:
            raise ValueError(f"degree {coeff.ndim} exceeds {MAX_TOTAL_DEGREE}")
        object.__setattr__(self, "coefficients", coeff)

    @property
    def degree(self) -> int:
        return self.coefficients.ndim

    @property
    def max_lag(self) -> int:
        return self.coefficients.shape[0] - 1 if self.degree else 0


@dataclass(frozen=True)
class DualVolterraKernel:
    """Dense kernel with ``input_degree`` excitation taps and ``noise_degree`` noise taps.

    The coefficient array carries the excitation axes first (each of length
    ``input_max_lag + 1``) and the noise axes last (length
    ``noise_max_lag + 1``).
    """

    input_degree: int
    noise_degree: int
    coefficients: np.ndarray

    def __post_init__(self):
        m = int(self.input_degree)
        n = int(self.noise_degree)
        if m < 0 or n < 0:
            raise ValueError("degrees must be >= 0")
        if m + n > MAX_TOTAL_DEGREE:
            raise ValueError(f"total degree {m + n} exceeds {MAX_TOTAL_DEGREE}")
        coeff = np.asarray(self.coefficients, dtype=float)
        if coeff.ndim != m + n:
            raise ValueError(
                f"coefficient array has {coeff.ndim} axes, expected m+n = {m + n}"
            )
        if m and len(set(coeff.shape[:m])) != 1:
            raise ValueError("input tap axes must share one length")
        if n and len(set(coeff.shape[m:])) != 1:
            raise ValueError("noise tap axes must share one length")
        for axis_len in coeff.shape:
            if axis_len - 1 > MAX_TAP_LAG:
                raise ValueError(f"tap lag {axis_len - 1} exceeds {MAX_TAP_LAG}")
        if not np.isfinite(coeff).all():
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "input_degree", m)
        object.__setattr__(self, "noise_degree", n)
        object.__setattr__(self, "coefficients", coeff)

    @property
    def input_max_lag(self) -> int:
        return self.coefficients.shape[0] - 1 if self.input_degree else 0

    @property
    def noise_max_lag(self) -> int:
        return self.coefficients.shape[-1] - 1 if self.noise_degree else 0


@dataclass(frozen=True)
class NoiseMomentModel:
    """Second-order description of stationary Gaussian process noise.

    ``autocovariance[tau]`` is ``E{nx(t) nx(t - tau)}`` for lags
    ``0..len-1``; higher joint moments follow from Gaussianity.  Only the
    Gaussian case is implemented; the ``gaussian`` flag is the declared
    extension point for other finite-moment noise families.
    """

    autocovariance: np.ndarray
    gaussian: bool = True

    def __post_init__(self):
        r = np.atleast_1d(np.asarray(self.autocovariance, dtype=float))
        if not np.isfinite(r).all():
            raise ValueError("autocovariance must be finite")
        if r[0] < 0 or (r.size > 1 and np.abs(r[1:]).max() > r[0]):
            raise ValueError("need r(0) >= |r(tau)| >= 0 for all lags")
        if not self.gaussian:
            raise NotImplementedError("only Gaussian process noise is implemented")
        object.__setattr__(self, "autocovariance", r)

    @property
    def variance(self) -> float:
        return float(self.autocovariance[0])

    @property
    def max_lag(self) -> int:
        return self.autocovariance.size - 1

    @classmethod
    def white(cls, variance: float, max_lag: int = 0) -> "NoiseMomentModel":
        r = np.zeros(max_lag + 1)
        r[0] = variance
        return cls(autocovariance=r)


def _lagged(x: np.ndarray, max_lag: int, periodic: bool) -> np.ndarray:
    """Rows of ``x(t - l)`` for lags 0..max_lag; circular or zero-padded."""
    if periodic:
        return np.stack([np.roll(x, lag) for lag in range(max_lag + 1)])
    rows = np.zeros((max_lag + 1, x.size))
    for lag in range(max_lag + 1):
        rows[lag, lag:] = x[: x.size - lag]
    return rows


def evaluate_kernel(kernel: VolterraKernel, u, periodic: bool = True) -> np.ndarray:
    """Exact nested-sum output of a single-input kernel.

    Periodic inputs are extended circularly (steady-state analysis);
    otherwise the input is zero-padded and the first ``max_lag`` output
    samples are start-up transient.
    """
    u = np.asarray(u, dtype=float)
    if kernel.degree == 0:
        return np.full(u.size, float(kernel.coefficients))
    if u.size <= kernel.max_lag:
        raise ValueError("input shorter than the kernel tap support")
    lagged = _lagged(u, kernel.max_lag, periodic)
    out = np.zeros(u.size)
    coeff = kernel.coefficients
    for idx in np.ndindex(coeff.shape):
        c = coeff[idx]
        if c == 0.0:
            continue
        out += c * lagged[list(idx)].prod(axis=0)
    return out


def evaluate_dual_kernel(kernel: DualVolterraKernel, u, nx, periodic: bool = True) -> np.ndarray:
    """Exact nested-sum output of a dual-input kernel over both tap sets."""
    u = np.asarray(u, dtype=float)
    nx = np.asarray(nx, dtype=float)
    if u.size != nx.size:
        raise ValueError("input and noise sequences must share one length")
    m, n = kernel.input_degree, kernel.noise_degree
    if m + n == 0:
        return np.full(u.size, float(kernel.coefficients))
    if u.size <= max(kernel.input_max_lag, kernel.noise_max_lag):
        raise ValueError("sequences shorter than the kernel tap support")
    u_lagged = _lagged(u, kernel.input_max_lag, periodic) if m else None
    nx_lagged = _lagged(nx, kernel.noise_max_lag, periodic) if n else None
    out = np.zeros(u.size)
    coeff = kernel.coefficients
    for idx in np.ndindex(coeff.shape):
        c = coeff[idx]
        if c == 0.0:
            continue
        term = np.full(u.size, c)
        if m:
            term = term * u_lagged[list(idx[:m])].prod(axis=0)
        if n:
            term = term * nx_lagged[list(idx[m:])].prod(axis=0)
        out += term
    return out


def gaussian_moment(model: NoiseMomentModel, lags) -> float:
    """Joint moment ``E{nx(t-j_1) ... nx(t-j_n)}`` of a Gaussian stationary process.

    Zero for odd ``n``; for even ``n`` the sum over all perfect matchings of
    pairwise autocovariances, enumerated by recursively pairing the first
    remaining lag with each other.  Invariant under any permutation of the
    lags.  Requires every pairwise lag difference to lie inside the
    autocovariance support.
    """
    lags = tuple(int(j) for j in lags)
    if any(j < 0 for j in lags):
        raise ValueError("lags must be >= 0")
    n = len(lags)
    if n == 0:
        return 1.0
    if n % 2:
        return 0.0
    r = model.autocovariance
    span = max(lags) - min(lags)
    if span > model.max_lag:
        raise ValueError(
            f"lag difference {span} outside autocovariance support (max {model.max_lag})"
        )

    def pairings(rest: tuple) -> float:
        if not rest:
            return 1.0
        first, tail = rest[0], rest[1:]
        total = 0.0
        for i, other in enumerate(tail):
            total += r[abs(first - other)] * pairings(tail[:i] + tail[i + 1:])
        return total

    return pairings(lags)


def expected_kernel(kernel: DualVolterraKernel, model: NoiseMomentModel) -> VolterraKernel:
    """Contract the noise taps of a dual-input kernel against Gaussian moments.

    Returns the single-input kernel of degree ``input_degree`` whose output
    equals the process-noise average of the dual kernel's output.  Odd noise
    degree gives the zero kernel.  The contraction is linear in the kernel
    coefficients.
    """
    m, n = kernel.input_degree, kernel.noise_degree
    if n == 0:
        return VolterraKernel(coefficients=kernel.coefficients.copy())
    shape_u = kernel.coefficients.shape[:m]
    if n % 2:
        return VolterraKernel(coefficients=np.zeros(shape_u))
    if kernel.noise_max_lag > model.max_lag:
        raise ValueError(
            f"kernel noise lags reach {kernel.noise_max_lag}, autocovariance "
            f"support ends at {model.max_lag}"
        )
    out = np.zeros(shape_u)
    taps = kernel.coefficients.shape[-1] if n else 1
    for j_idx in np.ndindex((taps,) * n):
        weight = gaussian_moment(model, j_idx)
        if weight != 0.0:
            out = out + weight * kernel.coefficients[(...,) + j_idx]
    return VolterraKernel(coefficients=out)


def kernel_to_json(kernel: DualVolterraKernel, model: NoiseMomentModel | None = None) -> str:
    """Serialize a dual kernel (and optionally its noise model) to JSON.

    Layout: ``{m, n, N_k, N_j, coefficients, noise_autocovariance}`` with the
    coefficients flattened row-major (input axes first).
    """
    payload = {
        "m": kernel.input_degree,
        "n": kernel.noise_degree,
        "N_k": kernel.input_max_lag,
        "N_j": kernel.noise_max_lag,
        "coefficients": kernel.coefficients.ravel(order="C").tolist(),
        "noise_autocovariance": (
            model.autocovariance.tolist() if model is not None else None
        ),
    }
    return json.dumps(payload, sort_keys=True)


def kernel_from_json(text: str) -> tuple[DualVolterraKernel, NoiseMomentModel | None]:
    payload = json.loads(text)
    m = int(payload["m"])
    n = int(payload["n"])
    shape = (int(payload["N_k"]) + 1,) * m + (int(payload["N_j"]) + 1,) * n
    coeff = np.asarray(payload["coefficients"], dtype=float).reshape(shape, order="C")
    kernel = DualVolterraKernel(input_degree=m, noise_degree=n, coefficients=coeff)
    r = payload.get("noise_autocovariance")
    model = NoiseMomentModel(autocovariance=np.asarray(r, dtype=float)) if r is not None else None
    return kernel, model
