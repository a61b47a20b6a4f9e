"""Simulators for block-structured nonlinear systems.

Covers stable rational LTI blocks in the shift operator ``q``, static
polynomial nonlinearities, the Hammerstein structure
``y = S(q)[f(u + nx)] + ny`` and a closed loop built from a linear actuator,
the nonlinear plant and a strictly delayed linear feedback path.

Simulations run the time-domain recursion on warm-up periods until the
response is periodic (last two warm-up periods differing by less than
``STEADY_STATE_RTOL`` in relative RMS) before any samples are recorded, so
recorded periods are steady state.  Noise-free simulations are deterministic
and seed-independent; noisy ones are a pure function of their seeds.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .signals import PeriodicSignal, derive_rng, generate_noise
from .volterra import DualVolterraKernel

__all__ = [
    "ConfigurationError",
    "InstabilityError",
    "STEADY_STATE_RTOL",
    "DIVERGENCE_LIMIT",
    "RationalLTI",
    "PolynomialNonlinearity",
    "HammersteinPlant",
    "VolterraPlant",
    "ClosedLoopConfig",
    "SimulationRecord",
    "ClosedLoopRecord",
    "HammersteinSimulator",
    "filter_periodic",
    "simulate_hammerstein",
    "simulate_closed_loop",
    "simulate_closed_loop_batch",
    "SystemDescription",
    "read_system_file",
    "write_system_file",
]

STEADY_STATE_RTOL = 1e-10
DIVERGENCE_LIMIT = 1e12
_MIN_WARMUP = 4
_MAX_WARMUP = 64


class ConfigurationError(ValueError):
    """A system or experiment description is invalid."""


class InstabilityError(RuntimeError):
    """A simulation diverged or failed to reach a periodic steady state."""


class RationalLTI:
    """Discrete-time rational transfer function ``B(q) / A(q)``.

    Coefficients are ascending powers of the delay ``q^-1`` with ``a[0]``
    normalized to 1.  All poles must lie strictly inside the unit circle;
    this is checked at construction, so every instance is stable.
    """

    def __init__(self, b, a=(1.0,)):
        b = np.atleast_1d(np.asarray(b, dtype=float))
        a = np.atleast_1d(np.asarray(a, dtype=float))
        if not (np.isfinite(b).all() and np.isfinite(a).all()):
            raise ConfigurationError("filter coefficients must be finite")
        if a[0] == 0.0:
            raise ConfigurationError("leading denominator coefficient must be nonzero")
        if a[0] != 1.0:
            b = b / a[0]
            a = a / a[0]
        poles = np.roots(a) if a.size > 1 else np.empty(0)
        if poles.size and np.abs(poles).max() >= 1.0:
            raise ConfigurationError(
                f"unstable filter: pole magnitude {np.abs(poles).max():.6g} >= 1"
            )
        self.numerator = b
        self.denominator = a
        self._poles = poles

    def __repr__(self):
        return f"RationalLTI(b={self.numerator.tolist()}, a={self.denominator.tolist()})"

    @classmethod
    def identity(cls) -> "RationalLTI":
        return cls(b=[1.0])

    @classmethod
    def delay(cls, samples: int = 1) -> "RationalLTI":
        b = np.zeros(samples + 1)
        b[samples] = 1.0
        return cls(b=b)

    @classmethod
    def zero(cls) -> "RationalLTI":
        return cls(b=[0.0])

    @property
    def poles(self) -> np.ndarray:
        return self._poles

    @property
    def is_strictly_delayed(self) -> bool:
        return self.numerator[0] == 0.0

    def time_constant(self) -> float:
        """Dominant time constant in samples (FIR length if there are no poles)."""
        mags = np.abs(self._poles)
        mags = mags[mags > 0]
        if mags.size == 0:
            return float(self.numerator.size - 1)
        return -1.0 / np.log(mags.max())

    def settling_length(self) -> int:
        """Warm-up samples after which start-up transients are negligible."""
        return int(max(10.0 * self.time_constant(), 1000.0))

    def frequency_response(self, normalized_frequencies) -> np.ndarray:
        """Response at digital frequencies ``w`` (radians/sample)."""
        w = np.asarray(normalized_frequencies, dtype=float)
        zinv = np.exp(-1j * w)
        num = np.polynomial.polynomial.polyval(zinv, self.numerator)
        den = np.polynomial.polynomial.polyval(zinv, self.denominator)
        return num / den

    def bin_response(self, samples_per_period: int) -> np.ndarray:
        """Response on the full DFT bin grid, exactly conjugate symmetric."""
        n = samples_per_period
        w = 2.0 * np.pi * np.arange(n // 2 + 1) / n
        half = self.frequency_response(w)
        full = np.empty(n, dtype=complex)
        full[: n // 2 + 1] = half
        full[n // 2 + 1:] = np.conj(half[1: (n + 1) // 2][::-1])
        full[0] = full[0].real
        if n % 2 == 0:
            full[n // 2] = full[n // 2].real
        return full

    def filter(self, x) -> np.ndarray:
        """Zero-state time-domain recursion along the last axis."""
        return sps.lfilter(self.numerator, self.denominator, np.asarray(x, dtype=float))

    def stepper(self, width: int = 1) -> "_LtiStepper":
        return _LtiStepper(self, width)


class _LtiStepper:
    """Direct-form II transposed state for sample-by-sample runs.

    Vectorized over ``width`` parallel channels, so a whole batch of
    realizations advances in one call per sample.
    """

    def __init__(self, lti: RationalLTI, width: int):
        order = max(lti.numerator.size, lti.denominator.size) - 1
        b = np.zeros(order + 1)
        a = np.zeros(order + 1)
        b[: lti.numerator.size] = lti.numerator
        a[: lti.denominator.size] = lti.denominator
        self._b0 = b[0]
        self._b_tail = b[1:, None]
        self._a_tail = a[1:, None]
        self._order = order
        self._z = np.zeros((order, width))
        self._width = width

    def peek(self) -> np.ndarray:
        """Next output, valid only for strictly delayed filters (b0 == 0)."""
        if self._order == 0:
            return np.zeros(self._width)
        return self._z[0].copy()

    def step(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._order == 0:
            return self._b0 * x
        y = self._b0 * x + self._z[0]
        self._z[:-1] = self._z[1:]
        self._z[-1] = 0.0
        self._z += self._b_tail * x - self._a_tail * y
        return y


@dataclass(frozen=True)
class PolynomialNonlinearity:
    """Static nonlinearity ``f(x) = c_1 x + c_2 x^2 + ... + c_d x^d`` (no offset)."""

    coefficients: np.ndarray

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        if c.size == 0 or c.size > 9:
            raise ConfigurationError("polynomial degree must be between 1 and 9")
        if not np.isfinite(c).all():
            raise ConfigurationError("polynomial coefficients must be finite")
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def identity(cls) -> "PolynomialNonlinearity":
        return cls(coefficients=[1.0])

    @property
    def degree(self) -> int:
        return self.coefficients.size

    def __call__(self, x):
        ascending = np.concatenate(([0.0], self.coefficients))
        return np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), ascending)

    def derivative_coefficients(self) -> np.ndarray:
        """Ascending coefficients of f', constant term first."""
        powers = np.arange(1, self.degree + 1)
        return self.coefficients * powers


def filter_periodic(lti: RationalLTI, sig: PeriodicSignal) -> PeriodicSignal:
    """Exact periodic steady-state response of a stable filter.

    Multiplies the period spectrum by the frequency response on the bin
    grid, which equals the time-domain recursion after transients decay.
    """
    n = sig.samples_per_period
    half = np.fft.rfft(sig.period(0)) * lti.frequency_response(
        2.0 * np.pi * np.arange(n // 2 + 1) / n
    )
    period = np.fft.irfft(half, n=n)
    return PeriodicSignal(
        samples=np.tile(period, sig.period_count),
        samples_per_period=n,
        period_count=sig.period_count,
        sampling_frequency=sig.sampling_frequency,
    )


def _rms(x: np.ndarray, axis=None) -> np.ndarray:
    return np.sqrt(np.mean(np.square(x), axis=axis))


def _steady_state_warmup(step_period, min_periods: int = _MIN_WARMUP,
                         max_periods: int = _MAX_WARMUP) -> tuple[int, float]:
    """Run `step_period` until two consecutive periods agree in relative RMS.

    Returns (number of warm-up periods, final relative residual).
    """
    previous = None
    resid = np.inf
    for count in range(1, max_periods + 1):
        current = step_period()
        if not np.isfinite(current).all() or np.abs(current).max() > DIVERGENCE_LIMIT:
            raise InstabilityError("simulation diverged during warm-up")
        if previous is not None:
            scale = max(float(np.max(_rms(current, axis=0))), 1e-300)
            resid = float(np.max(_rms(current - previous, axis=0))) / scale
            if count >= min_periods and resid < STEADY_STATE_RTOL:
                return count, resid
        previous = current
    raise InstabilityError(
        f"steady state not reached within {max_periods} warm-up periods "
        f"(relative residual {resid:.3g})"
    )


@dataclass(frozen=True)
class SimulationRecord:
    """Recorded steady-state periods of a noisy simulation."""

    output: PeriodicSignal
    process_noise: np.ndarray
    output_noise: np.ndarray
    warmup_periods: int
    steady_state_residual: float


class HammersteinSimulator:
    """Re-runnable Hammerstein simulator ``y = S(q)[f(u + nx)] + ny``.

    Noise sequences are white Gaussian by default; pass coloring filters for
    colored noise.  Separate generators for the process and output noise make
    controlled re-simulation possible: fixing the input and redrawing only
    the process noise is exactly what output decomposition needs.
    """

    def __init__(self, dynamics: RationalLTI, nonlinearity: PolynomialNonlinearity,
                 process_noise_variance: float = 0.0, output_noise_variance: float = 0.0,
                 process_noise_coloring: RationalLTI | None = None,
                 output_noise_coloring: RationalLTI | None = None,
                 warmup_minimum: int = _MIN_WARMUP):
        if process_noise_variance < 0 or output_noise_variance < 0:
            raise ConfigurationError("noise variances must be >= 0")
        if warmup_minimum < 1:
            raise ConfigurationError("warmup_minimum must be >= 1")
        self.dynamics = dynamics
        self.nonlinearity = nonlinearity
        self.process_noise_variance = float(process_noise_variance)
        self.output_noise_variance = float(output_noise_variance)
        self.process_noise_coloring = process_noise_coloring
        self.output_noise_coloring = output_noise_coloring
        self.warmup_minimum = int(warmup_minimum)

    def required_warmup(self, u: PeriodicSignal) -> tuple[int, float]:
        """Warm-up periods until the noise-free response is periodic."""
        # The nonlinearity is memoryless, so the noise-free probe filters one
        # precomputed period per step with carried state.
        return _steady_state_warmup(
            self._fast_period_runner(self.nonlinearity(u.period(0))),
            min_periods=self.warmup_minimum,
        )

    def _fast_period_runner(self, x_period: np.ndarray):
        zi = np.zeros(max(self.dynamics.numerator.size, self.dynamics.denominator.size) - 1)
        state = {"zi": zi}

        def run():
            y, state["zi"] = sps.lfilter(
                self.dynamics.numerator, self.dynamics.denominator, x_period, zi=state["zi"]
            )
            return y

        return run

    def draw_process_noise(self, length: int, rng) -> np.ndarray:
        return generate_noise(self.process_noise_variance, length, rng,
                              coloring=self.process_noise_coloring)

    def draw_output_noise(self, length: int, rng) -> np.ndarray:
        return generate_noise(self.output_noise_variance, length, rng,
                              coloring=self.output_noise_coloring)

    def run(self, u: PeriodicSignal, process_noise_rng=None, output_noise_rng=None,
            include_process_noise: bool = True,
            include_output_noise: bool = True) -> SimulationRecord:
        """Simulate ``u.period_count`` steady-state periods.

        With noise on, the recursion runs over the warm-up and recorded
        stretch in one go, so the recorded noise paths carry realistic filter
        state.  A fully noise-free run instead returns the exact periodic
        steady state (the fixed point the recursion converges to), computed
        in the frequency domain; that branch is deterministic and
        seed-independent.  Returns the measured output together with the
        exact noise sequences that entered it.
        """
        n = u.samples_per_period
        p = u.period_count
        draw_nx = include_process_noise and self.process_noise_variance > 0
        draw_ny = include_output_noise and self.output_noise_variance > 0
        if draw_nx and process_noise_rng is None:
            raise ValueError("process_noise_rng is required when process noise is on")
        if draw_ny and output_noise_rng is None:
            raise ValueError("output_noise_rng is required when output noise is on")

        if not draw_nx and not draw_ny:
            warmup, resid = self.required_warmup(u)
            x = PeriodicSignal(self.nonlinearity(u.period(0)), n, 1, u.sampling_frequency)
            period = filter_periodic(self.dynamics, x).samples
            if not np.isfinite(period).all() or np.abs(period).max() > DIVERGENCE_LIMIT:
                raise InstabilityError("simulation diverged")
            return SimulationRecord(
                output=PeriodicSignal(np.tile(period, p), n, p, u.sampling_frequency),
                process_noise=np.zeros(p * n),
                output_noise=np.zeros(p * n),
                warmup_periods=warmup,
                steady_state_residual=resid,
            )

        warmup, resid = self.required_warmup(u)
        total = (warmup + p) * n
        u_full = np.concatenate([np.tile(u.period(0), warmup), u.samples])
        nx = self.draw_process_noise(total, process_noise_rng) if draw_nx else np.zeros(total)
        ny = self.draw_output_noise(total, output_noise_rng) if draw_ny else np.zeros(total)

        y0 = self.dynamics.filter(self.nonlinearity(u_full + nx))
        if not np.isfinite(y0).all() or np.abs(y0).max() > DIVERGENCE_LIMIT:
            raise InstabilityError("simulation diverged")
        y = y0 + ny
        rec = slice(warmup * n, total)
        return SimulationRecord(
            output=PeriodicSignal(
                samples=y[rec], samples_per_period=n, period_count=p,
                sampling_frequency=u.sampling_frequency,
            ),
            process_noise=nx[rec],
            output_noise=ny[rec],
            warmup_periods=warmup,
            steady_state_residual=resid,
        )


def simulate_hammerstein(dynamics: RationalLTI, nonlinearity: PolynomialNonlinearity,
                         u: PeriodicSignal, process_noise_variance: float,
                         output_noise_variance: float, seed=None) -> SimulationRecord:
    """One Hammerstein run; noise streams are derived from the master seed."""
    sim = HammersteinSimulator(dynamics, nonlinearity,
                               process_noise_variance, output_noise_variance)
    return sim.run(
        u,
        process_noise_rng=derive_rng(seed if seed is not None else 0, "process_noise"),
        output_noise_rng=derive_rng(seed if seed is not None else 0, "output_noise"),
    )


# ---------------------------------------------------------------------------
# Closed loop


@dataclass(frozen=True)
class HammersteinPlant:
    """Plant block ``y0 = S(q)[f(u0 + nx)]`` for use inside the loop."""

    dynamics: RationalLTI
    nonlinearity: PolynomialNonlinearity

    def stepper(self, width: int):
        state = self.dynamics.stepper(width)
        f = self.nonlinearity
        return lambda u0, nx: state.step(f(u0 + nx))


@dataclass(frozen=True)
class VolterraPlant:
    """Plant block given by a sum of dual-input kernels on (u0, nx)."""

    kernels: tuple[DualVolterraKernel, ...]

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ConfigurationError("need at least one kernel")
        object.__setattr__(self, "kernels", kernels)

    def stepper(self, width: int):
        lag_u = max(k.input_max_lag for k in self.kernels)
        lag_x = max(k.noise_max_lag for k in self.kernels)
        u_hist = np.zeros((lag_u + 1, width))
        x_hist = np.zeros((lag_x + 1, width))
        kernels = self.kernels

        def step(u0, nx):
            u_hist[1:] = u_hist[:-1]
            u_hist[0] = u0
            x_hist[1:] = x_hist[:-1]
            x_hist[0] = nx
            out = np.zeros(width)
            for kern in kernels:
                m, n = kern.input_degree, kern.noise_degree
                coeff = kern.coefficients
                for idx in np.ndindex(coeff.shape):
                    c = coeff[idx]
                    if c == 0.0:
                        continue
                    term = np.full(width, c)
                    for lag in idx[:m]:
                        term = term * u_hist[lag]
                    for lag in idx[m:]:
                        term = term * x_hist[lag]
                    out += term
            return out

        return step


@dataclass(frozen=True)
class ClosedLoopConfig:
    """Loop layout: ``u0 = G_act(q)[r - M(q) y0]`` around a noisy plant.

    The feedback path must be strictly delayed (``b[0] = 0``) so the loop is
    solvable sample by sample.  ``nu`` and ``ny`` are measurement noise on
    the recorded input and output; only the noise-free ``y0`` is fed back.
    """

    plant: HammersteinPlant | VolterraPlant
    actuator: RationalLTI
    feedback: RationalLTI
    input_noise_variance: float = 0.0
    process_noise_variance: float = 0.0
    output_noise_variance: float = 0.0

    def __post_init__(self):
        if not self.feedback.is_strictly_delayed:
            raise ConfigurationError(
                "feedback path must have at least one sample of delay (b[0] = 0)"
            )
        for name in ("input_noise_variance", "process_noise_variance",
                     "output_noise_variance"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")


@dataclass(frozen=True)
class ClosedLoopRecord:
    """Measured loop signals plus the noise-free internal ones."""

    input_measured: PeriodicSignal
    output_measured: PeriodicSignal
    input_noise_free: np.ndarray
    output_noise_free: np.ndarray
    reference: PeriodicSignal
    warmup_periods: int
    steady_state_residual: float


class _LoopEngine:
    """Sample-by-sample loop runner, vectorized over parallel realizations."""

    def __init__(self, config: ClosedLoopConfig, width: int):
        self._act = config.actuator.stepper(width)
        self._fb = config.feedback.stepper(width)
        self._plant = config.plant.stepper(width)
        self._width = width

    def run_period(self, r_block: np.ndarray, nx_block: np.ndarray):
        n = r_block.shape[0]
        u0 = np.empty_like(r_block)
        y0 = np.empty_like(r_block)
        # Overflow on the way to divergence is expected; it is detected and
        # reported as an InstabilityError right below.
        with np.errstate(over="ignore", invalid="ignore"):
            for t in range(n):
                e = r_block[t] - self._fb.peek()
                u0[t] = self._act.step(e)
                y0[t] = self._plant(u0[t], nx_block[t])
                self._fb.step(y0[t])
        if not np.isfinite(y0).all() or np.abs(y0).max() > DIVERGENCE_LIMIT:
            raise InstabilityError("closed loop diverged")
        return u0, y0


def simulate_closed_loop_batch(config: ClosedLoopConfig, references, seed=None,
                               first_realization: int = 0,
                               warmup_minimum: int = _MIN_WARMUP) -> list[ClosedLoopRecord]:
    """Simulate one loop per reference signal, all advanced in lock step.

    Realization ``i`` draws its noise from streams keyed by
    ``first_realization + i``, so batched and one-at-a-time runs of the same
    realization are bit-identical.
    """
    references = list(references)
    if not references:
        return []
    n = references[0].samples_per_period
    p = references[0].period_count
    fs = references[0].sampling_frequency
    for r in references:
        if (r.samples_per_period, r.period_count, r.sampling_frequency) != (n, p, fs):
            raise ConfigurationError("all references must share one grid")
    width = len(references)
    r_period = np.stack([r.period(0) for r in references], axis=1)

    # Warm-up length from the noise-free loop; the steady-state criterion is
    # meaningful only on the deterministic part of the response.
    probe = _LoopEngine(config, width)
    zero_block = np.zeros_like(r_period)
    warmup, resid = _steady_state_warmup(
        lambda: probe.run_period(r_period, zero_block)[1],
        min_periods=warmup_minimum,
    )

    master = seed if seed is not None else 0
    total = (warmup + p) * n
    nx_cols = []
    for i in range(width):
        m = first_realization + i
        nx_cols.append(generate_noise(config.process_noise_variance, total,
                                      derive_rng(master, "loop_process_noise", m)))
    nx_full = np.stack(nx_cols, axis=1)

    engine = _LoopEngine(config, width)
    for block in range(warmup):
        engine.run_period(r_period, nx_full[block * n:(block + 1) * n])
    u0_blocks = []
    y0_blocks = []
    for block in range(warmup, warmup + p):
        r_block = np.stack([r.period(block - warmup) for r in references], axis=1)
        u0_b, y0_b = engine.run_period(r_block, nx_full[block * n:(block + 1) * n])
        u0_blocks.append(u0_b)
        y0_blocks.append(y0_b)
    u0 = np.concatenate(u0_blocks, axis=0)
    y0 = np.concatenate(y0_blocks, axis=0)

    records = []
    for i, r in enumerate(references):
        m = first_realization + i
        nu = generate_noise(config.input_noise_variance, p * n,
                            derive_rng(master, "loop_input_noise", m))
        ny = generate_noise(config.output_noise_variance, p * n,
                            derive_rng(master, "loop_output_noise", m))
        records.append(ClosedLoopRecord(
            input_measured=PeriodicSignal(u0[:, i] + nu, n, p, fs),
            output_measured=PeriodicSignal(y0[:, i] + ny, n, p, fs),
            input_noise_free=u0[:, i].copy(),
            output_noise_free=y0[:, i].copy(),
            reference=r,
            warmup_periods=warmup,
            steady_state_residual=resid,
        ))
    return records


def simulate_closed_loop(config: ClosedLoopConfig, r: PeriodicSignal, seed=None,
                         realization: int = 0) -> ClosedLoopRecord:
    """Single-realization closed-loop simulation (see the batch variant)."""
    return simulate_closed_loop_batch(config, [r], seed,
                                      first_realization=realization)[0]


# ---------------------------------------------------------------------------
# System description files


@dataclass(frozen=True)
class SystemDescription:
    """Named blocks of a simulation setup, as stored in a system file."""

    dynamics: RationalLTI
    nonlinearity: PolynomialNonlinearity
    actuator: RationalLTI | None = None
    feedback: RationalLTI | None = None


def _parse_floats(text: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ConfigurationError(f"bad coefficient list {text!r}") from exc


def read_system_file(path) -> SystemDescription:
    """Parse a system description file (sections S, f and optional G_act, M)."""
    parser = configparser.ConfigParser()
    read = parser.read(str(path))
    if not read:
        raise ConfigurationError(f"cannot read system file {path}")
    try:
        def lti(section):
            return RationalLTI(
                b=_parse_floats(parser.get(section, "b")),
                a=_parse_floats(parser.get(section, "a", fallback="1.0")),
            )

        dynamics = lti("S")
        nonlinearity = PolynomialNonlinearity(
            coefficients=_parse_floats(parser.get("f", "coefficients"))
        )
        actuator = lti("G_act") if parser.has_section("G_act") else None
        feedback = lti("M") if parser.has_section("M") else None
    except (configparser.Error, KeyError) as exc:
        raise ConfigurationError(f"invalid system file {path}: {exc}") from exc
    return SystemDescription(dynamics=dynamics, nonlinearity=nonlinearity,
                             actuator=actuator, feedback=feedback)


def write_system_file(path, description: SystemDescription) -> None:
    parser = configparser.ConfigParser()

    def put(name, lti):
        parser[name] = {
            "b": ", ".join(format(v, ".17g") for v in lti.numerator),
            "a": ", ".join(format(v, ".17g") for v in lti.denominator),
        }

    put("S", description.dynamics)
    parser["f"] = {
        "coefficients": ", ".join(
            format(v, ".17g") for v in description.nonlinearity.coefficients
        )
    }
    if description.actuator is not None:
        put("G_act", description.actuator)
    if description.feedback is not None:
        put("M", description.feedback)
    with open(path, "w") as fh:
        parser.write(fh)
