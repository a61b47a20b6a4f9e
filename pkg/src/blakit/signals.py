"""Excitation signals, unitary DFT and power-spectrum estimation.

The frequency grid used throughout the package is the DFT bin grid
``f_k = k * f_s / N`` for one period of ``N`` samples at sampling
frequency ``f_s``.  The DFT pair is unitary (scaled by ``1/sqrt(N)`` in
both directions), so Parseval holds as a plain equality and the spectrum
of white noise with variance ``s2`` has ``E{|X_k|^2} = s2`` at every bin.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MultisineSpec",
    "PeriodicSignal",
    "Spectrum",
    "derive_rng",
    "generate_multisine",
    "dft",
    "inverse_dft",
    "generate_noise",
    "cross_power_spectrum",
    "read_signal_csv",
    "write_signal_csv",
    "read_spectrum_csv",
    "write_spectrum_csv",
]

_TWO_PI = 2.0 * np.pi


def derive_rng(master_seed: int, *key: int | str) -> np.random.Generator:
    """Derive an independent, reproducible random stream from a master seed.

    Splitting is counter based: every distinct ``key`` (a mix of labels and
    indices, e.g. ``("process_noise", m)``) yields a stream that is
    statistically independent of every other key's stream and of the parent.
    String parts are hashed with CRC-32 so the mapping is stable across runs
    and platforms.
    """
    parts = tuple(
        zlib.crc32(part.encode("utf8")) if isinstance(part, str) else int(part)
        for part in key
    )
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=parts))


def _as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class MultisineSpec:
    """Description of a random-phase multisine excitation.

    ``excited_bins`` are DFT bin indices ``k`` with ``0 < k < N/2``; DC and
    Nyquist are never excited so generated signals stay zero-mean and real.
    ``amplitudes[i]`` is the deterministic (real) amplitude of bin
    ``excited_bins[i]``; all amplitudes are bounded by ``amplitude_bound``.
    """

    samples_per_period: int
    sampling_frequency: float
    excited_bins: np.ndarray
    amplitudes: np.ndarray
    amplitude_bound: float = field(default=np.inf)

    def __post_init__(self):
        n = int(self.samples_per_period)
        if n < 4:
            raise ValueError(f"samples_per_period must be >= 4, got {n}")
        if not np.isfinite(self.sampling_frequency) or self.sampling_frequency <= 0:
            raise ValueError("sampling_frequency must be positive and finite")
        bins = np.asarray(self.excited_bins, dtype=int)
        if bins.size == 0:
            raise ValueError("excited-bin set is empty")
        if bins.size != np.unique(bins).size:
            raise ValueError("excited bins must be distinct")
        if np.any(bins <= 0) or np.any(bins >= n / 2):
            raise ValueError("excited bins must satisfy 0 < k < N/2")
        amps = np.asarray(self.amplitudes, dtype=float)
        if amps.shape != bins.shape:
            raise ValueError("amplitudes must align with excited_bins")
        bound = float(self.amplitude_bound)
        if not np.isfinite(bound) and np.isfinite(amps).all():
            bound = float(amps.max()) if amps.size else 0.0
        if np.any(amps < 0) or np.any(amps > bound) or not np.isfinite(amps).all():
            raise ValueError("amplitudes must satisfy 0 <= U_k <= amplitude_bound < inf")
        order = np.argsort(bins)
        object.__setattr__(self, "samples_per_period", n)
        object.__setattr__(self, "sampling_frequency", float(self.sampling_frequency))
        object.__setattr__(self, "excited_bins", bins[order])
        object.__setattr__(self, "amplitudes", amps[order])
        object.__setattr__(self, "amplitude_bound", bound)

    @classmethod
    def flat(cls, samples_per_period: int, sampling_frequency: float,
             excited_bins, rms: float = 1.0) -> "MultisineSpec":
        """Equal-amplitude multisine scaled to a target time-domain RMS.

        A flat spectrum over ``K`` bins has mean square ``2*K*U^2/N``, so the
        per-bin amplitude is ``rms * sqrt(N / (2*K))``.
        """
        bins = np.asarray(excited_bins, dtype=int)
        if bins.size == 0:
            raise ValueError("excited-bin set is empty")
        amp = float(rms) * np.sqrt(samples_per_period / (2.0 * bins.size))
        return cls(
            samples_per_period=samples_per_period,
            sampling_frequency=sampling_frequency,
            excited_bins=bins,
            amplitudes=np.full(bins.size, amp),
            amplitude_bound=amp,
        )


@dataclass(frozen=True)
class PeriodicSignal:
    """A real sampled signal holding an integer number of identical-length periods."""

    samples: np.ndarray
    samples_per_period: int
    period_count: int
    sampling_frequency: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        n = int(self.samples_per_period)
        p = int(self.period_count)
        if n <= 0 or p <= 0:
            raise ValueError("samples_per_period and period_count must be positive")
        if samples.ndim != 1 or samples.size != n * p:
            raise ValueError(
                f"expected {n * p} samples ({p} periods of {n}), got shape {samples.shape}"
            )
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "samples_per_period", n)
        object.__setattr__(self, "period_count", p)
        object.__setattr__(self, "sampling_frequency", float(self.sampling_frequency))

    def period(self, index: int = 0) -> np.ndarray:
        """One period of samples (a view, not a copy)."""
        if not 0 <= index < self.period_count:
            raise IndexError(f"period {index} out of range (P={self.period_count})")
        n = self.samples_per_period
        return self.samples[index * n:(index + 1) * n]

    def tile(self, period_count: int) -> "PeriodicSignal":
        """Replicate the first period into a new signal with ``period_count`` periods."""
        return PeriodicSignal(
            samples=np.tile(self.period(0), period_count),
            samples_per_period=self.samples_per_period,
            period_count=period_count,
            sampling_frequency=self.sampling_frequency,
        )


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT values on the full bin grid of one period."""

    bins: np.ndarray
    samples_per_period: int
    sampling_frequency: float

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=complex)
        n = int(self.samples_per_period)
        if bins.ndim != 1 or bins.size != n:
            raise ValueError(f"expected {n} bins, got shape {bins.shape}")
        object.__setattr__(self, "bins", bins)
        object.__setattr__(self, "samples_per_period", n)
        object.__setattr__(self, "sampling_frequency", float(self.sampling_frequency))

    @property
    def frequencies(self) -> np.ndarray:
        """Bin frequencies in Hz, ``f_k = k * f_s / N``."""
        n = self.samples_per_period
        return np.arange(n) * (self.sampling_frequency / n)

    def is_conjugate_symmetric(self, rtol: float = 1e-9) -> bool:
        n = self.samples_per_period
        mirrored = np.conj(self.bins[1:][::-1])
        scale = max(np.abs(self.bins).max(), 1e-300)
        ok = np.abs(self.bins[1:] - mirrored).max() <= rtol * scale
        return bool(ok and abs(self.bins[0].imag) <= rtol * scale
                    and (n % 2 or abs(self.bins[n // 2].imag) <= rtol * scale))


def _full_from_half(half: np.ndarray, n: int) -> np.ndarray:
    # Mirror the nonnegative-frequency half so conjugate symmetry is exact,
    # not merely up to FFT round-off.
    full = np.empty(n, dtype=complex)
    full[: n // 2 + 1] = half
    full[n // 2 + 1:] = np.conj(half[1: (n + 1) // 2][::-1])
    full[0] = full[0].real
    if n % 2 == 0:
        full[n // 2] = full[n // 2].real
    return full


def generate_multisine(spec: MultisineSpec, seed=None, phases=None) -> PeriodicSignal:
    """Generate one period of a random-phase multisine.

    The sample values are

        u(t) = (1/sqrt(N)) * sum_k 2 * U_k * cos(2*pi*k*t/N + phi_k)

    with the phases drawn independently and uniformly on ``[0, 2*pi)`` from
    the given seed (pass ``phases`` explicitly to pin them).  Under the
    unitary DFT the excited bins then read ``U_k * exp(1j*phi_k)`` exactly.
    Regenerating with the same seed is bit-identical.
    """
    n = spec.samples_per_period
    k = spec.excited_bins
    if phases is None:
        rng = _as_generator(seed)
        phases = rng.uniform(0.0, _TWO_PI, size=k.size)
    else:
        phases = np.asarray(phases, dtype=float)
        if phases.shape != k.shape:
            raise ValueError("phases must align with excited_bins")
    half = np.zeros(n // 2 + 1, dtype=complex)
    half[k] = spec.amplitudes * np.exp(1j * phases)
    # irfft realizes the cosine sum exactly (same linear combination, O(N log N)).
    samples = np.fft.irfft(half, n=n) * np.sqrt(n)
    return PeriodicSignal(
        samples=samples,
        samples_per_period=n,
        period_count=1,
        sampling_frequency=spec.sampling_frequency,
    )


def dft(sig: PeriodicSignal, period: int = 0) -> Spectrum:
    """Unitary forward DFT of one designated period of a real signal."""
    x = sig.period(period)
    n = sig.samples_per_period
    half = np.fft.rfft(x) / np.sqrt(n)
    return Spectrum(
        bins=_full_from_half(half, n),
        samples_per_period=n,
        sampling_frequency=sig.sampling_frequency,
    )


def inverse_dft(spectrum: Spectrum) -> np.ndarray:
    """Unitary inverse DFT; returns the real time samples of one period.

    The spectrum must be conjugate symmetric (spectra of real signals are,
    exactly, by construction of :func:`dft`).
    """
    if not spectrum.is_conjugate_symmetric():
        raise ValueError("spectrum is not conjugate symmetric; not a real signal's DFT")
    n = spectrum.samples_per_period
    half = spectrum.bins[: n // 2 + 1] * np.sqrt(n)
    return np.fft.irfft(half, n=n)


def generate_noise(variance: float, length: int, seed=None, coloring=None) -> np.ndarray:
    """Zero-mean Gaussian noise, optionally shaped by a stable coloring filter.

    The white sequence has the requested variance before filtering.  When a
    coloring filter is given, enough warm-up samples are run and discarded
    (``max(10 * time constant, 1000)``) that the emitted stretch is
    stationary.  Deterministic per seed; distinct seeds give independent
    streams.
    """
    variance = float(variance)
    if not np.isfinite(variance) or variance < 0:
        raise ValueError("variance must be finite and >= 0")
    length = int(length)
    if length < 0:
        raise ValueError("length must be >= 0")
    if variance == 0.0:
        return np.zeros(length)
    rng = _as_generator(seed)
    if coloring is None:
        return np.sqrt(variance) * rng.standard_normal(length)
    warmup = coloring.settling_length()
    white = np.sqrt(variance) * rng.standard_normal(length + warmup)
    return coloring.filter(white)[warmup:]


def cross_power_spectrum(x_records, y_records) -> np.ndarray:
    """Record-averaged cross-power ``mean_r Y_r(k) * conj(X_r(k))`` per bin.

    With ``y_records is x_records`` this is the auto-power estimate, which is
    real and nonnegative at every bin.
    """
    x_records = list(x_records)
    y_records = list(y_records)
    if not x_records or len(x_records) != len(y_records):
        raise ValueError("need equal, nonzero numbers of x and y records")
    n = x_records[0].samples_per_period
    fs = x_records[0].sampling_frequency
    for rec in (*x_records, *y_records):
        if rec.samples_per_period != n or rec.sampling_frequency != fs:
            raise ValueError("records do not share one bin grid")
    acc = np.zeros(n, dtype=complex)
    for x, y in zip(x_records, y_records):
        if y is x:
            acc += np.abs(x.bins) ** 2  # auto-power: exactly real, nonnegative
        else:
            acc += y.bins * np.conj(x.bins)
    return acc / len(x_records)


# ---------------------------------------------------------------------------
# CSV serialization (round-trip precision, 17 significant digits)

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_signal_csv(path, sig: PeriodicSignal) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_index", "time_s", "value"])
        dt = 1.0 / sig.sampling_frequency
        for i, v in enumerate(sig.samples):
            writer.writerow([i, _fmt(i * dt), _fmt(v)])


def read_signal_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:1] != ["sample_index"]:
            raise ValueError(f"not a signal CSV: header {header!r}")
        return np.array([float(row[2]) for row in reader])


def write_spectrum_csv(path, spectrum: Spectrum) -> None:
    freqs = spectrum.frequencies
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_index", "frequency_hz", "real", "imag"])
        for k, (f, v) in enumerate(zip(freqs, spectrum.bins)):
            writer.writerow([k, _fmt(f), _fmt(v.real), _fmt(v.imag)])


def read_spectrum_csv(path) -> Spectrum:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["bin_index", "frequency_hz"]:
            raise ValueError(f"not a spectrum CSV: header {header!r}")
        rows = [(float(r[1]), complex(float(r[2]), float(r[3]))) for r in reader]
    n = len(rows)
    if n < 2:
        raise ValueError("spectrum CSV must hold at least two bins")
    fs = rows[1][0] * n
    return Spectrum(
        bins=np.array([v for _, v in rows]),
        samples_per_period=n,
        sampling_frequency=fs,
    )
