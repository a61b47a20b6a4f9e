"""Nonparametric best-linear-approximation estimators and output decomposition.

The robust estimator works on multiple periods (P) of multiple excitation
realizations (M).  Period-to-period scatter feeds the noise variance
estimate, realization-to-realization scatter the total variance estimate;
both carry the extra ``M`` and ``P`` factors so they quantify the
variability of the final averaged frequency response, not of a single
period.  Bins where the excitation power is zero are reported as undefined
(NaN markers plus a ``defined`` mask) rather than zero or an exception.
"""

from __future__ import annotations

import csv
import json
import pathlib
from dataclasses import dataclass

import numpy as np

from .signals import PeriodicSignal, Spectrum, cross_power_spectrum, derive_rng, dft, inverse_dft

__all__ = [
    "UnsupportedOperationError",
    "ExperimentRecord",
    "BlaEstimate",
    "Decomposition",
    "robust_bla",
    "robust_bla_closed_loop",
    "spectral_bla",
    "decompose_output",
    "predict_variances",
    "write_bla_csv",
    "read_bla_csv",
    "write_record_bundle",
    "read_record_bundle",
]


class UnsupportedOperationError(TypeError):
    """The supplied object cannot perform the requested controlled re-run."""


@dataclass(frozen=True)
class ExperimentRecord:
    """Spectra of one multi-realization, multi-period experiment.

    ``input_spectra[m]`` is the input DFT of realization ``m`` (the input is
    periodic and noise free in open loop, so one spectrum per realization),
    ``output_spectra[m, p]`` the output DFT of period ``p``.  Closed-loop
    records additionally carry the reference spectra and per-period input
    spectra needed by the indirect estimator.
    """

    input_spectra: np.ndarray
    output_spectra: np.ndarray
    excited_bins: np.ndarray
    samples_per_period: int
    sampling_frequency: float
    reference_spectra: np.ndarray | None = None
    input_spectra_per_period: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.input_spectra, dtype=complex)
        y = np.asarray(self.output_spectra, dtype=complex)
        n = int(self.samples_per_period)
        bins = np.asarray(self.excited_bins, dtype=int)
        if u.ndim != 2 or y.ndim != 3:
            raise ValueError("input_spectra must be (M, N), output_spectra (M, P, N)")
        if u.shape[0] != y.shape[0] or u.shape[1] != n or y.shape[2] != n:
            raise ValueError("spectra shapes disagree with M and N")
        if bins.size == 0 or bins.min() < 0 or bins.max() >= n:
            raise ValueError("excited bins must be inside the bin grid")
        object.__setattr__(self, "input_spectra", u)
        object.__setattr__(self, "output_spectra", y)
        object.__setattr__(self, "excited_bins", np.unique(bins))
        object.__setattr__(self, "samples_per_period", n)
        object.__setattr__(self, "sampling_frequency", float(self.sampling_frequency))
        for name, want_ndim in (("reference_spectra", 2), ("input_spectra_per_period", 3)):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value, dtype=complex)
            if value.ndim != want_ndim or value.shape[0] != u.shape[0] or value.shape[-1] != n:
                raise ValueError(f"{name} shape {value.shape} inconsistent with record")
            if want_ndim == 3 and value.shape[1] != y.shape[1]:
                raise ValueError(f"{name} period count inconsistent with record")
            object.__setattr__(self, name, value)

    @property
    def realization_count(self) -> int:
        return self.input_spectra.shape[0]

    @property
    def period_count(self) -> int:
        return self.output_spectra.shape[1]


@dataclass(frozen=True)
class BlaEstimate:
    """Frequency response estimate with noise and total variance spectra.

    Defined on the excited bins only; undefined bins hold NaN.  Both
    variances quantify the variance of ``g_bla`` itself: ``var_noise`` the
    part due to aperiodic (process plus output) noise, ``var_total``
    additionally the part due to the excitation-dependent nonlinear
    distortion.
    """

    excited_bins: np.ndarray
    g_bla: np.ndarray
    var_noise: np.ndarray
    var_total: np.ndarray
    realization_count: int
    period_count: int
    samples_per_period: int
    sampling_frequency: float

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.g_bla)

    @property
    def frequencies(self) -> np.ndarray:
        return self.excited_bins * (self.sampling_frequency / self.samples_per_period)


def robust_bla(record: ExperimentRecord) -> BlaEstimate:
    """Average per-period frequency-response ratios over periods, then realizations.

    With ``g_mp = Y[m,p] / U[m]`` at every excited bin:

        g_m       = mean_p g_mp
        g_bla     = mean_m g_m
        var_noise = sum_{m,p} |g_m - g_mp|^2 / (M^2 P (P-1))
        var_total = sum_m |g_bla - g_m|^2 / (M (M-1))
    """
    m_count = record.realization_count
    p_count = record.period_count
    if m_count < 2 or p_count < 2:
        raise ValueError("robust estimation needs M >= 2 realizations and P >= 2 periods")
    bins = record.excited_bins
    u = record.input_spectra[:, bins]
    y = record.output_spectra[:, :, bins]
    defined = np.all(u != 0, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g_mp = y / u[:, None, :]
    g_mp[:, :, ~defined] = 0.0  # masked as NaN after averaging
    g_m = g_mp.mean(axis=1)
    g = g_m.mean(axis=0)
    var_noise = np.abs(g_m[:, None, :] - g_mp) ** 2
    var_noise = var_noise.sum(axis=(0, 1)) / (m_count ** 2 * p_count * (p_count - 1))
    var_total = (np.abs(g[None, :] - g_m) ** 2).sum(axis=0) / (m_count * (m_count - 1))
    return _masked_estimate(record, g, var_noise, var_total, defined)


def robust_bla_closed_loop(record: ExperimentRecord) -> BlaEstimate:
    """Indirect (reference-based) robust estimate for closed-loop records.

    The point estimate is the ratio of realization-averaged reference
    cross-spectra,

        g_bla = mean_m(Ybar[m] conj(R[m])) / mean_m(Ubar[m] conj(R[m])),

    which stays consistent in feedback because the reference is independent
    of every noise source; averaging before the division is what removes the
    bias a per-realization ratio would keep.  The variance spectra reuse the
    open-loop M/P sample-variance structure on linearized per-period
    quantities ``(num - g_bla*(den - den_mean)) / den_mean`` whose
    realization mean is exactly ``g_bla``; for constant-amplitude multisine
    references with period-constant input this reduces bin for bin to the
    open-loop estimator.
    """
    if record.reference_spectra is None or record.input_spectra_per_period is None:
        raise ValueError("closed-loop estimation needs reference and per-period input spectra")
    m_count = record.realization_count
    p_count = record.period_count
    if m_count < 2 or p_count < 2:
        raise ValueError("robust estimation needs M >= 2 realizations and P >= 2 periods")
    bins = record.excited_bins
    r = record.reference_spectra[:, bins]
    num_mp = record.output_spectra[:, :, bins] * np.conj(r)[:, None, :]
    den_mp = record.input_spectra_per_period[:, :, bins] * np.conj(r)[:, None, :]
    num_m = num_mp.mean(axis=1)
    den_m = den_mp.mean(axis=1)
    den_bar = den_m.mean(axis=0)
    defined = np.all(r != 0, axis=0) & (den_bar != 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        g = num_m.mean(axis=0) / den_bar
        g_m = (num_m - g[None, :] * (den_m - den_bar[None, :])) / den_bar
        g_mp = (num_mp - g[None, None, :] * (den_mp - den_bar[None, None, :])) / den_bar
    g_m[:, ~defined] = 0.0
    g_mp[:, :, ~defined] = 0.0
    var_noise = np.abs(g_m[:, None, :] - g_mp) ** 2
    var_noise = var_noise.sum(axis=(0, 1)) / (m_count ** 2 * p_count * (p_count - 1))
    var_total = (np.abs(g[None, :] - g_m) ** 2).sum(axis=0) / (m_count * (m_count - 1))
    return _masked_estimate(record, g, var_noise, var_total, defined)


def _masked_estimate(record, g, var_noise, var_total, defined) -> BlaEstimate:
    g = np.where(defined, g, complex(np.nan, np.nan))
    var_noise = np.where(defined, var_noise, np.nan)
    var_total = np.where(defined, var_total, np.nan)
    return BlaEstimate(
        excited_bins=record.excited_bins,
        g_bla=g,
        var_noise=var_noise,
        var_total=var_total,
        realization_count=record.realization_count,
        period_count=record.period_count,
        samples_per_period=record.samples_per_period,
        sampling_frequency=record.sampling_frequency,
    )


def spectral_bla(u_records, y_records) -> np.ndarray:
    """Cross- over auto-power ratio from segmented stationary records.

    Meant for Gaussian-noise excitation where no period structure exists.
    Returns a full-grid complex array with NaN at bins of zero input power.
    """
    u_records = list(u_records)
    y_records = list(y_records)
    if len(u_records) < 2:
        raise ValueError("need at least two records")
    s_yu = cross_power_spectrum(u_records, y_records)
    s_uu = cross_power_spectrum(u_records, u_records).real
    with np.errstate(divide="ignore", invalid="ignore"):
        g = s_yu / s_uu
    g[s_uu == 0] = complex(np.nan, np.nan)
    return g


@dataclass(frozen=True)
class Decomposition:
    """Per-sample output constituents and their per-bin variance spectra.

    ``y_bla + y_nonlinear + y_process + y_output_noise`` rebuilds the
    measured output ``y_total`` to round-off by construction.  The variance
    spectra are sample estimates on the full bin grid: the process and
    output-noise spectra from their ensembles, the nonlinear one from the
    single supplied excitation (one squared sample, unbiased but coarse).
    """

    y_bla: np.ndarray
    y_nonlinear: np.ndarray
    y_process: np.ndarray
    y_output_noise: np.ndarray
    y_total: np.ndarray
    var_nonlinear: np.ndarray
    var_process: np.ndarray
    var_noise: np.ndarray
    ensemble_size: int


def _unitary_dft_block(x: np.ndarray, n: int) -> np.ndarray:
    return np.fft.fft(x.reshape(-1, n), axis=-1) / np.sqrt(n)


def decompose_output(simulator, u: PeriodicSignal, ensemble_size: int,
                     g_bla: np.ndarray, seed=None) -> Decomposition:
    """Split a measured output into its four constituents by re-simulation.

    One measured run fixes the realization; subtracting its recorded output
    noise gives the noise-free output exactly (the output noise is
    additive).  Averaging ``ensemble_size`` re-runs with fresh process noise
    and the output noise disabled estimates the noise-averaged output; the
    supplied reference response then separates the linear part from the
    nonlinear distortion.
    """
    if ensemble_size < 100:
        raise ValueError("ensemble_size must be >= 100 for a usable noise average")
    for attr in ("run", "draw_output_noise"):
        if not callable(getattr(simulator, attr, None)):
            raise UnsupportedOperationError(
                f"simulator lacks {attr}(); controlled re-simulation is impossible"
            )
    n = u.samples_per_period
    p = u.period_count
    master = seed if seed is not None else 0

    measured = simulator.run(
        u,
        process_noise_rng=derive_rng(master, "decompose", "measured_nx"),
        output_noise_rng=derive_rng(master, "decompose", "measured_ny"),
    )
    y_total = measured.output.samples
    y_bar = y_total - measured.output_noise

    ensemble = np.empty((ensemble_size, p * n))
    for i in range(ensemble_size):
        rec = simulator.run(
            u,
            process_noise_rng=derive_rng(master, "decompose", "ensemble", i),
            include_output_noise=False,
        )
        ensemble[i] = rec.output.samples
    y_bar_bar = ensemble.mean(axis=0)

    g_bla = np.asarray(g_bla, dtype=complex)
    if g_bla.shape != (n,):
        raise ValueError(f"g_bla must have one value per bin, expected shape ({n},)")
    u_spec = dft(u)
    bla_period = inverse_dft(Spectrum(
        bins=_symmetrized(g_bla * u_spec.bins, n),
        samples_per_period=n,
        sampling_frequency=u.sampling_frequency,
    ))
    y_bla = np.tile(bla_period, p)

    y_nonlinear = y_bar_bar - y_bla
    y_process = y_bar - y_bar_bar
    y_output_noise = measured.output_noise

    ensemble_spectra = _unitary_dft_block(ensemble, n)
    ensemble_spectra -= ensemble_spectra.mean(axis=0)
    var_process = (np.abs(ensemble_spectra) ** 2).sum(axis=0) / (ensemble_size * p - 1)

    noise_draws = np.stack([
        simulator.draw_output_noise(n, derive_rng(master, "decompose", "noise_var", j))
        for j in range(ensemble_size)
    ])
    noise_spec = _unitary_dft_block(noise_draws, n)
    noise_spec -= noise_spec.mean(axis=0)
    var_noise = (np.abs(noise_spec) ** 2).sum(axis=0) / max(ensemble_size - 1, 1)

    var_nonlinear = (np.abs(_unitary_dft_block(y_nonlinear, n)) ** 2).mean(axis=0)

    return Decomposition(
        y_bla=y_bla,
        y_nonlinear=y_nonlinear,
        y_process=y_process,
        y_output_noise=y_output_noise,
        y_total=y_total,
        var_nonlinear=var_nonlinear,
        var_process=var_process,
        var_noise=var_noise,
        ensemble_size=ensemble_size,
    )


def _symmetrized(bins: np.ndarray, n: int) -> np.ndarray:
    half = bins[: n // 2 + 1].copy()
    full = np.empty(n, dtype=complex)
    full[: n // 2 + 1] = half
    full[n // 2 + 1:] = np.conj(half[1: (n + 1) // 2][::-1])
    full[0] = full[0].real
    if n % 2 == 0:
        full[n // 2] = full[n // 2].real
    return full


def predict_variances(var_noise_spectrum, var_process_spectrum, var_nonlinear_spectrum,
                      input_power, realization_count: int, period_count: int):
    """Expected values of the robust method's two variance estimates.

        E{var_noise} = (s2_n + s2_p) / (M P |U|^2)
        E{var_total} = s2_s / (M |U|^2) + (s2_n + s2_p) / (M P |U|^2)

    Bins with zero input power are undefined (NaN).
    """
    s2_n = np.asarray(var_noise_spectrum, dtype=float)
    s2_p = np.asarray(var_process_spectrum, dtype=float)
    s2_s = np.asarray(var_nonlinear_spectrum, dtype=float)
    u2 = np.asarray(input_power, dtype=float)
    for name, arr in (("var_noise_spectrum", s2_n), ("var_process_spectrum", s2_p),
                      ("var_nonlinear_spectrum", s2_s), ("input_power", u2)):
        if np.any(arr < 0):
            raise ValueError(f"{name} must be >= 0")
    m = int(realization_count)
    p = int(period_count)
    with np.errstate(divide="ignore", invalid="ignore"):
        pred_noise = (s2_n + s2_p) / (m * p * u2)
        pred_total = s2_s / (m * u2) + pred_noise
    undefined = np.broadcast_to(u2 == 0, pred_noise.shape)
    pred_noise = np.where(undefined, np.nan, pred_noise)
    pred_total = np.where(undefined, np.nan, pred_total)
    return pred_noise, pred_total


# ---------------------------------------------------------------------------
# Serialization: BLA result CSV and experiment record bundles


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_bla_csv(path, estimate: BlaEstimate) -> None:
    freqs = estimate.frequencies
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_index", "frequency_hz", "g_real", "g_imag",
                         "var_noise", "var_total", "defined_flag"])
        for i, k in enumerate(estimate.excited_bins):
            g = estimate.g_bla[i]
            writer.writerow([
                int(k), _fmt(freqs[i]), _fmt(g.real), _fmt(g.imag),
                _fmt(estimate.var_noise[i]), _fmt(estimate.var_total[i]),
                int(bool(np.isfinite(g))),
            ])


def read_bla_csv(path, realization_count: int = 0, period_count: int = 0,
                 samples_per_period: int = 0, sampling_frequency: float = 0.0) -> BlaEstimate:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["bin_index", "frequency_hz"]:
            raise ValueError(f"not a BLA result CSV: header {header!r}")
        rows = list(reader)
    bins = np.array([int(r[0]) for r in rows])
    g = np.array([complex(float(r[2]), float(r[3])) for r in rows])
    var_n = np.array([float(r[4]) for r in rows])
    var_t = np.array([float(r[5]) for r in rows])
    return BlaEstimate(
        excited_bins=bins, g_bla=g, var_noise=var_n, var_total=var_t,
        realization_count=realization_count, period_count=period_count,
        samples_per_period=samples_per_period, sampling_frequency=sampling_frequency,
    )


def write_record_bundle(directory, record: ExperimentRecord) -> None:
    """Write an experiment record as per-(m, p) spectrum CSVs plus a manifest."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n = record.samples_per_period
    fs = record.sampling_frequency

    def spectrum(bins):
        return Spectrum(bins=bins, samples_per_period=n, sampling_frequency=fs)

    from .signals import write_spectrum_csv

    for m in range(record.realization_count):
        write_spectrum_csv(directory / f"u_m{m:03d}.csv", spectrum(record.input_spectra[m]))
        for p in range(record.period_count):
            write_spectrum_csv(directory / f"y_m{m:03d}_p{p:02d}.csv",
                               spectrum(record.output_spectra[m, p]))
            if record.input_spectra_per_period is not None:
                write_spectrum_csv(directory / f"u_m{m:03d}_p{p:02d}.csv",
                                   spectrum(record.input_spectra_per_period[m, p]))
        if record.reference_spectra is not None:
            write_spectrum_csv(directory / f"r_m{m:03d}.csv",
                               spectrum(record.reference_spectra[m]))

    manifest = {
        "realizations": record.realization_count,
        "periods": record.period_count,
        "samples_per_period": n,
        "sampling_frequency_hz": fs,
        "excited_bins": record.excited_bins.tolist(),
        "closed_loop": record.reference_spectra is not None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_record_bundle(directory) -> ExperimentRecord:
    directory = pathlib.Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    m_count = manifest["realizations"]
    p_count = manifest["periods"]
    n = manifest["samples_per_period"]
    fs = manifest["sampling_frequency_hz"]

    from .signals import read_spectrum_csv

    u = np.empty((m_count, n), dtype=complex)
    y = np.empty((m_count, p_count, n), dtype=complex)
    closed = manifest.get("closed_loop", False)
    r = np.empty((m_count, n), dtype=complex) if closed else None
    u_pp = np.empty((m_count, p_count, n), dtype=complex) if closed else None
    for m in range(m_count):
        u[m] = read_spectrum_csv(directory / f"u_m{m:03d}.csv").bins
        for p in range(p_count):
            y[m, p] = read_spectrum_csv(directory / f"y_m{m:03d}_p{p:02d}.csv").bins
            if closed:
                u_pp[m, p] = read_spectrum_csv(directory / f"u_m{m:03d}_p{p:02d}.csv").bins
        if closed:
            r[m] = read_spectrum_csv(directory / f"r_m{m:03d}.csv").bins
    return ExperimentRecord(
        input_spectra=u, output_spectra=y,
        excited_bins=np.asarray(manifest["excited_bins"], dtype=int),
        samples_per_period=n, sampling_frequency=fs,
        reference_spectra=r, input_spectra_per_period=u_pp,
    )
