# Post-processing of simulated traces: spectral mode extraction, dressed-state
# (Autler-Townes) mode predictions and the square-root scaling fit.

from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy.signal import find_peaks, get_window

from errors import DomainError, FitError, ResolutionError, ShapeError
from experiments import ScanResult, count_rabi_cycles
from rydberg_model import rabi_from_intensity

logger = logging.getLogger(__name__)

MIN_SPECTRUM_SAMPLES = 32
PEAK_THRESHOLD = 0.1  # relative to the strongest peak
MIN_FIT_ROWS = 8
MIN_RESOLVED_BINS = 2  # slowest frequency treated as an oscillation, in FFT bins


@dataclass(frozen=True)
class ModeSpectrum:
    frequencies: np.ndarray  # rad/s, ascending
    amplitudes: np.ndarray
    resolution: float        # rad/s

    def __len__(self):
        return len(self.frequencies)

    def strongest(self):
        if len(self) == 0:
            return None
        return float(self.frequencies[int(np.argmax(self.amplitudes))])

    def resolved(self, min_bins=MIN_RESOLVED_BINS) -> "ModeSpectrum":
        """Modes at least min_bins resolution bins above zero frequency."""
        keep = self.frequencies >= min_bins * self.resolution
        return ModeSpectrum(self.frequencies[keep], self.amplitudes[keep], self.resolution)


@dataclass(frozen=True)
class SqrtFit:
    a: float
    r_squared: float
    residuals: np.ndarray
    rows: tuple
    frequencies: np.ndarray
    combined_rabi: np.ndarray

    def record(self) -> dict:
        return {
            "a": self.a,
            "r_squared": self.r_squared,
            "rows": list(self.rows),
            "frequencies_rad_s": self.frequencies.tolist(),
            "combined_rabi_rad_s": self.combined_rabi.tolist(),
            "residuals_rad_s": self.residuals.tolist(),
            "frequency_convention": "rho33 angular oscillation frequency; the Im(rho21) frequency is half of it",
        }


def _uniform_step(times) -> float:
    steps = np.diff(times)
    if steps.size == 0 or np.any(steps <= 0):
        raise ShapeError("time samples must be strictly increasing")
    if np.max(np.abs(steps - steps.mean())) > 1e-6 * steps.mean():
        raise ShapeError("time samples are not uniformly spaced")
    return float(steps.mean())


def dominant_frequencies(series, times, max_modes=4, threshold=PEAK_THRESHOLD) -> ModeSpectrum:
    """Hann-windowed FFT peaks with parabolic interpolation of the log magnitude."""
    series = np.asarray(series, dtype=float)
    times = np.asarray(times, dtype=float)
    if series.shape != times.shape:
        raise ShapeError(f"series and times differ in shape: {series.shape} vs {times.shape}")
    if series.size < MIN_SPECTRUM_SAMPLES:
        raise ShapeError(f"need at least {MIN_SPECTRUM_SAMPLES} samples, got {series.size}")
    step = _uniform_step(times)
    n = series.size
    resolution = 2.0 * math.pi / (n * step)

    window = get_window("hann", n)
    spectrum = np.abs(np.fft.rfft((series - series.mean()) * window))
    empty = ModeSpectrum(np.zeros(0), np.zeros(0), resolution)
    scale = max(np.abs(series).max(), 1e-300)
    if spectrum.max() <= 1e-10 * scale * window.sum():
        return empty

    peaks, _ = find_peaks(spectrum)
    if peaks.size == 0:
        return empty
    strongest = spectrum[peaks].max()
    peaks = peaks[spectrum[peaks] >= threshold * strongest]
    peaks = peaks[np.argsort(spectrum[peaks])[::-1]][:max_modes]

    freqs, amps = [], []
    log_spec = np.log(np.maximum(spectrum, 1e-300))
    for k in peaks:
        a, b, c = log_spec[k - 1], log_spec[k], log_spec[k + 1]
        denom = a - 2.0 * b + c
        offset = 0.5 * (a - c) / denom if denom != 0 else 0.0
        freqs.append((k + offset) * resolution)
        amps.append(2.0 * math.exp(b - 0.25 * (a - c) * offset) / window.sum())
    order = np.argsort(freqs)
    return ModeSpectrum(np.array(freqs)[order], np.array(amps)[order], resolution)


def dressed_energies(omega_480, delta_480):
    root = math.sqrt(delta_480 ** 2 + omega_480 ** 2)
    return 0.5 * (-delta_480 + root), 0.5 * (-delta_480 - root)


def autler_townes_modes(omega_480, delta_480):
    """(slow, fast) probe-coherence oscillation frequencies of the dressed 2-3 pair."""
    if omega_480 < 0:
        raise DomainError(f"omega_480 must be nonnegative, got {omega_480}")
    e_plus, e_minus = dressed_energies(omega_480, delta_480)
    return min(abs(e_plus), abs(e_minus)), max(abs(e_plus), abs(e_minus))


def fit_sqrt_law(combined_rabi, frequencies, rows=None) -> SqrtFit:
    """Least squares f = a * x through the origin."""
    x = np.asarray(combined_rabi, dtype=float)
    f = np.asarray(frequencies, dtype=float)
    if x.size < 2 or x.shape != f.shape:
        raise FitError(f"need at least two matching points, got {x.size} and {f.size}")
    a = float(np.dot(x, f) / np.dot(x, x))
    residuals = f - a * x
    ss_res = float(np.dot(residuals, residuals))
    ss_tot = float(np.sum((f - f.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return SqrtFit(a=a, r_squared=r_squared, residuals=residuals,
                   rows=tuple(range(x.size)) if rows is None else tuple(rows),
                   frequencies=f, combined_rabi=x)


def fit_sqrt_scaling(scan: ScanResult, calibration, omega_780, window=None,
                     prominence=0.02, min_rows=MIN_FIT_ROWS) -> SqrtFit:
    """Fit the dominant rho33 frequency per row against sqrt(Omega780^2 + Omega480(I)^2).

    Rows without a mode at least MIN_RESOLVED_BINS resolution bins above
    zero frequency are left out of the fit.
    """
    if scan.param_name != "intensity":
        raise FitError(f"square-root fit needs an intensity scan, got a {scan.param_name} scan")
    mask = np.ones(len(scan.times), dtype=bool)
    if window is not None:
        mask = (scan.times >= window[0]) & (scan.times <= window[1])
    times = scan.times[mask]

    rows, combined, frequencies = [], [], []
    for index, intensity in enumerate(scan.params):
        omega_480 = rabi_from_intensity(float(intensity), calibration)
        if omega_480 == 0.0:
            continue
        series = scan.rho33[index, mask]
        try:
            cycles, _ = count_rabi_cycles(series, prominence)
            frequency = dominant_frequencies(series, times).resolved().strongest()
        except (ResolutionError, ShapeError) as exc:
            logger.warning(f"row {index} skipped: {exc}")
            continue
        if cycles < 1 or frequency is None:
            logger.debug(f"row {index} skipped: no resolved oscillation")
            continue
        rows.append(index)
        combined.append(math.sqrt(omega_780 ** 2 + omega_480 ** 2))
        frequencies.append(frequency)

    if len(rows) < min_rows:
        raise FitError(f"only {len(rows)} oscillatory rows, need {min_rows}")
    fit = fit_sqrt_law(combined, frequencies, rows)
    logger.info(f"sqrt scaling fit over {len(rows)} rows: a = {fit.a:.4f}, R^2 = {fit.r_squared:.4f}")
    return fit


def frequency_ratio(rho33, im_rho21, times) -> float:
    """Strongest resolved rho33 frequency over strongest resolved Im(rho21) frequency."""
    population = dominant_frequencies(rho33, times)
    coherence = dominant_frequencies(im_rho21, times)
    if len(population) == 0 or len(coherence) == 0:
        raise FitError("no oscillation to compare")
    fast = population.resolved().strongest()
    slow = coherence.resolved().strongest()
    if fast is None or slow is None:
        raise ResolutionError(
            f"no mode above {MIN_RESOLVED_BINS} resolution bins ({MIN_RESOLVED_BINS * population.resolution:.3e} rad/s)"
        )
    return fast / slow
