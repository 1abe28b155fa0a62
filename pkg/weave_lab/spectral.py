"""
    Fourier-transform thread density estimation on 1 x 1 cm patches.
"""
import logging

import numpy as np
from scipy import fft

from weave_lab.errors import NoPeak, EmptyAfterFilter, NonPositiveReference

log = logging.getLogger(__name__)

FFT_POINTS = 512

#: Search band, threads/cm.
BAND = (4.0, 30.0)

#: Off-axis tolerance, in frequency bins, when scanning one orientation.
OFF_AXIS_BINS = 2

#: A peak must exceed this multiple of the in-band median.
PEAK_TO_MEDIAN = 3.0

#: Patches flatter than this (peak-to-peak intensity) have no spectrum.
FLAT_TOLERANCE = 1e-6

#: Search radius, in bins, around half the peak frequency when looking
#: for a weaker fundamental below a dominant second harmonic.
FUNDAMENTAL_BINS = 2

#: The fundamental must also reach this share of the dominant peak.
FUNDAMENTAL_SHARE = 0.15

#: Agreement threshold used by the semi-supervised filter.
AGREEMENT_TOLERANCE = 0.04


class SpectralEstimate(object):
    """
        FT densities of one patch.

        `v_density`, `h_density`
            Vertical and horizontal thread densities in threads/cm.
        `v_peak_mag`, `h_peak_mag`
            Peak magnitude divided by the in-band spectral median.
    """
    def __init__(self, v_density, h_density, v_peak_mag, h_peak_mag):
        self.v_density = v_density
        self.h_density = h_density
        self.v_peak_mag = v_peak_mag
        self.h_peak_mag = h_peak_mag

    def __iter__(self):
        return iter((self.v_density, self.h_density))

    def __repr__(self):
        return '<SpectralEstimate v=%.3f h=%.3f>' % (self.v_density,
                                                     self.h_density)


def _hann(n):
    return np.hanning(n)


def magnitude_spectrum(pixels):
    """
        Magnitude of the 512-point 2D FFT of the mean-removed,
        Hann-windowed patch.
    """
    values = pixels - pixels.mean()
    window = np.outer(_hann(values.shape[0]), _hann(values.shape[1]))
    spectrum = fft.fft2(values * window, s=(FFT_POINTS, FFT_POINTS))
    return np.abs(spectrum)


def band_bins(ppcm, band=BAND, points=FFT_POINTS):
    """ Inclusive range of positive frequency bins inside the band. """
    lo = int(np.ceil(band[0] * points / ppcm))
    hi = int(np.floor(band[1] * points / ppcm))
    return lo, hi


def _axis_profile(magnitude, lo, hi):
    """
        For every positive frequency along the second axis, the largest
        magnitude within +/- OFF_AXIS_BINS of the first axis.
    """
    rows = np.arange(-OFF_AXIS_BINS, OFF_AXIS_BINS + 1) % magnitude.shape[0]
    # One extra bin on each side for the interpolation neighbours.
    return magnitude[rows][:, lo - 1:hi + 2].max(axis=0)


def _refine(profile, index):
    """ Quadratic interpolation of the peak position over three bins. """
    left, centre, right = profile[index - 1], profile[index], profile[index + 1]
    denominator = left - 2.0 * centre + right
    if denominator >= 0:
        return 0.0
    offset = 0.5 * (left - right) / denominator
    return float(np.clip(offset, -0.5, 0.5))


def _fundamental(in_band, lo, peak, threshold):
    """
        Index in `in_band` of a local maximum near half the frequency of
        `peak` that clears `threshold`, or None.
    """
    first = int(round(0.5 * (lo + peak))) - lo - FUNDAMENTAL_BINS
    if first < 0:
        return None

    window = in_band[first:first + 2 * FUNDAMENTAL_BINS + 1]
    index = int(np.argmax(window))
    if index in (0, len(window) - 1) or not window[index] > threshold:
        return None
    return first + index


def _axis_density(magnitude, ppcm, orientation, fundamental=False):
    lo, hi = band_bins(ppcm)
    profile = _axis_profile(magnitude, lo, hi)
    in_band = profile[1:-1]

    peak = int(np.argmax(in_band))
    peak_value = in_band[peak]
    median = float(np.median(in_band))

    if not peak_value > PEAK_TO_MEDIAN * median:
        raise NoPeak('No %s peak above %g x median' % (orientation, PEAK_TO_MEDIAN))

    if fundamental:
        threshold = max(PEAK_TO_MEDIAN * median, FUNDAMENTAL_SHARE * peak_value)
        half = _fundamental(in_band, lo, peak, threshold)
        if half is not None:
            log.debug('%s peak at bin %d is a harmonic of bin %d',
                      orientation, lo + peak, lo + half)
            peak = half
            peak_value = in_band[half]

    bin_position = lo + peak + _refine(profile, peak + 1)
    density = bin_position * ppcm / FFT_POINTS
    density = float(np.clip(density, BAND[0], BAND[1]))

    ratio = peak_value / median if median > 0 else float('inf')
    return density, float(ratio)


def ft_density(patch, fundamental=False):
    """
        Vertical and horizontal thread densities of a 1 x 1 cm patch.

        Vertical threads modulate intensity along x, so their density is
        read along the horizontal-frequency axis; horizontal threads along
        the vertical one.

        `fundamental`
            When the bins around half the dominant frequency hold a local
            maximum above the peak-to-median threshold and above
            `FUNDAMENTAL_SHARE` of the dominant peak, read that one
            instead. Normalising with a window narrower than the thread
            period makes the second harmonic dominate.

        Raises `NoPeak` when either orientation has no dominant in-band peak.
    """
    pixels = patch.pixels
    if np.ptp(pixels) <= FLAT_TOLERANCE:
        raise NoPeak('Flat patch')

    magnitude = magnitude_spectrum(pixels)

    v_density, v_mag = _axis_density(magnitude, patch.ppcm, 'vertical', fundamental)
    h_density, h_mag = _axis_density(magnitude.T, patch.ppcm, 'horizontal',
                                     fundamental)

    return SpectralEstimate(v_density, h_density, v_mag, h_mag)


def _orientation_mean(values, bins):
    values = np.asarray(values, dtype=np.float64)
    values = values[(values >= BAND[0]) & (values <= BAND[1])]
    if values.size == 0:
        raise EmptyAfterFilter('No densities inside the search band')

    counts, edges = np.histogram(values, bins=bins, range=BAND)
    mode = int(np.argmax(counts))
    mode_value = 0.5 * (edges[mode] + edges[mode + 1])

    kept = values[values > mode_value / 1.5]
    if kept.size == 0:
        raise EmptyAfterFilter('No densities above mode / 1.5')

    return float(kept.mean())


def aggregate_densities(vertical, horizontal, bins=300):
    """
        Robust mean density of a coarse scan.

        Per orientation: histogram over the band, drop values at or below
        the mode divided by 1.5, average the rest. Returns the mean of the
        two orientation averages.
    """
    return 0.5 * (_orientation_mean(vertical, bins) +
                  _orientation_mean(horizontal, bins))


def relative_agreement(a, b):
    """ ``|a - b| / b`` for a positive reference `b`. """
    if not b > 0:
        raise NonPositiveReference('Reference density must be positive, got %r' % b)
    return abs(a - b) / b


def agrees(ft, dl, tolerance=AGREEMENT_TOLERANCE):
    """
        True when the model estimate is within `tolerance` of the FT one,
        relative to the FT value, for both orientations.

        `ft`, `dl`
            ``(vertical, horizontal)`` pairs.
    """
    for reference, estimate in zip(ft, dl):
        if not np.isfinite(reference) or not np.isfinite(estimate):
            return False
        if not reference > 0:
            return False
        if not relative_agreement(estimate, reference) < tolerance:
            return False
    return True
