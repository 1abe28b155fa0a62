"""
    Plate preprocessing: local contrast normalisation with an adaptive
    window, and global histogram equalisation.
"""
import functools
import logging
import math

import numpy as np

from weave_lab import raster
from weave_lab.errors import BadKernel, ScanFailed, NoPeak, EmptyAfterFilter

log = logging.getLogger(__name__)

#: Initial window width of the kernel-size search.
DEFAULT_K0 = 21

#: Normalised output is ``CENTER + SPREAD * z``, clipped to [0, 255].
CENTER = 128.0
SPREAD = 64.0
EPSILON = 1e-3

#: Kernel-size regression, fitted on museum canvases.
KERNEL_SLOPE = -0.90
KERNEL_INTERCEPT = 37.05
KERNEL_FLOOR = 14.5
MIN_KERNEL = 15

#: Coarse scan spacing, in cm.
SCAN_SPACING_CM = 7.0
MIN_SCAN_PATCHES = 4


class KernelPlan(object):
    """
        Result of the adaptive kernel-size search.

        `k0`
            Initial window width.
        `k`
            Final window width (odd).
        `t`
            Coarse mean thread density, in threads/cm, of the last pass.
        `passes`
            ``(k_used, t, k_found)`` for every pass, in order.
    """
    def __init__(self, k0, k, t, passes=()):
        self.k0 = k0
        self.k = k
        self.t = t
        self.passes = tuple(passes)

    def __repr__(self):
        return '<KernelPlan k0=%d k=%d t=%.3f>' % (self.k0, self.k, self.t)


class EqualizationLUT(object):
    """ 256-entry look-up table produced by `equalize`. """

    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def __call__(self, values):
        index = np.floor(np.asarray(values) + 0.5).clip(0, 255).astype(np.intp)
        return self.table[index]

    def __getitem__(self, level):
        return self.table[level]

    def __len__(self):
        return len(self.table)


def _check_kernel(img, k):
    if k != int(k) or k % 2 != 1 or k < 3:
        raise BadKernel('Kernel width must be an odd integer >= 3, got %r' % k)
    if k > min(img.height_px, img.width_px):
        raise BadKernel('Kernel width %d exceeds image size %dx%d'
                        % (k, img.height_px, img.width_px))
    return int(k)


def _window_sums(values, k):
    """
        k x k window sums centred on every pixel, edge-clamped, through a
        summed-area table.
    """
    half = k // 2
    padded = np.pad(values, half, mode='edge')

    table = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    np.cumsum(np.cumsum(padded, axis=0), axis=1, out=table[1:, 1:])

    h, w = values.shape
    return (table[k:k + h, k:k + w] - table[:h, k:k + w] -
            table[k:k + h, :w] + table[:h, :w])


def local_stats(img, k):
    """
        Per-pixel mean and population standard deviation over the k x k
        window centred on the pixel, with edge-clamped borders.

        Returns ``(mean_map, std_map)`` as arrays shaped like the image.
    """
    k = _check_kernel(img, k)
    values = img.pixels
    area = float(k * k)

    mean = _window_sums(values, k) / area
    mean_sq = _window_sums(values * values, k) / area
    var = np.maximum(mean_sq - mean * mean, 0.0)

    return mean, np.sqrt(var)


def normalize_contrast(img, k):
    """
        Local z-score normalisation mapped back to intensities:
        ``clip(128 + 64 * (x - mean) / (std + 1e-3), 0, 255)``.
    """
    mean, std = local_stats(img, k)
    out = CENTER + SPREAD * (img.pixels - mean) / (std + EPSILON)
    return img.with_pixels(np.clip(out, 0, 255))


def kernel_from_density(t):
    """
        Window width for a mean thread density `t` (threads/cm):
        ``k_raw = -0.90 t + 37.05`` clamped to at least 14.5, then the
        largest odd integer not above it, and never below 15.
    """
    k_raw = max(KERNEL_SLOPE * t + KERNEL_INTERCEPT, KERNEL_FLOOR)
    k = int(math.floor(k_raw + 1e-9))
    if k % 2 == 0:
        k -= 1
    return max(MIN_KERNEL, k)


def scan_origins(length_px, ppcm=raster.CANONICAL_PPCM, spacing_cm=SCAN_SPACING_CM,
                 patch_px=200):
    """
        Patch origins along one axis for the coarse scan. The spacing
        shrinks so that plates under three spacings still get three rows.
    """
    length_cm = length_px / float(ppcm)
    spacing = min(spacing_cm, max((length_cm - 1.0) / 2.0, 1e-6))
    step_px = spacing * ppcm

    origins = []
    i = 0
    while True:
        origin = int(math.floor(i * step_px + 0.5))
        if origin + patch_px > length_px:
            break
        origins.append(origin)
        i += 1
    return origins


def coarse_scan(plate, spectral=None, spacing_cm=SCAN_SPACING_CM):
    """
        Sample 1 x 1 cm patches on a grid and collect the FT densities of
        those with a usable peak. The default estimator reads the
        fundamental rather than a dominant second harmonic, which a window
        narrower than the thread period produces.

        Returns ``(vertical, horizontal)`` lists.
    """
    if spectral is None:
        from weave_lab.spectral import ft_density
        spectral = functools.partial(ft_density, fundamental=True)

    patch_px = int(round(plate.ppcm))
    vertical, horizontal = [], []
    failed = 0

    for top in scan_origins(plate.height_px, plate.ppcm, spacing_cm, patch_px):
        for left in scan_origins(plate.width_px, plate.ppcm, spacing_cm, patch_px):
            patch = raster.crop(plate, top, left, patch_px, patch_px)
            try:
                estimate = spectral(patch)
            except NoPeak:
                failed += 1
                continue
            vertical.append(estimate.v_density)
            horizontal.append(estimate.h_density)

    log.debug('Coarse scan: %d usable patches, %d without peak',
              len(vertical), failed)
    return vertical, horizontal


def estimate_kernel_size(plate, k0=DEFAULT_K0, spectral=None, passes=2,
                         spacing_cm=SCAN_SPACING_CM):
    """
        Adaptive window search.

        Each pass normalises the plate with the current window, runs a
        coarse FT scan, aggregates the densities into `t` and maps `t` to a
        new window. The second pass starts from the first pass's result.

        `plate`
            Plate at 200 pixels per cm, at least 3 x 3 cm.
        `k0`
            Initial odd window width.
        `spectral`
            Patch -> `SpectralEstimate` callable, `ft_density` by default.
    """
    from weave_lab.spectral import aggregate_densities

    k = k0
    t = None
    history = []

    for index in range(passes):
        normalized = normalize_contrast(plate, k)
        vertical, horizontal = coarse_scan(normalized, spectral, spacing_cm)

        if min(len(vertical), len(horizontal)) < MIN_SCAN_PATCHES:
            raise ScanFailed('Only %d patches produced a usable FT peak'
                             % len(vertical))

        try:
            t = aggregate_densities(vertical, horizontal)
        except EmptyAfterFilter as ex:
            raise ScanFailed(str(ex))

        found = kernel_from_density(t)
        log.info('Kernel pass %d: k=%d, t=%.3f thr/cm -> k=%d',
                 index + 1, k, t, found)
        history.append((k, t, found))
        k = found

    return KernelPlan(k0, k, t, history)


def equalize(img):
    """
        Global histogram equalisation.

        The 256-bin histogram of rounded intensities is scaled to sum 255,
        integrated, rounded and used as a look-up table.

        Returns ``(equalized_image, lut)``.
    """
    levels = np.floor(img.pixels + 0.5).clip(0, 255).astype(np.intp)
    hist = np.bincount(levels.ravel(), minlength=256).astype(np.float64)
    hist *= 255.0 / hist.sum()

    table = np.floor(np.cumsum(hist) + 0.5).clip(0, 255)
    lut = EqualizationLUT(table)

    return img.with_pixels(table[levels]), lut


def preprocess_plate(plate, k0=DEFAULT_K0, fixed_k=None, equalization=True,
                     spectral=None):
    """
        Full preprocessing of a plate at 200 pixels per cm: normalisation
        with the adaptive (or a fixed) window, then equalisation.

        Returns ``(image, plan)``; `plan` is None when `fixed_k` is given.
    """
    plan = None
    if fixed_k is None:
        plan = estimate_kernel_size(plate, k0, spectral)
        k = plan.k
    else:
        k = fixed_k

    out = normalize_contrast(plate, k)
    if equalization:
        out, _ = equalize(out)

    return out, plan
