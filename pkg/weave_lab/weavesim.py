"""
    Synthetic plain-weave canvases with exact ground truth.

    Warp threads run vertically at a fixed spacing; weft threads run
    horizontally with Gaussian spacing. Every thread is a raised-cosine
    ridge and crossings are brightened multiplicatively. Positions are
    kept in the fabric frame, in centimetres, so truth maps are
    independent of the rendering rotation.
"""
import csv
import logging
import math

import numpy as np

from weave_lab import raster
from weave_lab.errors import BadParams, TooFewThreads

log = logging.getLogger(__name__)

DENSITY_RANGE = (4.0, 30.0)
WIDTH_FRAC_RANGE = (0.1, 0.9)

#: Intensity model: ``BASE + AMPLITUDE * (W + H) * (1 + (gain - 1) * W * H)``.
BASE = 40.0
AMPLITUDE = 70.0

#: Weft gaps at or below this fraction of the mean gap are redrawn.
MIN_GAP_FRAC = 0.2

#: Rows rendered per noise stream.
BLOCK_ROWS = 200

_WEFT_STREAM = 0
_NOISE_STREAM = 1


class ContrastDrop(object):
    """
        Rectangle, in image centimetres, whose contrast around the global
        mean is multiplied by `gain`.
    """
    def __init__(self, top_cm, left_cm, height_cm, width_cm, gain):
        self.top_cm = float(top_cm)
        self.left_cm = float(left_cm)
        self.height_cm = float(height_cm)
        self.width_cm = float(width_cm)
        self.gain = float(gain)

    def pixel_bounds(self, ppcm, shape):
        h, w = shape
        top = max(0, int(round(self.top_cm * ppcm)))
        left = max(0, int(round(self.left_cm * ppcm)))
        bottom = min(h, int(round((self.top_cm + self.height_cm) * ppcm)))
        right = min(w, int(round((self.left_cm + self.width_cm) * ppcm)))
        return top, left, bottom, right

    def __repr__(self):
        return '<ContrastDrop (%g, %g, %g, %g) gain=%g>' % (
            self.top_cm, self.left_cm, self.height_cm, self.width_cm, self.gain)


class WeaveParams(object):
    """
        Parameters of a synthetic canvas.

        `warp_density`
            Vertical threads per cm, exact spacing.
        `weft_mean_density`
            Mean horizontal threads per cm.
        `weft_spacing_sigma`
            Standard deviation of the weft gaps, in cm.
        `thread_width_frac`
            Ridge width as a fraction of the mean spacing.
        `noise_sigma`
            Additive Gaussian noise, in intensity levels.
        `rotation_deg`
            Clockwise rotation of the fabric in the image.
        `contrast_drop_regions`
            `ContrastDrop` instances or ``(top, left, height, width, gain)``
            tuples in cm.
        `seed`
            64-bit seed of every random stream.
        `crossing_gain`
            Brightening factor at warp/weft crossings.
    """
    def __init__(self, warp_density=12.0, weft_mean_density=12.0,
                 weft_spacing_sigma=0.0, thread_width_frac=0.5,
                 noise_sigma=0.0, rotation_deg=0.0, contrast_drop_regions=(),
                 seed=0, crossing_gain=1.3):
        self.warp_density = float(warp_density)
        self.weft_mean_density = float(weft_mean_density)
        self.weft_spacing_sigma = float(weft_spacing_sigma)
        self.thread_width_frac = float(thread_width_frac)
        self.noise_sigma = float(noise_sigma)
        self.rotation_deg = float(rotation_deg)
        self.contrast_drop_regions = [
            r if isinstance(r, ContrastDrop) else ContrastDrop(*r)
            for r in contrast_drop_regions]
        self.seed = int(seed)
        self.crossing_gain = float(crossing_gain)

        self.validate()

    def validate(self):
        lo, hi = DENSITY_RANGE
        for name in ('warp_density', 'weft_mean_density'):
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise BadParams('%s must lie in [%g, %g], got %g'
                                % (name, lo, hi, value))

        if self.weft_spacing_sigma < 0:
            raise BadParams('weft_spacing_sigma must be >= 0')
        if self.noise_sigma < 0:
            raise BadParams('noise_sigma must be >= 0')

        lo, hi = WIDTH_FRAC_RANGE
        if not lo < self.thread_width_frac < hi:
            raise BadParams('thread_width_frac must lie in (%g, %g)' % (lo, hi))

        if not 0 <= self.seed < 2 ** 64:
            raise BadParams('seed must be a 64-bit unsigned integer')
        if self.crossing_gain < 1:
            raise BadParams('crossing_gain must be >= 1')

        for region in self.contrast_drop_regions:
            if not 0 <= region.gain <= 1:
                raise BadParams('Contrast drop gain must lie in [0, 1]')
            if region.height_cm <= 0 or region.width_cm <= 0:
                raise BadParams('Contrast drop regions need a positive size')

    def copy(self, **overrides):
        values = dict(self.__dict__)
        values.update(overrides)
        return WeaveParams(**values)


def sc_label(thread_positions, window):
    """
        Spatial-counting density: the reciprocal of the mean gap between
        consecutive thread positions inside ``window = (a, b)`` (inclusive).
    """
    a, b = window
    positions = np.sort(np.asarray(thread_positions, dtype=np.float64))
    inside = positions[(positions >= a) & (positions <= b)]

    if inside.size < 3:
        raise TooFewThreads('%d threads in window [%g, %g], need 3'
                            % (inside.size, a, b))

    return 1.0 / float(np.mean(np.diff(inside)))


def _sc_cell(positions, start, size=1.0):
    """ `sc_label` on a cell, widened symmetrically until 3 threads fit. """
    a, b = start, start + size
    for _ in range(20):
        try:
            return sc_label(positions, (a, b))
        except TooFewThreads:
            a -= 0.25
            b += 0.25
    raise TooFewThreads('No threads near cell at %g cm' % start)


class GroundTruth(object):
    """
        Exact densities of a synthetic canvas.

        `v_map`, `h_map`
            Per 1 x 1 cm cell (row = cm from the top, column = cm from the
            left) vertical and horizontal densities, in the fabric frame.
        `warp_positions`, `weft_positions`
            Thread centres in cm, fabric frame.
        `rotation_deg`
            Rotation the canvas was rendered with.
    """
    def __init__(self, v_map, h_map, warp_positions, weft_positions,
                 rotation_deg=0.0):
        self.v_map = np.asarray(v_map, dtype=np.float64)
        self.h_map = np.asarray(h_map, dtype=np.float64)
        self.warp_positions = np.asarray(warp_positions, dtype=np.float64)
        self.weft_positions = np.asarray(weft_positions, dtype=np.float64)
        self.rotation_deg = float(rotation_deg)

    @property
    def thread_positions(self):
        return self.warp_positions, self.weft_positions

    @property
    def shape(self):
        return self.v_map.shape

    def density_at(self, y_cm, x_cm):
        """ ``(v, h)`` truth of the cell containing the point. """
        rows, cols = self.shape
        i = min(max(int(math.floor(y_cm)), 0), rows - 1)
        j = min(max(int(math.floor(x_cm)), 0), cols - 1)
        return self.v_map[i, j], self.h_map[i, j]

    def patch_truth(self, top_px, left_px, ppcm=raster.CANONICAL_PPCM, side_cm=1.0):
        """
            Truth for a patch, by spatial counting over the patch extent.
        """
        x0 = left_px / float(ppcm)
        y0 = top_px / float(ppcm)
        return (_sc_cell(self.warp_positions, x0, side_cm),
                _sc_cell(self.weft_positions, y0, side_cm))

    def axis_positions(self, orientation):
        """
            Image-axis coordinates (cm) where the threads of one
            orientation cross the axis line through the canvas centre.
            Spacing along the axis grows by ``1 / cos(rotation)``.
        """
        rows, cols = self.shape
        cos_t = math.cos(math.radians(self.rotation_deg))
        if orientation == 'vertical':
            centre = cols / 2.0
            positions = self.warp_positions
        elif orientation == 'horizontal':
            centre = rows / 2.0
            positions = self.weft_positions
        else:
            raise ValueError('Unknown orientation %r' % orientation)
        return centre + (positions - centre) / cos_t

    def sub(self, top_cm, left_cm, height_cm, width_cm):
        """ Truth of an integer-cm sub-rectangle, positions re-based. """
        return GroundTruth(
            self.v_map[top_cm:top_cm + height_cm, left_cm:left_cm + width_cm],
            self.h_map[top_cm:top_cm + height_cm, left_cm:left_cm + width_cm],
            self.warp_positions - left_cm,
            self.weft_positions - top_cm,
            self.rotation_deg)

    def flipped_v(self):
        rows = self.shape[0]
        return GroundTruth(self.v_map[::-1], self.h_map[::-1],
                           self.warp_positions,
                           np.sort(rows - self.weft_positions),
                           -self.rotation_deg)

    def flipped_h(self):
        cols = self.shape[1]
        return GroundTruth(self.v_map[:, ::-1], self.h_map[:, ::-1],
                           np.sort(cols - self.warp_positions),
                           self.weft_positions,
                           -self.rotation_deg)


def _stream(seed, index):
    sequence = np.random.SeedSequence(seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(sequence))


def _block_stream(seed, block):
    sequence = np.random.SeedSequence(seed, spawn_key=(_NOISE_STREAM, block))
    return np.random.Generator(np.random.Philox(sequence))


def _margin(width_cm, height_cm, rotation_deg):
    theta = math.radians(abs(rotation_deg))
    return 1.0 + 0.5 * (width_cm + height_cm) * abs(math.sin(theta))


def warp_positions(density, extent_cm, margin_cm=1.0):
    first = int(math.floor(-margin_cm * density))
    last = int(math.ceil((extent_cm + margin_cm) * density))
    return (np.arange(first, last + 1) + 0.5) / density


def weft_positions(mean_density, sigma, extent_cm, rng, margin_cm=1.0):
    """
        Cumulative Gaussian gaps starting half a gap below zero. Gaps at
        or below `MIN_GAP_FRAC` of the mean are redrawn.
    """
    mean_gap = 1.0 / mean_density
    floor = MIN_GAP_FRAC * mean_gap

    lead = int(math.ceil(margin_cm * mean_density)) + 1
    count = int(math.ceil((extent_cm + 2 * margin_cm) * mean_density * 1.5)) + 2 * lead

    if sigma == 0:
        gaps = np.full(count, mean_gap)
    else:
        gaps = rng.normal(mean_gap, sigma, count)
        bad = gaps <= floor
        while bad.any():
            gaps[bad] = rng.normal(mean_gap, sigma, int(bad.sum()))
            bad = gaps <= floor

    # Anchor thread `lead` at half a mean gap, as for the warp.
    positions = np.concatenate([[0.0], np.cumsum(gaps)])
    positions += 0.5 * mean_gap - positions[lead]
    keep = (positions >= -margin_cm) & (positions <= extent_cm + margin_cm)
    return positions[keep]


def _ridge(coords, positions, width):
    """ Raised-cosine profile of the nearest thread. """
    index = np.searchsorted(positions, coords)
    index = np.clip(index, 1, len(positions) - 1)
    left = positions[index - 1]
    right = positions[index]
    distance = np.minimum(np.abs(coords - left), np.abs(right - coords))

    half = 0.5 * width
    profile = 0.5 * (1.0 + np.cos(2.0 * np.pi * distance / width))
    return np.where(distance <= half, profile, 0.0)


def truth_maps(warp, weft, rows, cols):
    v_row = np.array([_sc_cell(warp, j) for j in range(cols)])
    h_col = np.array([_sc_cell(weft, i) for i in range(rows)])
    v_map = np.tile(v_row, (rows, 1))
    h_map = np.tile(h_col[:, None], (1, cols))
    return v_map, h_map


def _render(params, warp, weft, height_px, width_px, ppcm):
    warp_width = params.thread_width_frac / params.warp_density
    weft_width = params.thread_width_frac / params.weft_mean_density
    gain = params.crossing_gain

    theta = math.radians(params.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy = (height_px - 1) / 2.0
    cx = (width_px - 1) / 2.0

    out = np.empty((height_px, width_px))
    dx = (np.arange(width_px) - cx)[None, :]

    for top in range(0, height_px, BLOCK_ROWS):
        bottom = min(top + BLOCK_ROWS, height_px)
        dy = (np.arange(top, bottom) - cy)[:, None]

        # Same inverse mapping as raster.rotate, in cm.
        fx = (dx * cos_t + dy * sin_t + cx + 0.5) / ppcm
        fy = (-dx * sin_t + dy * cos_t + cy + 0.5) / ppcm

        w = _ridge(fx, warp, warp_width)
        h = _ridge(fy, weft, weft_width)
        out[top:bottom] = BASE + AMPLITUDE * (w + h) * (1.0 + (gain - 1.0) * w * h)

    return out


def _degrade(params, pixels, ppcm):
    if params.contrast_drop_regions:
        mean = pixels.mean()
        for region in params.contrast_drop_regions:
            top, left, bottom, right = region.pixel_bounds(ppcm, pixels.shape)
            if bottom <= top or right <= left:
                continue
            view = pixels[top:bottom, left:right]
            view[...] = mean + region.gain * (view - mean)

    if params.noise_sigma > 0:
        for block, top in enumerate(range(0, pixels.shape[0], BLOCK_ROWS)):
            bottom = min(top + BLOCK_ROWS, pixels.shape[0])
            rng = _block_stream(params.seed, block)
            pixels[top:bottom] += rng.normal(0.0, params.noise_sigma,
                                             (bottom - top, pixels.shape[1]))

    np.clip(pixels, 0, 255, out=pixels)
    return pixels


def gen_canvas(params, width_cm, height_cm, ppcm=raster.CANONICAL_PPCM):
    """
        Render a synthetic canvas.

        Returns ``(GrayImage, GroundTruth)``; both are bit-identical for
        identical arguments.
    """
    if width_cm < 2 or height_cm < 2:
        raise BadParams('Canvas must be at least 2 x 2 cm, got %g x %g'
                        % (width_cm, height_cm))
    params.validate()

    height_px = int(round(height_cm * ppcm))
    width_px = int(round(width_cm * ppcm))
    margin = _margin(width_cm, height_cm, params.rotation_deg)

    warp = warp_positions(params.warp_density, width_cm, margin)
    weft = weft_positions(params.weft_mean_density, params.weft_spacing_sigma,
                          height_cm, _stream(params.seed, _WEFT_STREAM), margin)

    pixels = _render(params, warp, weft, height_px, width_px, ppcm)
    pixels = _degrade(params, pixels, ppcm)

    v_map, h_map = truth_maps(warp, weft, int(math.floor(height_cm)),
                              int(math.floor(width_cm)))

    log.debug('Rendered %gx%g cm canvas (warp %g, weft %g, seed %d)',
              width_cm, height_cm, params.warp_density,
              params.weft_mean_density, params.seed)

    return (raster.GrayImage(pixels, ppcm),
            GroundTruth(v_map, h_map, warp, weft, params.rotation_deg))


def gen_bolt(params, width_cm, height_cm, ppcm=raster.CANONICAL_PPCM):
    """
        A long bolt of fabric from which several canvases are cut with
        `cut_canvas`. Weft rows are shared across the bolt width.
    """
    if params.rotation_deg:
        raise BadParams('Bolts are rendered unrotated')
    return gen_canvas(params, width_cm, height_cm, ppcm)


def cut_canvas(bolt, truth, top_cm, left_cm, height_cm, width_cm, flip=None):
    """
        Cut an integer-cm rectangle out of a bolt.

        `flip`
            None, ``'h'`` or ``'v'``: applied after cutting, as when a
            canvas is mounted the other way round.
    """
    ppcm = bolt.ppcm
    img = raster.crop(bolt, int(round(top_cm * ppcm)), int(round(left_cm * ppcm)),
                      int(round(height_cm * ppcm)), int(round(width_cm * ppcm)))
    sub = truth.sub(top_cm, left_cm, height_cm, width_cm)

    if flip == 'h':
        return raster.flip_h(img), sub.flipped_h()
    if flip == 'v':
        return raster.flip_v(img), sub.flipped_v()
    if flip is not None:
        raise BadParams('Unknown flip %r' % flip)
    return img, sub


def write_truth_csv(truth, path):
    """ Rows ``cm_y, cm_x, v_true, h_true``. """
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(('cm_y', 'cm_x', 'v_true', 'h_true'))
        rows, cols = truth.shape
        for i in range(rows):
            for j in range(cols):
                writer.writerow((i, j, '%.9g' % truth.v_map[i, j],
                                 '%.9g' % truth.h_map[i, j]))


def read_truth_csv(path):
    """ ``(v_map, h_map)`` arrays from a truth CSV. """
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))

    height = max(int(r['cm_y']) for r in rows) + 1
    width = max(int(r['cm_x']) for r in rows) + 1
    v_map = np.full((height, width), np.nan)
    h_map = np.full((height, width), np.nan)
    for r in rows:
        i, j = int(r['cm_y']), int(r['cm_x'])
        v_map[i, j] = float(r['v_true'])
        h_map[i, j] = float(r['h_true'])
    return v_map, h_map
