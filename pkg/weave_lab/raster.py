"""
    Grayscale rasters: decoding, encoding and exact/bilinear geometric
    transforms.

    Pixels are kept as float64 in [0, 255]. Every transform returns a new
    `GrayImage`; images are never modified in place.
"""
import logging
import math
import os.path as op

import numpy as np
from PIL import Image, UnidentifiedImageError

from weave_lab.errors import (UnreadableFile, UnsupportedFormat, ZeroDimension,
                              InvalidImage, ResultTooSmall, OutOfBounds)

log = logging.getLogger(__name__)

#: Canonical resolution of the whole pipeline, in pixels per centimetre.
CANONICAL_PPCM = 200.0

_NETPBM_MAGICS = (b'P1', b'P2', b'P3', b'P4', b'P5', b'P6', b'P7')


class GrayImage(object):
    """
        Immutable grayscale raster.

        `pixels`
            2D array-like of intensities in [0, 255].
        `ppcm`
            Resolution in pixels per centimetre.
    """
    __slots__ = ('_pixels', 'ppcm')

    def __init__(self, pixels, ppcm=CANONICAL_PPCM):
        pixels = np.array(pixels, dtype=np.float64)

        if pixels.ndim != 2:
            raise InvalidImage('Expected a 2D grid, got %d dimensions' % pixels.ndim)
        if pixels.shape[0] == 0 or pixels.shape[1] == 0:
            raise ZeroDimension('Image has a zero dimension: %dx%d' % pixels.shape)
        if not np.isfinite(pixels).all():
            raise InvalidImage('Image contains non-finite values')
        if pixels.min() < 0 or pixels.max() > 255:
            raise InvalidImage('Pixel values must lie in [0, 255]')

        ppcm = float(ppcm)
        if not ppcm > 0:
            raise InvalidImage('ppcm must be positive, got %r' % ppcm)

        pixels.flags.writeable = False
        self._pixels = pixels
        self.ppcm = ppcm

    @property
    def pixels(self):
        return self._pixels

    @property
    def height_px(self):
        return self._pixels.shape[0]

    @property
    def width_px(self):
        return self._pixels.shape[1]

    @property
    def shape(self):
        return self._pixels.shape

    def with_pixels(self, pixels):
        """ New image with the same resolution and different pixels. """
        return GrayImage(pixels, self.ppcm)

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return (self.ppcm == other.ppcm and
                self.shape == other.shape and
                np.array_equal(self._pixels, other._pixels))

    def __repr__(self):
        return '<GrayImage %dx%d @ %g ppcm>' % (self.height_px, self.width_px,
                                               self.ppcm)


def meta_path(path):
    """ Sidecar metadata file for an image: ``<name>.meta``. """
    return op.splitext(path)[0] + '.meta'


def read_meta(path):
    """
        Read ``key=value`` lines of a sidecar file into a dict.
        Returns an empty dict when the sidecar does not exist.
    """
    meta = {}
    if not op.exists(path):
        return meta

    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#') or '=' not in line:
                continue
            key, value = line.split('=', 1)
            meta[key.strip()] = value.strip()

    return meta


def _meta_ppcm(path):
    value = read_meta(path).get('ppcm', CANONICAL_PPCM)
    try:
        return float(value)
    except ValueError:
        raise UnreadableFile('Malformed ppcm %r in %s' % (value, path))


def write_meta(path, ppcm):
    with open(path, 'w') as f:
        f.write('ppcm=%s\n' % _format_number(ppcm))


def _format_number(value):
    return ('%.9g' % value)


def _check_netpbm_header(path):
    """
        Reject netpbm flavours other than 8-bit binary graymaps before
        handing the file to Pillow.
    """
    with open(path, 'rb') as f:
        head = f.read(512)

    magic = head[:2]
    if magic not in _NETPBM_MAGICS:
        return

    if magic != b'P5':
        raise UnsupportedFormat('Only binary 8-bit PGM (P5) is supported, got %s'
                                % magic.decode('ascii'))

    # Tokens: magic, width, height, maxval; comments run to end of line
    tokens = []
    for line in head.split(b'\n'):
        line = line.split(b'#', 1)[0]
        tokens.extend(line.split())
        if len(tokens) >= 4:
            break

    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except (IndexError, ValueError):
        raise UnreadableFile('Malformed PGM header in %s' % path)

    if width == 0 or height == 0:
        raise ZeroDimension('PGM %s has a zero dimension' % path)
    if maxval > 255:
        raise UnsupportedFormat('16-bit PGM is not supported')


def load_gray(path, ppcm=None):
    """
        Decode an 8-bit grayscale PNG or binary PGM.

        `path`
            Image file.
        `ppcm`
            Resolution override. When omitted the ``<name>.meta`` sidecar is
            consulted, falling back to 200 pixels per centimetre.
    """
    if not op.isfile(path):
        raise UnreadableFile('No such file: %s' % path)

    _check_netpbm_header(path)

    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            size = im.size
            if mode == 'L':
                data = np.asarray(im, dtype=np.float64)
            else:
                data = None
    except (UnidentifiedImageError, OSError, SyntaxError) as ex:
        raise UnreadableFile('Cannot decode %s: %s' % (path, ex))

    if size[0] == 0 or size[1] == 0:
        raise ZeroDimension('%s has a zero dimension' % path)

    if data is None:
        if mode.startswith('I'):
            raise UnsupportedFormat('16-bit images are not supported (%s)' % mode)
        raise UnsupportedFormat('Only 8-bit grayscale is supported, got mode %s'
                                % mode)

    if ppcm is None:
        ppcm = _meta_ppcm(meta_path(path))

    log.debug('Loaded %s (%dx%d, %g ppcm)', path, data.shape[0], data.shape[1],
              ppcm)
    return GrayImage(data, ppcm)


def to_uint8(img):
    return np.floor(img.pixels + 0.5).clip(0, 255).astype(np.uint8)


def save_gray(img, path, with_meta=True):
    """
        Encode as 8-bit PNG or binary PGM, chosen by file extension.
        Also writes the ``<name>.meta`` sidecar unless `with_meta` is false.
    """
    ext = op.splitext(path)[1].lower()
    if ext not in ('.png', '.pgm'):
        raise UnsupportedFormat('Cannot write %s files' % ext)

    Image.fromarray(to_uint8(img)).save(path)

    if with_meta:
        write_meta(meta_path(path), img.ppcm)


def _round_half_up(value):
    return int(math.floor(value + 0.5))


def _bilinear(pixels, ys, xs):
    """
        Sample `pixels` at fractional coordinates with clamp-to-edge.

        Uses the ``a + w * (b - a)`` form, so regions of equal value come
        out bit-exact.
    """
    h, w = pixels.shape
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)

    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0

    top_left = pixels[y0, x0]
    bottom_left = pixels[y1, x0]
    top = top_left + wx * (pixels[y0, x1] - top_left)
    bottom = bottom_left + wx * (pixels[y1, x1] - bottom_left)

    return top + wy * (bottom - top)


def rescale(img, target_ppcm):
    """
        Bilinear resampling to a new resolution.

        Output dimensions are ``round(dim * target_ppcm / img.ppcm)``.
    """
    target_ppcm = float(target_ppcm)
    if not target_ppcm > 0:
        raise ResultTooSmall('Target resolution must be positive')

    if target_ppcm == img.ppcm:
        return img

    factor = target_ppcm / img.ppcm
    out_h = _round_half_up(img.height_px * factor)
    out_w = _round_half_up(img.width_px * factor)
    if out_h < 1 or out_w < 1:
        raise ResultTooSmall('Rescaled image would be %dx%d' % (out_h, out_w))

    ys = (np.arange(out_h) + 0.5) * (img.height_px / float(out_h)) - 0.5
    xs = (np.arange(out_w) + 0.5) * (img.width_px / float(out_w)) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing='ij')

    out = _bilinear(img.pixels, grid_y, grid_x)
    return GrayImage(out.clip(0, 255), target_ppcm)


def rotate(img, degrees):
    """
        Rotate image content clockwise by `degrees` about the image centre.

        Multiples of 90 degrees are exact index permutations (and may swap
        the dimensions); any other angle keeps the image size and samples
        bilinearly with clamp-to-edge.
    """
    degrees = float(degrees)
    if degrees % 90.0 == 0.0:
        quarter_turns = int(round(degrees / 90.0)) % 4
        if quarter_turns == 0:
            return img
        return img.with_pixels(np.rot90(img.pixels, k=-quarter_turns))

    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy = (img.height_px - 1) / 2.0
    cx = (img.width_px - 1) / 2.0

    dy, dx = np.meshgrid(np.arange(img.height_px) - cy,
                         np.arange(img.width_px) - cx, indexing='ij')
    src_x = dx * cos_t + dy * sin_t + cx
    src_y = -dx * sin_t + dy * cos_t + cy

    out = _bilinear(img.pixels, src_y, src_x)
    return img.with_pixels(out.clip(0, 255))


def flip_h(img):
    return img.with_pixels(img.pixels[:, ::-1])


def flip_v(img):
    return img.with_pixels(img.pixels[::-1, :])


def crop(img, top, left, height, width):
    """
        Exact sub-rectangle ``[top:top+height, left:left+width]``.
    """
    if (top < 0 or left < 0 or height < 1 or width < 1 or
            top + height > img.height_px or left + width > img.width_px):
        raise OutOfBounds('Crop (%d, %d, %d, %d) outside %dx%d image'
                          % (top, left, height, width,
                             img.height_px, img.width_px))

    return img.with_pixels(img.pixels[top:top + height, left:left + width])
