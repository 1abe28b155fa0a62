"""
    Whole-plate analysis: patch sweeps into density maps, semi-supervised
    refinement of a model on FT-agreed patches, map matching and export.
"""
import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from PIL import Image
from matplotlib.colors import LinearSegmentedColormap

from weave_lab import raster, spectral
from weave_lab.errors import (AnalysisError, PlateTooSmall, BadOverlap, NoAgreementPool,
                              IncompatibleOrientations, IoError, NoPeak)

log = logging.getLogger(__name__)

PATCH_SIDE = 200
ORIENTATIONS = ('vertical', 'horizontal')
SOURCES = ('ft', 'model', 'model_ss')
TRANSFORMS = ('none', 'flip_h', 'flip_v')

#: Fewest overlapping profile cells a match offset may use.
MIN_MATCH_OVERLAP = 3

#: Colour ramp of exported maps, low densities first.
RAMP_COLORS = ('red', 'yellow', 'green', 'blue')


class SweepGeometry(object):
    """
        Patch grid over an ``r x s`` pixel plate.

        `o`
            Overlap fraction of neighbouring patches, in [0, 1).
        `stride`
            ``round(200 * (1 - o))`` pixels.
        `p`, `q`
            Patch rows and columns.
    """
    def __init__(self, r, s, o, stride, p, q):
        self.r = r
        self.s = s
        self.o = o
        self.stride = stride
        self.p = p
        self.q = q

    @property
    def shape(self):
        return self.p, self.q

    def origin(self, i, j):
        return i * self.stride, j * self.stride

    def to_dict(self):
        return dict(r=self.r, s=self.s, o=self.o, stride=self.stride,
                    p=self.p, q=self.q)

    def __repr__(self):
        return '<SweepGeometry %dx%d o=%g stride=%d %dx%d>' % (
            self.r, self.s, self.o, self.stride, self.p, self.q)


def sweep_geometry(r, s, o):
    if r < PATCH_SIDE or s < PATCH_SIDE:
        raise PlateTooSmall('Plate of %dx%d px is smaller than one %d px patch'
                            % (r, s, PATCH_SIDE))
    if not 0 <= o < 1:
        raise BadOverlap('Overlap must lie in [0, 1), got %r' % o)

    stride = int(np.floor(PATCH_SIDE * (1.0 - o) + 0.5))
    if stride < 1:
        raise BadOverlap('Overlap %r leaves no stride' % o)

    p = (r - PATCH_SIDE) // stride + 1
    q = (s - PATCH_SIDE) // stride + 1
    return SweepGeometry(r, s, o, stride, p, q)


class DensityMap(object):
    """
        ``p x q`` grid of densities in threads/cm; missing cells are NaN.

        `orientation`
            ``vertical`` or ``horizontal``.
        `source`
            ``ft``, ``model`` or ``model_ss``.
    """
    def __init__(self, grid, geometry=None, orientation='vertical', source='ft'):
        if orientation not in ORIENTATIONS:
            raise AnalysisError('Unknown orientation %r' % orientation)
        if source not in SOURCES:
            raise AnalysisError('Unknown source %r' % source)

        self.grid = np.array(grid, dtype=np.float64)
        self.geometry = geometry
        self.orientation = orientation
        self.source = source

    @property
    def shape(self):
        return self.grid.shape

    @property
    def missing(self):
        return np.isnan(self.grid)

    def transformed(self, transform):
        if transform == 'none':
            grid = self.grid
        elif transform == 'flip_h':
            grid = self.grid[:, ::-1]
        elif transform == 'flip_v':
            grid = self.grid[::-1, :]
        else:
            raise AnalysisError('Unknown transform %r' % transform)
        return DensityMap(grid, self.geometry, self.orientation, self.source)

    def profile(self):
        """
            Mean over each row (horizontal maps) or column (vertical maps),
            ignoring missing cells.
        """
        axis = 1 if self.orientation == 'horizontal' else 0
        valid = ~self.missing
        counts = valid.sum(axis=axis)
        sums = np.where(valid, self.grid, 0.0).sum(axis=axis)
        with np.errstate(invalid='ignore', divide='ignore'):
            return np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    def __repr__(self):
        return '<DensityMap %s/%s %dx%d>' % ((self.orientation, self.source) +
                                             self.shape)


class FTEstimator(object):
    """ FT densities; patches without a usable peak are missing. """
    source = 'ft'

    def __init__(self, density=None):
        self.density = density or spectral.ft_density

    def estimate(self, patches):
        values = np.full((len(patches), 2), np.nan)
        for index, patch in enumerate(patches):
            try:
                estimate = self.density(patch)
            except NoPeak:
                continue
            values[index] = estimate.v_density, estimate.h_density
        return values


class ModelEstimator(object):
    """
        Model densities. The horizontal density is the vertical prediction
        on the patch rotated by 90 degrees.
    """
    source = 'model'

    def __init__(self, model, batch_size=64, source='model'):
        self.model = model
        self.batch_size = batch_size
        self.source = source

    def estimate(self, patches):
        rotated = [raster.rotate(patch, 90) for patch in patches]
        batch = self.model.to_batch(list(patches) + rotated)
        preds = self.model.predict(batch, self.batch_size).astype(np.float64)

        count = len(patches)
        values = np.stack([preds[:count], preds[count:]], axis=1)
        lo, hi = spectral.BAND
        values[(values < lo) | (values > hi)] = np.nan
        return values


class CallbackEstimator(object):
    """ Wraps a ``patch -> (v, h)`` callable. """

    def __init__(self, func, source='ft'):
        self.func = func
        self.source = source

    def estimate(self, patches):
        values = np.full((len(patches), 2), np.nan)
        for index, patch in enumerate(patches):
            try:
                values[index] = self.func(patch)
            except NoPeak:
                continue
        return values


def _as_estimator(estimator):
    if hasattr(estimator, 'estimate'):
        return estimator
    return CallbackEstimator(estimator)


def _row_patches(plate, geometry, i):
    top = i * geometry.stride
    return [raster.crop(plate, top, j * geometry.stride, PATCH_SIDE, PATCH_SIDE)
            for j in range(geometry.q)]


def sweep(plate, estimator, o=0.0, threads=1):
    """
        Estimate both densities on every patch of the sweep grid.

        `estimator`
            Object with ``estimate(patches) -> (n, 2)`` or a
            ``patch -> (v, h)`` callable.
        `threads`
            Rows estimated concurrently; results are assembled by row index.

        Returns ``(vertical_map, horizontal_map)``.
    """
    geometry = sweep_geometry(plate.height_px, plate.width_px, o)
    estimator = _as_estimator(estimator)

    def run_row(i):
        values = estimator.estimate(_row_patches(plate, geometry, i))
        log.info('Sweep row %d/%d: %d of %d cells missing', i + 1, geometry.p,
                 int(np.isnan(values).any(axis=1).sum()), geometry.q)
        return values

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_row, range(geometry.p)))
    else:
        rows = [run_row(i) for i in range(geometry.p)]

    values = np.stack(rows)
    source = getattr(estimator, 'source', 'ft')
    return (DensityMap(values[:, :, 0], geometry, 'vertical', source),
            DensityMap(values[:, :, 1], geometry, 'horizontal', source))


def truth_maps(truth, geometry, ppcm=raster.CANONICAL_PPCM):
    """ Ground-truth grids of a synthetic plate on the sweep grid. """
    v = np.empty(geometry.shape)
    h = np.empty(geometry.shape)
    for i in range(geometry.p):
        for j in range(geometry.q):
            top, left = geometry.origin(i, j)
            v[i, j], h[i, j] = truth.patch_truth(top, left, ppcm)
    return v, h


def map_nmae(density_map, truth_grid):
    """ NMAE of the non-missing cells against a truth grid. """
    grid = density_map.grid if isinstance(density_map, DensityMap) else density_map
    valid = ~np.isnan(grid)
    if not valid.any():
        return float('nan')
    return float(np.mean(np.abs(grid[valid] - truth_grid[valid]) / truth_grid[valid]))


class SSConfig(object):
    """
        Semi-supervised refinement settings.

        `tolerance`
            Relative FT/model agreement required in both orientations.
        `cap`, `floor`
            Largest pool kept (records) and smallest pool (agreed patches)
            worth fine-tuning on; `floor` is at least 2 so both the training
            and the validation split get a patch.
        `train_fraction`
            Share of the pool used for training; the rest validates.
        `block_rows`
            Patch rows processed per block.
        `label`
            ``dl`` labels agreed patches with the model estimate, ``ft``
            with the FT estimate.
    """
    def __init__(self, tolerance=spectral.AGREEMENT_TOLERANCE, cap=60000, floor=100,
                 train_fraction=0.7, lr=1e-3, patience=3, max_epochs=20,
                 freeze_last_dense=3, batch_size=32, block_rows=40, label='dl',
                 seed=0):
        if label not in ('dl', 'ft'):
            raise AnalysisError('label must be dl or ft, got %r' % label)
        if not 0 < train_fraction < 1:
            raise AnalysisError('train_fraction must lie in (0, 1)')
        if block_rows < 1 or cap < 2:
            raise AnalysisError('block_rows must be positive and cap at least 2')
        if floor < 2:
            raise AnalysisError('floor must be at least 2, one train and one validation patch')

        self.tolerance = float(tolerance)
        self.cap = int(cap)
        self.floor = int(floor)
        self.train_fraction = float(train_fraction)
        self.lr = float(lr)
        self.patience = int(patience)
        self.max_epochs = int(max_epochs)
        self.freeze_last_dense = int(freeze_last_dense)
        self.batch_size = int(batch_size)
        self.block_rows = int(block_rows)
        self.label = label
        self.seed = int(seed)

    def train_config(self):
        from weave_lab.regnet import TrainConfig
        return TrainConfig(batch_size=self.batch_size, lr=self.lr,
                           max_epochs=self.max_epochs, patience=self.patience,
                           seed=self.seed, freeze_last_dense=self.freeze_last_dense)


class SSReport(object):
    """ Outcome of `ss_refine`. """

    def __init__(self):
        self.blocks = 0
        self.patches = 0
        self.agreed = 0
        self.pool_size = 0
        self.epochs = 0
        self.val_before = None
        self.val_after = None
        self.no_agreement = False

    def to_dict(self):
        return dict(blocks=self.blocks, patches=self.patches, agreed=self.agreed,
                    pool_size=self.pool_size, epochs=self.epochs,
                    val_before=self.val_before, val_after=self.val_after,
                    no_agreement=self.no_agreement)

    def __repr__(self):
        return '<SSReport %s>' % json.dumps(self.to_dict(), sort_keys=True)


def agreement_mask(ft_values, dl_values, tolerance=spectral.AGREEMENT_TOLERANCE):
    """ Patches whose model estimates agree with FT in both orientations. """
    return np.array([spectral.agrees(ft, dl, tolerance)
                     for ft, dl in zip(ft_values, dl_values)], dtype=bool)


def ss_refine(plate, model, o=0.0, config=None, ft_estimator=None, dl_estimator=None,
              strict=False):
    """
        Fine-tune `model` on the plate's own patches where the FT and the
        model agree.

        Blocks of `block_rows` patch rows are estimated in order and their
        agreed patches (plus their 90 degree rotations for the horizontal
        labels) accumulate in one pool. The pool is capped by seeded
        uniform sampling, split, and used to fine-tune with the last dense
        layers frozen.

        When fewer than `floor` patches agree the model is returned
        untouched with ``report.no_agreement`` set, or `NoAgreementPool`
        is raised when `strict`.

        Returns ``(model, report)``.
    """
    from weave_lab.regnet import train, nmae

    config = config or SSConfig()
    ft_estimator = _as_estimator(ft_estimator or FTEstimator())
    dl_estimator = _as_estimator(dl_estimator or ModelEstimator(model))

    geometry = sweep_geometry(plate.height_px, plate.width_px, o)
    report = SSReport()

    inputs = []
    labels = []
    pairs = []

    for start in range(0, geometry.p, config.block_rows):
        stop = min(start + config.block_rows, geometry.p)
        block_agreed = 0

        for i in range(start, stop):
            patches = _row_patches(plate, geometry, i)
            ft_values = ft_estimator.estimate(patches)
            dl_values = dl_estimator.estimate(patches)
            keep = agreement_mask(ft_values, dl_values, config.tolerance)

            chosen = dl_values if config.label == 'dl' else ft_values
            for index in np.flatnonzero(keep):
                patch = patches[index]
                v, h = chosen[index]
                batch = model.to_batch([patch, raster.rotate(patch, 90)])
                pairs.append(len(inputs))
                inputs.extend([batch[0], batch[1]])
                labels.extend([v, h])

            report.patches += len(patches)
            block_agreed += int(keep.sum())

        report.blocks += 1
        report.agreed += block_agreed
        log.info('SS block %d (rows %d-%d): %d agreed patches, pool %d',
                 report.blocks, start, stop - 1, block_agreed, report.agreed)

    if report.agreed < config.floor:
        report.no_agreement = True
        message = '%d agreed patches, need %d' % (report.agreed, config.floor)
        if strict:
            raise NoAgreementPool(message)
        log.warning('No agreement pool: %s; model left unchanged', message)
        return model, report

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(config.seed)))

    pair_cap = config.cap // 2
    if len(pairs) > pair_cap:
        pairs = sorted(int(k) for k in rng.choice(len(pairs), pair_cap, replace=False))
        pairs = [2 * k for k in pairs]

    order = rng.permutation(len(pairs))
    cut = int(round(config.train_fraction * len(pairs)))
    cut = min(max(cut, 1), len(pairs) - 1)

    def subset(indices):
        rows = [r for k in sorted(indices) for r in (pairs[k], pairs[k] + 1)]
        return (np.stack([inputs[r] for r in rows]),
                np.array([labels[r] for r in rows], dtype=np.float64))

    train_set = subset(order[:cut])
    val_set = subset(order[cut:])
    report.pool_size = len(train_set[1]) + len(val_set[1])

    report.val_before = nmae(model.predict(val_set[0], config.batch_size), val_set[1])
    model, history = train(model, train_set, val_set, config.train_config())
    report.epochs = history.epochs
    report.val_after = history.best_val

    log.info('SS fine-tuning: %d records, %d epochs, val NMAE %.5f -> %.5f',
             report.pool_size, report.epochs, report.val_before, report.val_after)
    return model, report


def _pearson(a, b):
    a = a - a.mean()
    b = b - b.mean()
    denominator = np.sqrt((a * a).sum() * (b * b).sum())
    if denominator == 0:
        return None
    return float((a * b).sum() / denominator)


class MatchReport(object):
    """
        `correlation`
            Best Pearson correlation of the two profiles.
        `offset`
            Index in the first map's profile aligned with the start of the
            second's.
        `n_cells`
            Profile cells used at that offset.
        `composite`
            Both grids aligned side by side (horizontal maps) or stacked
            (vertical maps), separated by one missing cell.
    """
    def __init__(self, correlation, offset, n_cells, composite):
        self.correlation = correlation
        self.offset = offset
        self.n_cells = n_cells
        self.composite = composite

    def to_dict(self):
        return dict(correlation=self.correlation, offset=self.offset,
                    n_cells=self.n_cells)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _composite(a, b, offset, orientation):
    if orientation == 'vertical':
        composite = _composite(a.T, b.T, offset, 'horizontal')
        return composite.T

    top = min(0, offset)
    bottom = max(a.shape[0], offset + b.shape[0])
    grid = np.full((bottom - top, a.shape[1] + 1 + b.shape[1]), np.nan)
    grid[-top:-top + a.shape[0], :a.shape[1]] = a
    grid[offset - top:offset - top + b.shape[0], a.shape[1] + 1:] = b
    return grid


def match_maps(a, b, transform='none', min_overlap=MIN_MATCH_OVERLAP):
    """
        Slide the density profile of `b` (after `transform`) along that of
        `a` and report the offset with the highest Pearson correlation.
        Ties go to the offset closest to zero.
    """
    if a.orientation != b.orientation:
        raise IncompatibleOrientations('Cannot match a %s map against a %s map'
                                       % (a.orientation, b.orientation))
    if a.source != b.source:
        log.warning('Matching maps from different sources (%s, %s)', a.source, b.source)

    b = b.transformed(transform)
    pa, pb = a.profile(), b.profile()

    best = None
    for offset in range(-(len(pb) - 1), len(pa)):
        lo = max(0, offset)
        hi = min(len(pa), offset + len(pb))
        xa = pa[lo:hi]
        xb = pb[lo - offset:hi - offset]
        valid = ~(np.isnan(xa) | np.isnan(xb))
        if valid.sum() < min_overlap:
            continue

        correlation = _pearson(xa[valid], xb[valid])
        if correlation is None:
            continue

        key = (correlation, -abs(offset), -offset)
        if best is None or key > best[0]:
            best = (key, offset, int(valid.sum()))

    if best is None:
        raise AnalysisError('Profiles share no %d-cell overlap with variance'
                            % min_overlap)

    (correlation, _, _), offset, n_cells = best
    composite = _composite(a.grid, b.grid, offset, a.orientation)
    return MatchReport(correlation, offset, n_cells, composite)


def color_ramp(size=256):
    """ ``(size, 3)`` uint8 ramp: red, yellow, green, blue. """
    cmap = LinearSegmentedColormap.from_list('density', RAMP_COLORS, N=size)
    rgb = cmap(np.arange(size))[:, :3]
    return np.floor(rgb * 255 + 0.5).astype(np.uint8)


def ramp_index(values, lo, hi):
    scaled = (np.asarray(values, dtype=np.float64) - lo) / (hi - lo) * 255.0
    return np.floor(scaled + 0.5).clip(0, 255).astype(np.intp)


def render_grid(grid, lo, hi, cell_px=1):
    """ RGB array of a density grid; missing cells are black. """
    if not lo < hi:
        raise AnalysisError('Colour range needs lo < hi, got (%r, %r)' % (lo, hi))
    grid = np.asarray(grid, dtype=np.float64)
    missing = np.isnan(grid)

    rgb = color_ramp()[ramp_index(np.where(missing, lo, grid), lo, hi)]
    rgb[missing] = 0
    if cell_px > 1:
        rgb = rgb.repeat(cell_px, axis=0).repeat(cell_px, axis=1)
    return rgb


def write_map_png(grid, path, lo, hi, cell_px=1):
    try:
        Image.fromarray(render_grid(grid, lo, hi, cell_px)).save(path)
    except (IOError, OSError) as ex:
        raise IoError('Cannot write %s: %s' % (path, ex))


def write_map_csv(grid, path):
    """ Rows ``i, j, value`` with ``NA`` for missing cells. """
    grid = np.asarray(grid, dtype=np.float64)
    try:
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(('i', 'j', 'value'))
            for (i, j), value in np.ndenumerate(grid):
                writer.writerow((i, j, 'NA' if np.isnan(value) else '%.9g' % value))
    except (IOError, OSError) as ex:
        raise IoError('Cannot write %s: %s' % (path, ex))


def read_map_csv(path, orientation='vertical', source='ft'):
    try:
        with open(path, newline='') as f:
            rows = list(csv.DictReader(f))
    except (IOError, OSError) as ex:
        raise IoError('Cannot read %s: %s' % (path, ex))

    if not rows:
        raise IoError('%s holds no cells' % path)

    p = max(int(row['i']) for row in rows) + 1
    q = max(int(row['j']) for row in rows) + 1
    grid = np.full((p, q), np.nan)
    for row in rows:
        if row['value'] != 'NA':
            grid[int(row['i']), int(row['j'])] = float(row['value'])
    return DensityMap(grid, None, orientation, source)


def export_map(density_map, png_path, csv_path, lo=4.0, hi=30.0, cell_px=1):
    """ Write a map as a colour-ramped PNG and as a cell CSV. """
    write_map_png(density_map.grid, png_path, lo, hi, cell_px)
    write_map_csv(density_map.grid, csv_path)
