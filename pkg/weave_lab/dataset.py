"""
    Training corpora: crop/flip/rotation augmentation of labelled samples,
    90 degree duplication for horizontal labels, canvas-disjoint splits and
    the on-disk corpus layout.
"""
import csv
import logging
import os
import os.path as op

import numpy as np

from weave_lab import raster
from weave_lab.errors import DatasetError, TooFewCanvases

log = logging.getLogger(__name__)

SAMPLE_SIDE = 300
PATCH_SIDE = 200
LABEL_RANGE = (4.0, 30.0)

FLIPS = ('none', 'h', 'v')

#: Offsets of the unrotated central crops.
CENTRAL_OFFSETS = ((50, 50), (65, 65), (35, 35), (80, 80))

GRID_OFFSETS = 10

#: Allowed random rotations, degrees.
ROTATION_RANGES = ((-6.0, -4.0), (-3.5, -1.0), (1.0, 3.5), (4.0, 6.0))

#: Lattice coordinates counted as corners; the rest is centre.
CORNER_BAND = 25
CORNER_WEIGHT = 2.0 / 3.0

RECORD_COLUMNS = ('file', 'label', 'canvas_id', 'rot90', 'rotation_deg',
                  'flip', 'off_y', 'off_x')


def _rng(seed):
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def _check_label(value, name):
    lo, hi = LABEL_RANGE
    if not lo <= value <= hi:
        raise DatasetError('%s must lie in [%g, %g], got %g' % (name, lo, hi, value))


class LabeledSample(object):
    """
        Annotated 1.5 x 1.5 cm sample.

        `image`
            300 x 300 `GrayImage` at 200 pixels per cm.
        `v_density`, `h_density`
            Vertical and horizontal labels, threads/cm.
        `canvas_id`
            Canvas the sample was taken from.
    """
    def __init__(self, image, v_density, h_density, canvas_id):
        if image.shape != (SAMPLE_SIDE, SAMPLE_SIDE):
            raise DatasetError('Samples must be %dx%d, got %dx%d'
                               % ((SAMPLE_SIDE, SAMPLE_SIDE) + image.shape))
        _check_label(v_density, 'v_density')
        _check_label(h_density, 'h_density')

        self.image = image
        self.v_density = float(v_density)
        self.h_density = float(h_density)
        self.canvas_id = str(canvas_id)


class PatchRecord(object):
    """
        One training patch with its vertical-density label and the
        augmentation that produced it.
    """
    def __init__(self, patch, label, canvas_id, off_y=0, off_x=0, flip='none',
                 rotation_deg=0.0, rot90=False):
        if patch.shape != (PATCH_SIDE, PATCH_SIDE):
            raise DatasetError('Patches must be %dx%d, got %dx%d'
                               % ((PATCH_SIDE, PATCH_SIDE) + patch.shape))
        if not label > 0:
            raise DatasetError('Labels must be positive, got %r' % label)
        if flip not in FLIPS:
            raise DatasetError('Unknown flip %r' % flip)

        self.patch = patch
        self.label = float(label)
        self.canvas_id = str(canvas_id)
        self.off_y = int(off_y)
        self.off_x = int(off_x)
        self.flip = flip
        self.rotation_deg = float(rotation_deg)
        self.rot90 = bool(rot90)

    @property
    def provenance(self):
        return dict(off_y=self.off_y, off_x=self.off_x, flip=self.flip,
                    rotation_deg=self.rotation_deg, rot90=self.rot90)

    def __repr__(self):
        return '<PatchRecord %s label=%.3f %r>' % (self.canvas_id, self.label,
                                                   self.provenance)


def rotation_ranges(two_x_angle=False):
    if not two_x_angle:
        return ROTATION_RANGES
    return tuple((2 * lo, 2 * hi) for lo, hi in ROTATION_RANGES)


def draw_rotation(rng, two_x_angle=False):
    """ Uniform draw over the union of the allowed rotation ranges. """
    ranges = rotation_ranges(two_x_angle)
    lengths = np.array([hi - lo for lo, hi in ranges])
    lo, hi = ranges[rng.choice(len(ranges), p=lengths / lengths.sum())]
    return float(rng.uniform(lo, hi))


def _lattice_coordinate(rng, corner):
    limit = SAMPLE_SIDE - PATCH_SIDE
    if corner:
        value = int(rng.integers(0, 2 * (CORNER_BAND + 1)))
        return value if value <= CORNER_BAND else limit - (value - CORNER_BAND - 1)
    return int(rng.integers(CORNER_BAND + 1, limit - CORNER_BAND))


def draw_offsets(rng, count=GRID_OFFSETS):
    """
        Distinct crop offsets on the 0..100 lattice, biased 2:1 towards
        the corners.
    """
    offsets = []
    while len(offsets) < count:
        corner = rng.random() < CORNER_WEIGHT
        offset = (_lattice_coordinate(rng, corner), _lattice_coordinate(rng, corner))
        if offset not in offsets:
            offsets.append(offset)
    return offsets


def _flipped(image, flip):
    if flip == 'h':
        return raster.flip_h(image)
    if flip == 'v':
        return raster.flip_v(image)
    return image


def augment_sample(sample, seed, two_x_angle=False, central_crops=True):
    """
        Expand one sample into patch records.

        30 grid crops (10 seeded offsets x no flip / horizontal / vertical
        flip), a seeded third of them rotated, plus 12 unrotated central
        crops. Every patch is then duplicated rotated by 90 degrees and
        labelled with the horizontal density.

        `seed`
            Integer or `numpy.random.SeedSequence`.
        `two_x_angle`
            Double the rotation ranges.
        `central_crops`
            Include the central crops.
    """
    rng = _rng(seed)

    grid = [(offset, flip) for offset in draw_offsets(rng) for flip in FLIPS]
    rotated = set(int(i) for i in rng.choice(len(grid), len(grid) // 3,
                                             replace=False))

    base = []
    for index, ((off_y, off_x), flip) in enumerate(grid):
        source = _flipped(sample.image, flip)
        angle = 0.0
        if index in rotated:
            angle = draw_rotation(rng, two_x_angle)
            source = raster.rotate(source, angle)
        base.append((source, off_y, off_x, flip, angle))

    if central_crops:
        for off_y, off_x in CENTRAL_OFFSETS:
            for flip in FLIPS:
                base.append((_flipped(sample.image, flip), off_y, off_x, flip, 0.0))

    records = []
    for source, off_y, off_x, flip, angle in base:
        patch = raster.crop(source, off_y, off_x, PATCH_SIDE, PATCH_SIDE)
        records.append(PatchRecord(patch, sample.v_density, sample.canvas_id,
                                   off_y, off_x, flip, angle, rot90=False))

    for record in list(records):
        records.append(PatchRecord(raster.rotate(record.patch, 90),
                                   sample.h_density, sample.canvas_id,
                                   record.off_y, record.off_x, record.flip,
                                   record.rotation_deg, rot90=True))

    return records


def build_records(samples, seed, two_x_angle=False, central_crops=True):
    """
        Augment every sample, in canvas_id order, each with its own seed
        stream.
    """
    root = np.random.SeedSequence(seed)
    ordered = sorted(enumerate(samples), key=lambda item: item[1].canvas_id)

    records = []
    for index, sample in ordered:
        stream = np.random.SeedSequence(root.entropy, spawn_key=(index,))
        records.extend(augment_sample(sample, stream, two_x_angle, central_crops))

    log.info('Built %d records from %d samples', len(records), len(samples))
    return records


def split_by_canvas(records, fractions=(0.7, 0.15, 0.15)):
    """
        Assign whole canvases to train/validation/test subsets, largest
        canvases first, each to the subset furthest below its target
        record count.

        Returns three lists of records, in input order.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or min(fractions) < 0 or abs(sum(fractions) - 1) > 1e-6:
        raise DatasetError('Split fractions must be three values summing to 1')

    counts = {}
    for record in records:
        counts[record.canvas_id] = counts.get(record.canvas_id, 0) + 1

    if len(counts) < 3:
        raise TooFewCanvases('Need at least 3 canvases, got %d' % len(counts))

    total = float(len(records))
    targets = [f * total for f in fractions]
    assigned = [0, 0, 0]
    members = [set(), set(), set()]

    order = sorted(counts, key=lambda cid: (-counts[cid], cid))
    for position, canvas_id in enumerate(order):
        remaining = len(order) - position
        empty = [k for k in range(3) if not members[k]]

        if len(empty) >= remaining:
            subset = empty[0]
        else:
            deficits = [targets[k] - assigned[k] for k in range(3)]
            subset = int(np.argmax(deficits))

        members[subset].add(canvas_id)
        assigned[subset] += counts[canvas_id]

    log.info('Split %d canvases into %d/%d/%d records', len(order), *assigned)
    return tuple([r for r in records if r.canvas_id in members[k]]
                 for k in range(3))


def sample_from_canvas(image, truth, canvas_id, count, seed):
    """
        Cut `count` random 300 x 300 samples out of a synthetic canvas and
        label them by spatial counting over the sample extent.
    """
    rng = _rng(seed)
    side_cm = SAMPLE_SIDE / image.ppcm

    samples = []
    for _ in range(count):
        top = int(rng.integers(0, image.height_px - SAMPLE_SIDE + 1))
        left = int(rng.integers(0, image.width_px - SAMPLE_SIDE + 1))
        v, h = truth.patch_truth(top, left, image.ppcm, side_cm)
        samples.append(LabeledSample(
            raster.crop(image, top, left, SAMPLE_SIDE, SAMPLE_SIDE), v, h, canvas_id))
    return samples


def synthetic_samples(canvases, samples_per_canvas, seed, density_range=(6.0, 23.0),
                      size_cm=6.0, max_noise=8.0, equalization=True, fixed_k=None):
    """
        Labelled samples from randomly parametrised synthetic canvases,
        preprocessed as plates are before analysis.
    """
    from weave_lab import preprocess, weavesim

    root = np.random.SeedSequence(seed)
    rng = _rng(root.spawn(1)[0])
    lo, hi = density_range

    samples = []
    for index in range(canvases):
        warp = float(rng.uniform(lo, hi))
        weft = float(rng.uniform(lo, hi))
        params = weavesim.WeaveParams(
            warp_density=warp, weft_mean_density=weft,
            weft_spacing_sigma=float(rng.uniform(0, 0.03)) / weft,
            thread_width_frac=float(rng.uniform(0.35, 0.65)),
            noise_sigma=float(rng.uniform(0, max_noise)),
            rotation_deg=float(rng.uniform(-1, 1)),
            seed=int(rng.integers(0, 2 ** 63)))

        image, truth = weavesim.gen_canvas(params, size_cm, size_cm)
        image, _ = preprocess.preprocess_plate(image, fixed_k=fixed_k,
                                               equalization=equalization)

        canvas_id = 'synth-%03d' % index
        samples.extend(sample_from_canvas(image, truth, canvas_id, samples_per_canvas,
                                          np.random.SeedSequence(root.entropy,
                                                                 spawn_key=(1, index))))
        log.info('Canvas %s: warp %.2f, weft %.2f', canvas_id, warp, weft)

    return samples


def write_corpus(records, root):
    """
        One directory per canvas with PNG patches, plus ``records.csv`` at
        the corpus root.
    """
    if not op.isdir(root):
        os.makedirs(root)

    index = {}
    with open(op.join(root, 'records.csv'), 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(RECORD_COLUMNS)

        for record in sorted(records, key=lambda r: r.canvas_id):
            directory = op.join(root, record.canvas_id)
            if not op.isdir(directory):
                os.makedirs(directory)

            number = index.get(record.canvas_id, 0)
            index[record.canvas_id] = number + 1

            name = '%s/%05d.png' % (record.canvas_id, number)
            raster.save_gray(record.patch, op.join(root, name), with_meta=False)
            writer.writerow((name, '%.9g' % record.label, record.canvas_id,
                             int(record.rot90), '%.9g' % record.rotation_deg,
                             record.flip, record.off_y, record.off_x))


def read_corpus(root):
    """ Records of a corpus written by `write_corpus`, with their files. """
    path = op.join(root, 'records.csv')
    if not op.isfile(path):
        raise DatasetError('No records.csv in %s' % root)

    records = []
    with open(path, newline='') as f:
        for row in csv.DictReader(f):
            patch = raster.load_gray(op.join(root, row['file']),
                                     ppcm=raster.CANONICAL_PPCM)
            record = PatchRecord(patch, float(row['label']), row['canvas_id'],
                                 int(row['off_y']), int(row['off_x']), row['flip'],
                                 float(row['rotation_deg']), row['rot90'] == '1')
            record.file = row['file']
            records.append(record)

    return records
