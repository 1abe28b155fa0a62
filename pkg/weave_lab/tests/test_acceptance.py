"""
    Long-running end-to-end checks against synthetic ground truth.

    Set ``WEAVE_LAB_SLOW=1`` to run them.
"""
import os
import os.path as op

import numpy as np
import pytest

from weave_lab import analyzer, dataset, weavesim
from weave_lab.cli import dispatch
from weave_lab.preprocess import preprocess_plate
from weave_lab.regnet import (ArchConfig, RegModel, TrainConfig, train, evaluate,
                              weights)
from weave_lab.regnet.gradcheck import check_suite

pytestmark = pytest.mark.skipif(os.environ.get('WEAVE_LAB_SLOW') != '1',
                                reason='set WEAVE_LAB_SLOW=1 for acceptance runs')


def rng(seed):
    return np.random.Generator(np.random.Philox(seed))


@pytest.fixture(scope='module')
def trained():
    """ Reduced Reg-VGG trained on about 2000 synthetic records. """
    samples = dataset.synthetic_samples(8, 3, seed=11, size_cm=6.0)
    records = dataset.build_records(samples, seed=11)
    train_set, val_set, test_set = dataset.split_by_canvas(records)

    config = ArchConfig('reg_vgg', filters_per_kernel=4, dense_sizes=(128, 128, 1),
                        input_side=64)
    cfg = TrainConfig(batch_size=32, lr=1e-3, max_epochs=60, patience=15, seed=11)
    model, history = train(RegModel(config, seed=11), train_set, val_set, cfg)
    return model, history, test_set


def test_ft_oracle_clean():
    r = rng(0)
    for canvas in range(50):
        v, h = r.uniform(6, 23, 2)
        params = weavesim.WeaveParams(warp_density=v, weft_mean_density=h, seed=canvas)
        image, truth = weavesim.gen_canvas(params, 3, 3)
        v_map, h_map = analyzer.sweep(image, analyzer.FTEstimator())
        v_true, h_true = analyzer.truth_maps(truth, v_map.geometry)

        assert not v_map.missing.any() and not h_map.missing.any()
        assert np.abs(v_map.grid - v_true).max() <= 0.25, canvas
        assert np.abs(h_map.grid - h_true).max() <= 0.25, canvas


def test_ft_oracle_rotated_noisy():
    r = rng(1)
    within = total = 0
    for canvas in range(50):
        v, h = r.uniform(6, 23, 2)
        params = weavesim.WeaveParams(warp_density=v, weft_mean_density=h, seed=canvas,
                                      rotation_deg=3.0, noise_sigma=8.0)
        image, truth = weavesim.gen_canvas(params, 3, 3)
        v_map, h_map = analyzer.sweep(image, analyzer.FTEstimator())
        v_true, h_true = analyzer.truth_maps(truth, v_map.geometry)

        for grid, true in ((v_map.grid, v_true), (h_map.grid, h_true)):
            error = np.abs(grid - true)
            within += int((error <= 0.5).sum())
            total += error.size
    assert within >= 0.95 * total


def test_gradients():
    worst = check_suite(seeds=20)
    assert max(worst.values()) <= 1e-4


def test_trainability(trained):
    model, history, test_set = trained
    assert history.epochs <= 60
    score, _ = evaluate(model, test_set)
    assert score <= 0.05


def drop_plate(seed):
    params = weavesim.WeaveParams(warp_density=14.0, weft_mean_density=11.0,
                                  weft_spacing_sigma=0.004, noise_sigma=4.0,
                                  contrast_drop_regions=[(0, 0, 4, 5, 0.3)], seed=seed)
    image, truth = weavesim.gen_canvas(params, 10, 10)
    plate, _ = preprocess_plate(image)
    return plate, truth


def test_ss_refinement_direction(trained):
    model, _, _ = trained
    plate, truth = drop_plate(3)
    geometry = analyzer.sweep_geometry(plate.height_px, plate.width_px, 0.0)
    v_true, h_true = analyzer.truth_maps(truth, geometry)

    def whole_plate_nmae(m):
        v_map, h_map = analyzer.sweep(plate, analyzer.ModelEstimator(m))
        return (analyzer.map_nmae(v_map, v_true) + analyzer.map_nmae(h_map, h_true)) / 2

    before = whole_plate_nmae(model)
    improved = 0
    for seed in range(5):
        copy = weights.decode(weights.encode(model))
        config = analyzer.SSConfig(floor=20, seed=seed)
        refined, report = analyzer.ss_refine(plate, copy, config=config)
        after = whole_plate_nmae(refined)
        assert after <= before + 0.001
        improved += after < before
    assert improved >= 3


def bolt_maps(estimator):
    params = weavesim.WeaveParams(warp_density=13.0, weft_mean_density=12.0,
                                  weft_spacing_sigma=0.006, seed=5)
    bolt, truth = weavesim.gen_bolt(params, 30, 60)
    a, _ = weavesim.cut_canvas(bolt, truth, 0, 0, 30, 30)
    b, _ = weavesim.cut_canvas(bolt, truth, 10, 0, 30, 30, flip='v')
    _, map_a = analyzer.sweep(a, estimator)
    _, map_b = analyzer.sweep(b, estimator)
    return map_a, map_b


def test_bolt_matching_ft():
    map_a, map_b = bolt_maps(analyzer.FTEstimator())
    report = analyzer.match_maps(map_a, map_b, transform='flip_v')
    assert report.correlation >= 0.9
    assert abs(report.offset - 10) <= 1


def test_bolt_matching_model(trained):
    model, _, _ = trained
    map_a, map_b = bolt_maps(analyzer.ModelEstimator(model))
    report = analyzer.match_maps(map_a, map_b, transform='flip_v')
    assert report.correlation >= 0.9
    assert abs(report.offset - 10) <= 1


def test_cli_runs_are_byte_identical(tmpdir):
    corpus = str(tmpdir.join('corpus'))
    assert dispatch(['--deterministic', 'build-corpus', '--out', corpus,
                     '--canvases', '3', '--samples-per-canvas', '1', '--size-cm', '3',
                     '--fixed-k', '23']) == 0

    plate = str(tmpdir.join('plate.png'))
    assert dispatch(['synth', '--warp', '12', '--weft', '12', '--width-cm', '4',
                     '--height-cm', '4', '--out', plate]) == 0

    trained_blobs = []
    for run in ('a', 'b'):
        model = str(tmpdir.join('%s.wlw' % run))
        assert dispatch(['--deterministic', 'train', corpus, '--filters', '1',
                         '--stage-blocks', '1', '--stage-widths', '1', '--dense', '8,1',
                         '--input-side', '32', '--max-epochs', '3', '--patience', '3',
                         '--seed', '2', '--out', model]) == 0
        with open(model, 'rb') as f:
            trained_blobs.append(f.read())
    assert trained_blobs[0] == trained_blobs[1]

    # pin the output near the plate's density so the FT agrees with it
    base = weights.load_weights(str(tmpdir.join('a.wlw')))
    head = base.dense_layers()[-1]
    head.params['W'] = head.params['W'] * np.float32(1e-3)
    head.params['b'] = np.full(1, 12.0, dtype=np.float32)
    weights.save_weights(base, str(tmpdir.join('base.wlw')))

    refined_blobs = []
    for run in ('a', 'b'):
        refined = str(tmpdir.join('%s.ss.wlw' % run))
        assert dispatch(['--deterministic', 'ss-refine', plate,
                         '--weights', str(tmpdir.join('base.wlw')), '--out', refined,
                         '--floor', '4', '--freeze-last-dense', '1', '--max-epochs', '2',
                         '--patience', '1',
                         '--report', str(tmpdir.join('%s.json' % run))]) == 0
        with open(refined, 'rb') as f:
            refined_blobs.append(f.read())
    assert refined_blobs[0] == refined_blobs[1]
    assert op.isfile(str(tmpdir.join('a.json')))
