import json
import os.path as op

import numpy as np

from weave_lab import raster, weavesim
from weave_lab.analyzer import DensityMap, write_map_csv
from weave_lab.cli import dispatch, Session


def run(capsys, *args):
    code = dispatch([str(arg) for arg in args])
    out, err = capsys.readouterr()
    return code, out, err


def small_plate(tmpdir, side=100):
    path = str(tmpdir.join('plate.png'))
    raster.save_gray(raster.GrayImage(np.full((side, side), 90.0)), path)
    return path


def test_session():
    assert Session(4).threads == 4
    assert Session(4, deterministic=True).threads == 1


def test_version(capsys):
    code, out, _ = run(capsys, '--version')
    assert code == 0
    assert out.strip() == 'WLW1'


def test_help(capsys):
    code, out, _ = run(capsys, '--help')
    assert code == 0
    for name in ('synth', 'preprocess', 'ft-analyze', 'analyze', 'build-corpus',
                 'train', 'evaluate', 'ss-refine', 'match', 'grad-check'):
        assert name in out


def test_unknown_flag(capsys):
    code, _, err = run(capsys, 'synth', '--out', 'x.png', '--colour', 'red')
    assert code == 2
    assert '--colour' in err


def test_synth(tmpdir, capsys):
    out = str(tmpdir.join('canvas.png'))
    code, _, _ = run(capsys, 'synth', '--warp', 10, '--weft', 14, '--width-cm', 3,
                     '--height-cm', 2, '--out', out)
    assert code == 0
    assert op.isfile(out)
    assert op.isfile(str(tmpdir.join('canvas.meta')))

    image = raster.load_gray(out)
    assert image.shape == (400, 600)
    assert image.ppcm == 200.0

    v_map, h_map = weavesim.read_truth_csv(str(tmpdir.join('canvas.truth.csv')))
    assert v_map.shape == (2, 3)
    np.testing.assert_allclose(v_map, 10.0, atol=1e-6)
    np.testing.assert_allclose(h_map, 14.0, atol=1e-6)


def test_invalid_options(tmpdir, capsys):
    out = str(tmpdir.join('canvas.png'))
    code, _, err = run(capsys, 'synth', '--width-frac', 0.95, '--out', out)
    assert code == 1
    assert 'InvalidOptions' in err
    assert not op.exists(out)

    code, _, err = run(capsys, 'analyze', small_plate(tmpdir), '--out',
                       str(tmpdir.join('maps')))
    assert code == 1
    assert '--weights' in err


def test_plate_too_small(tmpdir, capsys):
    code, _, err = run(capsys, 'ft-analyze', small_plate(tmpdir), '--out',
                       str(tmpdir.join('maps', 'plate')))
    assert code == 1
    assert 'PlateTooSmall' in err
    assert not tmpdir.join('maps').check()


def test_malformed_meta(tmpdir, capsys):
    plate = small_plate(tmpdir, side=400)
    tmpdir.join('plate.meta').write('ppcm=abc\n')
    code, _, err = run(capsys, 'ft-analyze', plate, '--out',
                       str(tmpdir.join('maps', 'plate')))
    assert code == 1
    assert 'UnreadableFile' in err
    assert 'Traceback' not in err


def test_ft_analyze(tmpdir, capsys):
    plate = small_plate(tmpdir, side=400)
    prefix = str(tmpdir.join('maps', 'plate'))
    code, _, _ = run(capsys, '--threads', 2, 'ft-analyze', plate, '--out', prefix,
                     '--overlap', 0.5)
    assert code == 0
    for name in ('plate.v.csv', 'plate.h.csv', 'plate.v.png', 'plate.h.png'):
        assert tmpdir.join('maps', name).check()

    with open(prefix + '.v.csv') as f:
        rows = f.read().splitlines()
    assert len(rows) == 1 + 9
    assert rows[1] == '0,0,NA'


def test_config_defaults(tmpdir, capsys):
    config = tmpdir.join('run.cfg')
    config.write('width-cm = 3\nheight-cm = 2\nwarp = 20\n')
    out = str(tmpdir.join('canvas.png'))

    code, _, _ = run(capsys, '--config', str(config), 'synth', '--out', out,
                     '--width-cm', 4)
    assert code == 0
    assert raster.load_gray(out).shape == (400, 800)

    v_map, _ = weavesim.read_truth_csv(str(tmpdir.join('canvas.truth.csv')))
    np.testing.assert_allclose(v_map, 20.0, atol=1e-6)


def test_bad_config(tmpdir, capsys):
    config = tmpdir.join('run.cfg')
    config.write('colour = red\n')
    code, _, err = run(capsys, '--config', str(config), 'synth', '--out', 'x.png')
    assert code == 2
    assert 'COLOUR' in err

    code, _, _ = run(capsys, '--config', str(tmpdir.join('missing.cfg')), 'grad-check')
    assert code == 2


def test_match(tmpdir, capsys):
    rng = np.random.Generator(np.random.Philox(0))
    values = rng.uniform(10, 20, 12)
    grid = np.tile(values[:, None], (1, 3))
    a = str(tmpdir.join('a.csv'))
    b = str(tmpdir.join('b.csv'))
    write_map_csv(grid, a)
    write_map_csv(DensityMap(grid[2:8]).transformed('flip_v').grid, b)

    composite = str(tmpdir.join('composite.png'))
    code, out, _ = run(capsys, 'match', a, b, '--transform', 'flip_v', '--out', composite)
    assert code == 0
    report = json.loads(out)
    assert report['offset'] == 2
    assert abs(report['correlation'] - 1) < 1e-9
    assert op.isfile(composite)


def test_grad_check(capsys):
    code, out, _ = run(capsys, 'grad-check', '--seeds', 1)
    assert code == 0
    assert 'residual_inception' in out

    code, _, err = run(capsys, 'grad-check', '--seeds', 1, '--tolerance', 0)
    assert code == 1
    assert 'ModelError' in err


def test_corpus_train_evaluate(tmpdir, capsys):
    corpus = str(tmpdir.join('corpus'))
    code, _, _ = run(capsys, '--deterministic', 'build-corpus', '--out', corpus,
                     '--canvases', 3, '--samples-per-canvas', 1, '--size-cm', 3,
                     '--fixed-k', 23, '--no-central-crops')
    assert code == 0
    for subset in ('train', 'val', 'test'):
        assert tmpdir.join('corpus', subset, 'records.csv').check()

    weights = str(tmpdir.join('model.wlw'))
    dump = str(tmpdir.join('arch.json'))
    code, _, _ = run(capsys, 'train', corpus, '--filters', 1, '--stage-blocks', 1,
                     '--stage-widths', 1, '--dense', '4,1', '--input-side', 16,
                     '--max-epochs', 2, '--patience', 1, '--out', weights,
                     '--dump', dump)
    assert code == 0
    assert op.isfile(weights)
    assert tmpdir.join('history.csv').check()
    with open(dump) as f:
        assert json.load(f)['input_side'] == 16

    code, out, _ = run(capsys, 'evaluate', corpus, '--weights', weights, '--out',
                       str(tmpdir.join('eval.csv')))
    assert code == 0
    assert out.startswith('nmae=')
    assert 'records=' in out
