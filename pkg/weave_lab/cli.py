"""
    ``weave-lab`` command line.

    Every subcommand validates its options with the matching form of
    `weave_lab.form` before doing any work. Results go to files or
    standard output, diagnostics to standard error.
"""
import json
import logging
import os
import os.path as op
import sys

import click

from weave_lab import raster, WEIGHTS_FORMAT
from weave_lab.config import RunConfig, normalize_key
from weave_lab.errors import WeaveLabError, ConfigError, ModelError
from weave_lab import form as forms

log = logging.getLogger(__name__)

#: Subset directories written by ``build-corpus``.
SUBSETS = ('train', 'val', 'test')


class Session(object):
    """
        Options of the command group shared by every subcommand.

        `threads`
            Worker threads of the patch sweeps; 1 when deterministic.
    """
    def __init__(self, threads=1, deterministic=False):
        self.deterministic = deterministic
        self.threads = 1 if deterministic else threads


def setup_logging(verbose=False):
    """ One stderr handler on the package logger, replaced on every call. """
    logger = logging.getLogger('weave_lab')
    for handler in list(logger.handlers):
        if getattr(handler, 'weave_lab_cli', False):
            logger.removeHandler(handler)

    handler = logging.StreamHandler(sys.stderr)
    handler.weave_lab_cli = True
    handler.setFormatter(logging.Formatter('%(levelname)s %(name)s: %(message)s'))
    logger.addHandler(handler)
    logger.setLevel(logging.DEBUG if verbose else logging.INFO)


def command_params(group):
    """ ``{command: (param names, repeatable param names)}`` of a group. """
    params = {}
    for name, command in group.commands.items():
        names = [p.name for p in command.params]
        multiple = set(p.name for p in command.params if getattr(p, 'multiple', False))
        params[name] = (names, multiple)
    return params


def validated(form_class, options):
    return form_class(options).validated()


def load_plate(path, ppcm=None):
    """ Plate resampled to the canonical 200 pixels per cm. """
    plate = raster.load_gray(path, ppcm)
    if plate.ppcm != raster.CANONICAL_PPCM:
        log.info('Rescaling %s from %g to %g ppcm', path, plate.ppcm,
                 raster.CANONICAL_PPCM)
        plate = raster.rescale(plate, raster.CANONICAL_PPCM)
    return plate


def ensure_dir(path):
    if path and not op.isdir(path):
        os.makedirs(path)


def write_json(data, path=None):
    text = json.dumps(data, sort_keys=True, indent=2)
    if path:
        with open(path, 'w') as f:
            f.write(text + '\n')
    else:
        click.echo(text)


@click.group(context_settings=dict(help_option_names=['-h', '--help']))
@click.version_option(version=WEIGHTS_FORMAT, prog_name='weave-lab',
                      message='%(version)s')
@click.option('--config', 'config_path', metavar='PATH',
              help='key=value file of option defaults.')
@click.option('--threads', type=click.IntRange(min=1), default=1, show_default=True,
              help='Worker threads for patch sweeps.')
@click.option('--deterministic', is_flag=True,
              help='Single-threaded, fixed-order reductions everywhere.')
@click.option('--verbose', '-v', is_flag=True, help='Debug logging.')
@click.pass_context
def cli(ctx, config_path, threads, deterministic, verbose):
    """ Thread density estimation for plain-weave canvases. """
    setup_logging(verbose)

    if config_path:
        params = command_params(cli)
        known = set(normalize_key(name)
                    for names, _ in params.values() for name in names)
        config = RunConfig(known=known).load_file(config_path)
        ctx.default_map = config.default_map(params)

    ctx.obj = Session(threads, deterministic)


@cli.command()
@click.option('--warp', type=float, default=12.0, show_default=True,
              help='Warp (vertical) threads per cm.')
@click.option('--weft', type=float, default=12.0, show_default=True,
              help='Mean weft (horizontal) threads per cm.')
@click.option('--sigma', type=float, default=0.0, help='Weft gap deviation, cm.')
@click.option('--width-frac', type=float, default=0.5, help='Ridge width / spacing.')
@click.option('--noise', type=float, default=0.0, help='Gaussian noise sigma.')
@click.option('--rotation', type=float, default=0.0, help='Clockwise degrees.')
@click.option('--drop', multiple=True, metavar='TOP,LEFT,H,W,GAIN',
              help='Contrast drop region in cm; repeatable.')
@click.option('--seed', type=int, default=0)
@click.option('--crossing-gain', type=float, default=1.3)
@click.option('--width-cm', type=float, default=10.0, show_default=True)
@click.option('--height-cm', type=float, default=10.0, show_default=True)
@click.option('--out', required=True, help='Output image (.png or .pgm).')
def synth(**options):
    """ Render a synthetic canvas with its ground truth. """
    from weave_lab import weavesim

    data = validated(forms.SynthForm, options)
    params = weavesim.WeaveParams(
        warp_density=data['warp'], weft_mean_density=data['weft'],
        weft_spacing_sigma=data['sigma'], thread_width_frac=data['width_frac'],
        noise_sigma=data['noise'], rotation_deg=data['rotation'],
        contrast_drop_regions=data['drop'] or (), seed=data['seed'],
        crossing_gain=data['crossing_gain'])

    image, truth = weavesim.gen_canvas(params, data['width_cm'], data['height_cm'])
    raster.save_gray(image, data['out'])
    weavesim.write_truth_csv(truth, op.splitext(data['out'])[0] + '.truth.csv')
    log.info('Wrote %s (%dx%d px)', data['out'], image.height_px, image.width_px)


@cli.command()
@click.argument('source')
@click.argument('out')
@click.option('--k0', type=int, default=21, show_default=True,
              help='Initial normalisation window.')
@click.option('--fixed-k', type=int, help='Skip kernel estimation, use this window.')
@click.option('--no-equalize', is_flag=True, help='Skip histogram equalisation.')
@click.option('--ppcm', type=float, help='Pixels per cm of SOURCE.')
def preprocess(**options):
    """ Normalise and equalise a plate. """
    from weave_lab.preprocess import preprocess_plate

    data = validated(forms.PreprocessForm, options)
    plate = load_plate(data['source'], data['ppcm'])
    image, plan = preprocess_plate(plate, data['k0'], data['fixed_k'],
                                   not data['no_equalize'])
    raster.save_gray(image, data['out'])
    if plan is not None:
        log.info('Kernel plan: %r', plan)


def _analyze(session, data, estimator):
    from weave_lab import analyzer
    from weave_lab.preprocess import preprocess_plate

    plate = load_plate(data['plate'], data['ppcm'])
    analyzer.sweep_geometry(plate.height_px, plate.width_px, data['overlap'])
    if data.get('preprocess'):
        plate, _ = preprocess_plate(plate)

    v_map, h_map = analyzer.sweep(plate, estimator, data['overlap'], session.threads)
    lo, hi = data['range']
    prefix = data['out']
    ensure_dir(op.dirname(prefix))
    for tag, density_map in (('v', v_map), ('h', h_map)):
        analyzer.export_map(density_map, '%s.%s.png' % (prefix, tag),
                            '%s.%s.csv' % (prefix, tag), lo, hi)

    summary = dict(geometry=v_map.geometry.to_dict(),
                   missing_v=int(v_map.missing.sum()),
                   missing_h=int(h_map.missing.sum()))
    log.info('Density maps written to %s.{v,h}.{csv,png}: %r', prefix, summary)


def _analyze_options(func):
    options = [
        click.argument('plate'),
        click.option('--overlap', type=float, default=0.0, show_default=True,
                     help='Overlap of neighbouring patches, in [0, 1).'),
        click.option('--out', required=True, help='Output prefix.'),
        click.option('--ppcm', type=float, help='Pixels per cm of PLATE.'),
        click.option('--range', default='4,30', show_default=True,
                     help='Density range of the colour ramp.'),
        click.option('--preprocess', is_flag=True,
                     help='Preprocess the plate before the sweep.'),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@cli.command('ft-analyze')
@_analyze_options
@click.pass_obj
def ft_analyze(session, **options):
    """ FT density maps of a plate. """
    from weave_lab.analyzer import FTEstimator

    options.update(estimator='ft', batch_size=64)
    data = validated(forms.AnalyzeForm, options)
    _analyze(session, data, FTEstimator())


@cli.command()
@_analyze_options
@click.option('--estimator', type=click.Choice(['ft', 'model']), default='model',
              show_default=True)
@click.option('--weights', help='Weight file of the model estimator.')
@click.option('--batch-size', type=int, default=64)
@click.pass_obj
def analyze(session, **options):
    """ Density maps of a plate from the FT or a trained model. """
    from weave_lab.analyzer import FTEstimator, ModelEstimator
    from weave_lab.regnet import load_weights

    data = validated(forms.AnalyzeForm, options)
    if data['estimator'] == 'ft':
        estimator = FTEstimator()
    else:
        estimator = ModelEstimator(load_weights(data['weights']), data['batch_size'])
    _analyze(session, data, estimator)


@cli.command('build-corpus')
@click.option('--out', required=True, help='Corpus directory.')
@click.option('--canvases', type=int, default=10, show_default=True)
@click.option('--samples-per-canvas', type=int, default=4, show_default=True)
@click.option('--size-cm', type=float, default=6.0, show_default=True)
@click.option('--seed', type=int, default=0)
@click.option('--split', default='0.7,0.15,0.15', show_default=True,
              help='Train, validation and test fractions.')
@click.option('--2x-angle', 'two_x_angle', is_flag=True,
              help='Double the rotation ranges.')
@click.option('--no-central-crops', is_flag=True)
@click.option('--no-equalize', is_flag=True)
@click.option('--fixed-k', type=int)
@click.option('--max-noise', type=float, default=8.0, show_default=True)
def build_corpus(**options):
    """ Synthetic, augmented, canvas-disjoint training corpus. """
    from weave_lab import dataset

    data = validated(forms.BuildCorpusForm, options)
    samples = dataset.synthetic_samples(
        data['canvases'], data['samples_per_canvas'], data['seed'],
        size_cm=data['size_cm'], max_noise=data['max_noise'],
        equalization=not data['no_equalize'], fixed_k=data['fixed_k'])
    records = dataset.build_records(samples, data['seed'], data['two_x_angle'],
                                    not data['no_central_crops'])

    for name, subset in zip(SUBSETS, dataset.split_by_canvas(records, data['split'])):
        dataset.write_corpus(subset, op.join(data['out'], name))
        log.info('%s: %d records', name, len(subset))


def _arch_config(data):
    from weave_lab.regnet import ArchConfig

    return ArchConfig(data['arch'], filters_per_kernel=data['filters'],
                      stage_blocks=data['stage_blocks'],
                      stage_widths=data['stage_widths'],
                      dense_sizes=data['dense'], dropout=data['dropout'],
                      input_side=data['input_side'])


@cli.command()
@click.argument('corpus')
@click.option('--arch', default='reg_vgg', show_default=True)
@click.option('--filters', type=int, help='Filters per kernel size.')
@click.option('--stage-blocks', help='Blocks per stage, e.g. 2,2,3,3,3.')
@click.option('--stage-widths', help='Filter multiplier per stage.')
@click.option('--dense', help='Dense layer sizes ending in 1.')
@click.option('--dropout', type=float)
@click.option('--input-side', type=int, default=200, show_default=True)
@click.option('--batch-size', type=int, default=32, show_default=True)
@click.option('--lr', type=float, default=1e-3, show_default=True)
@click.option('--beta1', type=float, default=0.9)
@click.option('--beta2', type=float, default=0.999)
@click.option('--adam-eps', type=float, default=1e-8)
@click.option('--max-epochs', type=int, default=450, show_default=True)
@click.option('--patience', type=int, default=65, show_default=True)
@click.option('--seed', type=int, default=0)
@click.option('--freeze-last-dense', type=int, default=0)
@click.option('--restarts', type=int, default=1, show_default=True,
              help='Independent runs; the best on validation is kept.')
@click.option('--out', required=True, help='Weight file to write.')
@click.option('--history', help='History CSV, next to --out by default.')
@click.option('--dump', help='Write the architecture description here.')
def train(**options):
    """ Train a regressor on a corpus written by build-corpus. """
    from weave_lab import dataset
    from weave_lab.regnet import TrainConfig, train_restarts, save_weights

    data = validated(forms.TrainForm, options)
    config = _arch_config(data)
    cfg = TrainConfig(batch_size=data['batch_size'], lr=data['lr'],
                      beta1=data['beta1'], beta2=data['beta2'], eps=data['adam_eps'],
                      max_epochs=data['max_epochs'], patience=data['patience'],
                      seed=data['seed'], freeze_last_dense=data['freeze_last_dense'])

    train_set = dataset.read_corpus(op.join(data['corpus'], 'train'))
    val_set = dataset.read_corpus(op.join(data['corpus'], 'val'))

    model, history, seed = train_restarts(config, train_set, val_set, cfg,
                                          data['restarts'])
    save_weights(model, data['out'])
    history.write_csv(data['history'] or
                      op.join(op.dirname(data['out']) or '.', 'history.csv'))
    if data['dump']:
        with open(data['dump'], 'w') as f:
            f.write(config.dump(model) + '\n')

    log.info('Kept seed %d: best val NMAE %.5f at epoch %d', seed,
             history.best_val, history.best_epoch)


@cli.command()
@click.argument('corpus')
@click.option('--weights', required=True)
@click.option('--out', help='Per-record CSV (file, label, prediction, nae).')
@click.option('--batch-size', type=int, default=64)
def evaluate(**options):
    """ NMAE of a model on a corpus (its test subset when present). """
    from weave_lab import dataset
    from weave_lab.regnet import load_weights, evaluate as evaluate_model, \
        write_evaluation_csv

    data = validated(forms.EvaluateForm, options)
    root = data['corpus']
    if op.isdir(op.join(root, 'test')):
        root = op.join(root, 'test')

    model = load_weights(data['weights'])
    score, rows = evaluate_model(model, dataset.read_corpus(root), data['batch_size'])
    if data['out']:
        write_evaluation_csv(rows, data['out'])
    click.echo('nmae=%.6f records=%d' % (score, len(rows)))


@cli.command('ss-refine')
@click.argument('plate')
@click.option('--weights', required=True, help='Weight file to refine.')
@click.option('--out', required=True, help='Refined weight file.')
@click.option('--report', help='Report JSON; standard output by default.')
@click.option('--overlap', type=float, default=0.0)
@click.option('--ppcm', type=float)
@click.option('--tolerance', type=float, default=0.04, show_default=True)
@click.option('--cap', type=int, default=60000, show_default=True)
@click.option('--floor', type=int, default=100, show_default=True)
@click.option('--train-fraction', type=float, default=0.7)
@click.option('--lr', type=float, default=1e-3)
@click.option('--patience', type=int, default=3)
@click.option('--max-epochs', type=int, default=20)
@click.option('--freeze-last-dense', type=int, default=3)
@click.option('--block-rows', type=int, default=40)
@click.option('--batch-size', type=int, default=32)
@click.option('--ss-label', type=click.Choice(['dl', 'ft']), default='dl',
              show_default=True, help='Pseudo-label source of agreed patches.')
@click.option('--seed', type=int, default=0)
def ss_refine(**options):
    """ Fine-tune a model on the patches of a plate where it agrees with FT. """
    from weave_lab import analyzer
    from weave_lab.regnet import load_weights, save_weights

    data = validated(forms.SSRefineForm, options)
    plate = load_plate(data['plate'], data['ppcm'])
    model = load_weights(data['weights'])

    config = analyzer.SSConfig(
        tolerance=data['tolerance'], cap=data['cap'], floor=data['floor'],
        train_fraction=data['train_fraction'], lr=data['lr'],
        patience=data['patience'], max_epochs=data['max_epochs'],
        freeze_last_dense=data['freeze_last_dense'], batch_size=data['batch_size'],
        block_rows=data['block_rows'], label=data['ss_label'], seed=data['seed'])
    model, report = analyzer.ss_refine(plate, model, data['overlap'], config,
                                       strict=True)

    save_weights(model, data['out'])
    write_json(report.to_dict(), data['report'])


@cli.command()
@click.argument('map_a')
@click.argument('map_b')
@click.option('--orientation', type=click.Choice(['vertical', 'horizontal']),
              default='horizontal', show_default=True)
@click.option('--transform', type=click.Choice(['none', 'flip_h', 'flip_v']),
              default='none', show_default=True, help='Applied to MAP_B.')
@click.option('--out', help='Composite PNG of the aligned maps.')
@click.option('--report', help='Report JSON; standard output by default.')
@click.option('--range', default='4,30', show_default=True)
def match(**options):
    """ Align two density maps by profile correlation. """
    from weave_lab import analyzer

    data = validated(forms.MatchForm, options)
    a = analyzer.read_map_csv(data['map_a'], data['orientation'])
    b = analyzer.read_map_csv(data['map_b'], data['orientation'])

    report = analyzer.match_maps(a, b, data['transform'])
    if data['out']:
        lo, hi = data['range']
        analyzer.write_map_png(report.composite, data['out'], lo, hi)
    write_json(report.to_dict(), data['report'])


@cli.command('grad-check')
@click.option('--seeds', type=int, default=20, show_default=True)
@click.option('--eps', type=float, default=1e-5, show_default=True)
@click.option('--tolerance', type=float, default=1e-4, show_default=True)
def grad_check(**options):
    """ Finite-difference check of every layer type. """
    from weave_lab.regnet.gradcheck import check_suite

    data = validated(forms.GradCheckForm, options)
    worst = check_suite(data['seeds'], data['eps'])
    for name in sorted(worst):
        click.echo('%-18s %.3g' % (name, worst[name]))

    failed = sorted(name for name, error in worst.items() if error > data['tolerance'])
    if failed:
        raise ModelError('Gradient check above %g for %s'
                         % (data['tolerance'], ', '.join(failed)))


def dispatch(argv=None):
    """
        Run the command line and return its exit code: 0 on success, 1 on
        rejected input and domain errors, 2 on usage and config errors.
    """
    try:
        rv = cli.main(args=argv, prog_name='weave-lab', standalone_mode=False)
    except click.UsageError as ex:
        ex.show()
        return 2
    except click.ClickException as ex:
        ex.show()
        return 1
    except click.Abort:
        click.echo('Aborted!', err=True)
        return 1
    except ConfigError as ex:
        click.echo('%s: %s' % (ex.__class__.__name__, ex), err=True)
        return 2
    except WeaveLabError as ex:
        click.echo('%s: %s' % (ex.__class__.__name__, ex), err=True)
        return 1

    return rv if isinstance(rv, int) else 0


def main():
    sys.exit(dispatch())
