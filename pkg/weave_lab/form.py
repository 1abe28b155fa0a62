"""
    Option validation for the command line, one form per subcommand.
"""
from werkzeug.datastructures import MultiDict
from wtforms import Form, fields, validators
from wtforms.validators import ValidationError

from weave_lab.errors import InvalidOptions


def form_data(options):
    """
        `MultiDict` from click keyword arguments. None and False values are
        left out; sequences become repeated keys.
    """
    data = MultiDict()
    for key, value in options.items():
        if value is None or value is False:
            continue
        if value is True:
            data.add(key, 'y')
        elif isinstance(value, (list, tuple)):
            for item in value:
                data.add(key, str(item))
        else:
            data.add(key, str(value))
    return data


class BaseForm(Form):
    """
        Customized form class.
    """

    def __init__(self, formdata=None, obj=None, prefix='', **kwargs):
        if formdata is not None and not hasattr(formdata, 'getlist'):
            formdata = form_data(formdata)
        super(BaseForm, self).__init__(formdata, obj=obj, prefix=prefix, **kwargs)

    @property
    def error_text(self):
        messages = []
        for name in sorted(self.errors):
            for message in self.errors[name]:
                messages.append('%s: %s' % (name.replace('_', '-'), message))
        return '; '.join(messages)

    def validated(self):
        """ Field data as a dict, or `InvalidOptions`. """
        if not self.validate():
            raise InvalidOptions(self.error_text)
        return dict((field.name, field.data) for field in self)


class OddIntegerField(fields.IntegerField):
    """
        Integer field that only accepts odd values.
    """
    def pre_validate(self, form):
        if self.data is not None and self.data % 2 != 1:
            raise ValidationError('Must be an odd integer')


class RangeListField(fields.Field):
    """
        Comma separated numbers, e.g. ``0.7,0.15,0.15``.

        `coerce`
            Type of every item.
        `count`
            Required number of items, if any.
    """
    def __init__(self, label=None, validators=None, coerce=float, count=None, **kwargs):
        super(RangeListField, self).__init__(label, validators, **kwargs)
        self.coerce = coerce
        self.count = count

    def _value(self):
        if self.raw_data:
            return ','.join(self.raw_data)
        return self.data and ','.join(str(v) for v in self.data) or ''

    def process_formdata(self, valuelist):
        if valuelist:
            text = ','.join(valuelist)
            try:
                self.data = tuple(self.coerce(item) for item in text.split(',')
                                  if item.strip())
            except ValueError:
                self.data = None
                raise ValueError('Invalid list of numbers')

    def pre_validate(self, form):
        if self.data is not None and self.count is not None and \
                len(self.data) != self.count:
            raise ValidationError('Expected %d values' % self.count)


class RegionListField(fields.Field):
    """
        Repeated ``top,left,height,width,gain`` rectangles, in cm.
    """
    def process_formdata(self, valuelist):
        regions = []
        for value in valuelist:
            try:
                region = tuple(float(item) for item in value.split(','))
            except ValueError:
                raise ValueError('Invalid region %r' % value)
            if len(region) != 5:
                raise ValueError('Regions need five values, got %r' % value)
            regions.append(region)
        self.data = regions

    def pre_validate(self, form):
        for region in self.data or ():
            if not 0 <= region[4] <= 1:
                raise ValidationError('Region gain must lie in [0, 1]')
            if region[2] <= 0 or region[3] <= 0:
                raise ValidationError('Regions need a positive size')


def _required():
    return [validators.InputRequired()]


def _optional():
    return [validators.Optional()]


def _at_least(minimum):
    return [validators.InputRequired(), validators.NumberRange(min=minimum)]


def _between(minimum, maximum):
    return [validators.InputRequired(), validators.NumberRange(min=minimum, max=maximum)]


class OverlapMixin(object):
    def validate_overlap(self, field):
        if field.data is None or not 0 <= field.data < 1:
            raise ValidationError('Overlap must lie in [0, 1)')


class ColorRangeMixin(object):
    def validate_range(self, field):
        if field.data is not None and not field.data[0] < field.data[1]:
            raise ValidationError('Range needs lo < hi')


class SynthForm(BaseForm):
    warp = fields.FloatField(validators=_between(4, 30))
    weft = fields.FloatField(validators=_between(4, 30))
    sigma = fields.FloatField(validators=_at_least(0))
    width_frac = fields.FloatField(validators=_required())
    noise = fields.FloatField(validators=_at_least(0))
    rotation = fields.FloatField(validators=_between(-45, 45))
    drop = RegionListField()
    seed = fields.IntegerField(validators=_between(0, 2 ** 64 - 1))
    crossing_gain = fields.FloatField(validators=_at_least(1))
    width_cm = fields.FloatField(validators=_at_least(2))
    height_cm = fields.FloatField(validators=_at_least(2))
    out = fields.StringField(validators=_required())

    def validate_width_frac(self, field):
        if not 0.1 < field.data < 0.9:
            raise ValidationError('Thread width must lie in (0.1, 0.9)')


class PreprocessForm(BaseForm):
    source = fields.StringField(validators=_required())
    out = fields.StringField(validators=_required())
    k0 = OddIntegerField(validators=_at_least(3))
    fixed_k = OddIntegerField(validators=_optional() + [validators.NumberRange(min=3)])
    no_equalize = fields.BooleanField()
    ppcm = fields.FloatField(validators=_optional() + [validators.NumberRange(min=1e-9)])


class AnalyzeForm(OverlapMixin, ColorRangeMixin, BaseForm):
    plate = fields.StringField(validators=_required())
    estimator = fields.StringField(validators=[validators.AnyOf(('ft', 'model'))])
    weights = fields.StringField()
    overlap = fields.FloatField(validators=_required())
    out = fields.StringField(validators=_required())
    ppcm = fields.FloatField(validators=_optional() + [validators.NumberRange(min=1e-9)])
    range = RangeListField(count=2)
    preprocess = fields.BooleanField()
    batch_size = fields.IntegerField(validators=_at_least(1))

    def validate_weights(self, field):
        if self.estimator.data == 'model' and not field.data:
            raise ValidationError('The model estimator needs --weights')


class BuildCorpusForm(BaseForm):
    out = fields.StringField(validators=_required())
    canvases = fields.IntegerField(validators=_at_least(3))
    samples_per_canvas = fields.IntegerField(validators=_at_least(1))
    size_cm = fields.FloatField(validators=_at_least(3))
    seed = fields.IntegerField(validators=_at_least(0))
    split = RangeListField(count=3)
    two_x_angle = fields.BooleanField()
    no_central_crops = fields.BooleanField()
    no_equalize = fields.BooleanField()
    fixed_k = OddIntegerField(validators=_optional() + [validators.NumberRange(min=3)])
    max_noise = fields.FloatField(validators=_at_least(0))

    def validate_split(self, field):
        if field.data is None:
            raise ValidationError('Split fractions are required')
        if min(field.data) < 0 or abs(sum(field.data) - 1) > 1e-6:
            raise ValidationError('Split fractions must be non-negative and sum to 1')


class ArchForm(BaseForm):
    arch = fields.StringField(validators=_required())
    filters = fields.IntegerField(validators=_optional() + [validators.NumberRange(min=1)])
    stage_blocks = RangeListField(coerce=int)
    stage_widths = RangeListField(coerce=int)
    dense = RangeListField(coerce=int)
    dropout = fields.FloatField(validators=_optional() + [validators.NumberRange(0, 0.999)])
    input_side = fields.IntegerField(validators=_at_least(2))

    def validate_arch(self, field):
        from weave_lab.regnet import arch
        if field.data not in arch.names():
            raise ValidationError('Unknown architecture, expected one of %s'
                                  % ', '.join(arch.names()))

    def validate_dense(self, field):
        if field.data and field.data[-1] != 1:
            raise ValidationError('The last dense layer must have one neuron')


class TrainForm(ArchForm):
    corpus = fields.StringField(validators=_required())
    batch_size = fields.IntegerField(validators=_at_least(1))
    lr = fields.FloatField(validators=_at_least(0))
    beta1 = fields.FloatField(validators=_between(0, 0.999999))
    beta2 = fields.FloatField(validators=_between(0, 0.999999))
    adam_eps = fields.FloatField(validators=_at_least(1e-300))
    max_epochs = fields.IntegerField(validators=_at_least(1))
    patience = fields.IntegerField(validators=_at_least(1))
    seed = fields.IntegerField(validators=_at_least(0))
    freeze_last_dense = fields.IntegerField(validators=_at_least(0))
    restarts = fields.IntegerField(validators=_at_least(1))
    out = fields.StringField(validators=_required())
    history = fields.StringField()
    dump = fields.StringField()

    def validate_patience(self, field):
        if self.max_epochs.data is not None and field.data > self.max_epochs.data:
            raise ValidationError('Patience must not exceed max-epochs')


class EvaluateForm(BaseForm):
    corpus = fields.StringField(validators=_required())
    weights = fields.StringField(validators=_required())
    out = fields.StringField()
    batch_size = fields.IntegerField(validators=_at_least(1))


class SSRefineForm(OverlapMixin, BaseForm):
    plate = fields.StringField(validators=_required())
    weights = fields.StringField(validators=_required())
    out = fields.StringField(validators=_required())
    report = fields.StringField()
    overlap = fields.FloatField(validators=_required())
    ppcm = fields.FloatField(validators=_optional() + [validators.NumberRange(min=1e-9)])
    tolerance = fields.FloatField(validators=_between(1e-9, 1))
    cap = fields.IntegerField(validators=_at_least(2))
    floor = fields.IntegerField(validators=_at_least(2))
    train_fraction = fields.FloatField(validators=_between(0.01, 0.99))
    lr = fields.FloatField(validators=_at_least(0))
    patience = fields.IntegerField(validators=_at_least(1))
    max_epochs = fields.IntegerField(validators=_at_least(1))
    freeze_last_dense = fields.IntegerField(validators=_at_least(0))
    block_rows = fields.IntegerField(validators=_at_least(1))
    batch_size = fields.IntegerField(validators=_at_least(1))
    ss_label = fields.StringField(validators=[validators.AnyOf(('dl', 'ft'))])
    seed = fields.IntegerField(validators=_at_least(0))

    def validate_patience(self, field):
        if self.max_epochs.data is not None and field.data > self.max_epochs.data:
            raise ValidationError('Patience must not exceed max-epochs')


class MatchForm(ColorRangeMixin, BaseForm):
    map_a = fields.StringField(validators=_required())
    map_b = fields.StringField(validators=_required())
    orientation = fields.StringField(validators=[
        validators.AnyOf(('vertical', 'horizontal'))])
    transform = fields.StringField(validators=[
        validators.AnyOf(('none', 'flip_h', 'flip_v'))])
    out = fields.StringField()
    report = fields.StringField()
    range = RangeListField(count=2)


class GradCheckForm(BaseForm):
    seeds = fields.IntegerField(validators=_at_least(1))
    eps = fields.FloatField(validators=_between(1e-12, 1e-1))
    tolerance = fields.FloatField(validators=_at_least(0))
