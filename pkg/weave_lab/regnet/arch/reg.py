from weave_lab.regnet.arch import register
from weave_lab.regnet.arch.base import BaseArchitecture


@register
class Reg(BaseArchitecture):
    """ Six stages of two inception blocks, five dense layers. """
    name = 'reg'

    defaults = dict(filters_per_kernel=4,
                    stage_blocks=(2, 2, 2, 2, 2, 2),
                    stage_widths=(1, 2, 4, 8, 16, 16),
                    dense_sizes=(100, 100, 80, 100, 1),
                    dropout=0.1)
