from weave_lab.regnet.arch import register
from weave_lab.regnet.arch.base import BaseArchitecture


@register
class RegVGG(BaseArchitecture):
    """
        VGG-16 layout with inception blocks in place of convolutions: five
        pooling stages (200 -> 100 -> 50 -> 25 -> 12 -> 6) and two dense
        layers of 64 times the filter count.
    """
    name = 'reg_vgg'

    defaults = dict(filters_per_kernel=8,
                    stage_blocks=(2, 2, 3, 3, 3),
                    stage_widths=(1, 2, 4, 8, 8),
                    dense_sizes=(512, 512, 1),
                    dropout=0.09)
