from weave_lab.regnet.arch import register
from weave_lab.regnet.arch.reg import Reg
from weave_lab.regnet.layers import ResidualInception


@register
class RegRes(Reg):
    """ `Reg` with residual inception blocks. """
    name = 'reg_res'
    block = ResidualInception
