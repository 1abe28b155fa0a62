from weave_lab.regnet.layers import (Scale, InceptionBlock, MaxPool2, Dropout,
                                     Flatten, Dense, ReLU)


class BaseArchitecture(object):
    """
        Layer stack shared by all architectures:

        raw intensities / 255 -> stages of blocks, each stage followed by
        2x2 max pooling and dropout -> flatten -> dense layers with ReLU,
        linear single-neuron output.

        Subclasses set `name`, `defaults` and `block`.
    """
    name = None
    block = InceptionBlock
    channels_per_filter = len(InceptionBlock.kernels)

    defaults = dict(filters_per_kernel=4,
                    stage_blocks=(2,),
                    stage_widths=(1,),
                    dense_sizes=(1,),
                    dropout=0.0)

    @classmethod
    def build(cls, config, rng, dtype, eps=1e-5, momentum=0.9):
        layers = [Scale(1.0 / 255.0)]

        channels = 1
        for blocks, width in zip(config.stage_blocks, config.stage_widths):
            filters = config.filters_per_kernel * width
            for _ in range(blocks):
                block = cls.block(channels, filters, rng, dtype, eps, momentum)
                layers.append(block)
                channels = block.out_channels
            layers.append(MaxPool2())
            layers.append(Dropout(config.dropout))

        layers.append(Flatten())

        features = config.flatten_size
        for size in config.dense_sizes[:-1]:
            layers.append(Dense(features, size, rng, dtype))
            layers.append(ReLU())
            features = size
        layers.append(Dense(features, config.dense_sizes[-1], rng, dtype))

        return layers
