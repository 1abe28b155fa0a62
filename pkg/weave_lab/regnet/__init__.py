from .layers import (Layer, Scale, Conv2D, BatchNorm, ReLU, MaxPool2, Dropout,
                     Flatten, Dense, Sequential, InceptionBlock, ResidualInception,
                     inception_forward, residual_inception_forward)
from . import arch
from .model import (ArchConfig, RegModel, Adam, nmae, nmae_grad,
                    patches_to_batch)
from .train import (TrainConfig, History, train, train_restarts, evaluate,
                    write_evaluation_csv)
from .gradcheck import grad_check
from .weights import save_weights, load_weights, FORMAT_VERSION


def forward(model, batch):
    """ Predictions of `model` in its current mode. """
    return model.forward(batch)
