from chorus.nn.tensor import Tensor
from chorus.nn.layers import (
    Layer, Conv2d, Linear, ReLU, Sigmoid, MaxPool2d, Upsample, Flatten, L2Normalize, Sequential,
    forward, backward,
)
from chorus.nn.losses import smooth_l1, bbox_loss, bce_loss, contrastive_loss
from chorus.nn.optim import SgdConfig, Sgd, sgd_step
from chorus.nn.gradcheck import grad_check, check_gradients, GradCheckReport
