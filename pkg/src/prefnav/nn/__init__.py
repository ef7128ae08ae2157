from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .layers import Conv2D, Dense, MaxPool, Param, ReLU, Softplus
from .network import Network, NetworkSpec, Tape, backward, forward, full_grads, stop_gradient
from .optim import AdamW, adamw_step

__all__ = [
    "AdamW", "Checkpoint", "Conv2D", "Dense", "MaxPool", "Network", "NetworkSpec",
    "Param", "ReLU", "Softplus", "Tape", "adamw_step", "backward", "forward",
    "full_grads", "load_checkpoint", "save_checkpoint", "stop_gradient",
]
