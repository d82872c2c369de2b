from .hyper import HyperParams
from .model import EncoderState, Network
from .train import Optimizer, Trainer, TrainConfig, loss, perplexity, train_epoch

__all__ = ["EncoderState", "HyperParams", "Network", "Optimizer", "TrainConfig", "Trainer",
           "loss", "perplexity", "train_epoch"]
