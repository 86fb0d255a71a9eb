"""Desk-scale training, evaluation, Grad-CAM and file formats."""
from .cam import CamResult, grad_cam, write_pgm
from .data import Dataset, gen_synthetic_multiscale, load_cifar100
from .train import EpochLog, EvalResult, TrainConfig, evaluate, lr_at, sgd_step, train
from .weights import load_weights, save_weights

__all__ = [
    "CamResult", "Dataset", "EpochLog", "EvalResult", "TrainConfig", "evaluate", "gen_synthetic_multiscale",
    "grad_cam", "load_cifar100", "load_weights", "lr_at", "save_weights", "sgd_step", "train", "write_pgm",
]
