from .augment import AugmentConfig, augment_pair
from .checkpoint import ModelCheckpoint
from .loss import generalized_dice_loss, one_hot
from .optim import Adam, adam_step
from .unet import UNet, UNetConfig, unet_forward

__all__ = ["AugmentConfig", "augment_pair", "ModelCheckpoint", "generalized_dice_loss",
           "one_hot", "Adam", "adam_step", "UNet", "UNetConfig", "unet_forward"]
from .trainer import SliceSet, TrainConfig, evaluate_loss, predict_probs, train_model

__all__ += ["SliceSet", "TrainConfig", "evaluate_loss", "predict_probs", "train_model"]
