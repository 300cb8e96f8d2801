from .data import (SyntheticSample, gen_dataset, gen_depth_sample, gen_flow_sample,
                   load_dataset, save_dataset, split)
from .losses import abs_rel, epe, epe_loss, rmse, silog_loss
from .optim import AdamW
from .train import TrainReport, TrainingError, evaluate, train
