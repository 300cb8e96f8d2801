"""Training and evaluation loops for the toy flow and depth tasks."""
import json
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .. import numerics as nx
from ..encoder import Encoder
from ..numerics import NonFiniteError, Tape, checkpoint
from . import losses
from .data import split
from .optim import AdamW

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainReport:
    task: str
    metric_name: str
    seed: int
    initial_metric: float
    final_metric: float
    trace: list = field(default_factory=list)  # (epoch, mean loss, held-out metric)
    steps: int = 0
    wall_time: float = 0.0

    def to_csv(self):
        lines = ["epoch,loss,metric"]
        for epoch, loss, metric in self.trace:
            lines.append(f"{epoch},{loss!r},{metric!r}")
        return "\n".join(lines) + "\n"

    def summary(self):
        return json.dumps({"task": self.task, "metric": self.metric_name, "seed": self.seed,
                           "initial_metric": self.initial_metric,
                           "final_metric": self.final_metric, "steps": self.steps,
                           "wall_time": round(self.wall_time, 3)}, sort_keys=True)

    def write(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())
            fh.write("# " + self.summary() + "\n")


def _stack(samples, attr):
    return np.stack([getattr(s, attr) for s in samples])


def predict(model, samples):
    """Batched prediction as a numpy array (flow in pixels, depth in metres)."""
    if model.cfg.head == "flow":
        out, _ = model((_stack(samples, "frame1"), _stack(samples, "frame2")))
        return out.data
    out, _ = model(_stack(samples, "frame1"))
    return np.exp(out.data[..., 0])


def evaluate(model, samples, batch_size=16):
    """Task metrics over ``samples``: EPE for flow; Abs Rel and RMSE for depth."""
    preds = []
    for i in range(0, len(samples), batch_size):
        preds.append(predict(model, samples[i:i + batch_size]))
    pred = np.concatenate(preds)
    if model.cfg.head == "flow":
        return {"epe": losses.epe(pred, _stack(samples, "flow"))}
    gt = _stack(samples, "depth")
    return {"abs_rel": losses.abs_rel(pred, gt), "rmse": losses.rmse(pred, gt)}


def batch_loss(model, batch):
    if model.cfg.head == "flow":
        out, _ = model((_stack(batch, "frame1"), _stack(batch, "frame2")))
        return losses.epe_loss(out, _stack(batch, "flow"))
    out, _ = model(_stack(batch, "frame1"))
    return losses.silog_loss(nx.reshape(out, out.shape[:-1]), _stack(batch, "depth"))


def round_to_checkpoint(model):
    """Round parameters to what the fp32 checkpoint will store."""
    model.load_state({k: checkpoint.fp32_round(v.data) for k, v in model.named_parameters().items()})


def train(encoder_cfg, dataset, epochs=100, lr=5e-3, seed=0, batch_size=8, max_steps=None,
          weight_decay=1e-4):
    """Train a fresh encoder on the first 80% of ``dataset``.

    AdamW at a constant learning rate; weight decay applies to weight
    matrices only.

    Returns ``(model, report)``. The report's metric is measured on the
    held-out 20% before training (``initial_metric``), after every epoch and
    once more after rounding the weights to checkpoint precision
    (``final_metric``).
    """
    if not dataset:
        raise ValueError("empty dataset")
    t0 = time.perf_counter()
    train_set, held_out = split(dataset)
    if not held_out:
        held_out = train_set
    cfg = replace(encoder_cfg, seed=seed)
    model = Encoder(cfg)
    metric_name = "epe" if cfg.head == "flow" else "abs_rel"
    opt = AdamW(model, lr=lr, weight_decay=weight_decay)
    rng = np.random.default_rng(seed)
    initial = evaluate(model, held_out)[metric_name]
    report = TrainReport(task=cfg.head, metric_name=metric_name, seed=seed,
                         initial_metric=initial, final_metric=initial)
    report.trace.append((0, float("nan"), initial))
    steps = 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_set))
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            if max_steps is not None and steps >= max_steps:
                break
            batch = [train_set[i] for i in order[start:start + batch_size]]
            names = list(model.named_parameters())
            params = list(model.named_parameters().values())
            try:
                with Tape() as tape:
                    loss = batch_loss(model, batch)
                grads = tape.gradient(loss, params)
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch}, step {steps}: {exc}") from exc
            opt.step(dict(zip(names, grads)))
            epoch_losses.append(loss.item())
            steps += 1
        if not epoch_losses:
            break
        metric = evaluate(model, held_out)[metric_name]
        report.trace.append((epoch, float(np.mean(epoch_losses)), metric))
        log.info("epoch %d loss %.5f %s %.5f", epoch, np.mean(epoch_losses), metric_name, metric)
        if max_steps is not None and steps >= max_steps:
            break
    round_to_checkpoint(model)
    report.final_metric = evaluate(model, held_out)[metric_name]
    report.steps = steps
    report.wall_time = time.perf_counter() - t0
    return model, report
