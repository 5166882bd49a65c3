"""End-to-end training of the unrolled network on dataset exports.

The objective sums squared field error over every stage, cache, and
batch instance (averaged over the batch) plus an explicit l2 penalty on
all parameters, so the penalty is part of the reported loss rather than
an optimizer side effect. Batches are reshuffled every epoch; the
learning rate follows the per-variant schedule unless overridden.
"""

import json
import time
from dataclasses import asdict, dataclass

import numpy as np
import torch

from .data import GeometryBuilder, load_dataset
from .network import UnrolledSolver, solver_initialized

VARIANT_RATES = {"li": (1e-4, 1e-5), "ae": (5e-4, 5e-4)}


@dataclass
class TrainingConfig:
    stages: int = 10
    batch_size: int = 500
    epsilon: float = 1e-3
    epochs: int = 500
    variant: str = "li"
    init: str = "solver"  # or "random"
    sigma: str = None  # default: soft for solver init, leaky otherwise
    lr: float = None
    late_lr: float = None
    switch_epoch: int = 300
    trainable: str = "all"  # "threshold-only" freezes all but shrink scalars
    seed: int = 0

    def resolved_sigma(self):
        if self.sigma is not None:
            return self.sigma
        return "soft" if self.init == "solver" else "leaky"

    def rates(self):
        base, late = VARIANT_RATES[self.variant]
        return (
            base if self.lr is None else self.lr,
            late if self.late_lr is None else self.late_lr,
        )


def parameter_penalty(net):
    """Sum of squared entries over every parameter tensor."""
    total = None
    for p in net.parameters():
        term = p.pow(2).sum()
        total = term if total is None else total + term
    return total


def multi_stage_loss(estimates, truth, net, epsilon):
    """Batch-mean stage-summed squared error plus the l2 penalty.

    estimates holds one (B, C, NW) tensor per stage; truth is (B, NW)
    and every cache is scored against the full field.
    """
    err = None
    for est in estimates:
        term = (est - truth[:, None, :]).pow(2).sum(dim=(1, 2))
        err = term if err is None else err + term
    return err.mean() + epsilon * parameter_penalty(net)


def nmse(estimates, truth):
    """Cache-averaged squared error over signal energy, final stage only."""
    est = estimates[-1]
    energy = truth.pow(2).sum(dim=-1)
    keep = energy > 0
    if not bool(keep.any()):
        raise ValueError("every truth frame has zero energy")
    err = (est - truth[:, None, :]).pow(2).sum(dim=-1)
    ratios = err[keep] / energy[keep, None]
    return float(ratios.mean())


def _build_network(geometry, config):
    sigma = config.resolved_sigma()
    if config.init == "solver":
        rho = float(geometry.dataset.manifest["solver"]["rho0"])
        net = solver_initialized(geometry, rho, config.stages)
        net.sigma = sigma
        net.arch["sigma"] = sigma
        if config.variant != "li":
            raise ValueError("solver initialization only defines the linear coder")
        return net
    if config.init != "random":
        raise ValueError(f"unknown init {config.init!r}")
    ds = geometry.dataset
    wm = ds.splits["train"].y.shape[2]
    qw = ds.anchors.shape[2] * ds.window
    generator = torch.Generator().manual_seed(config.seed)
    return UnrolledSolver(
        ds.n_caches, geometry.edges, wm, qw, ds.dimension, config.stages,
        variant=config.variant, sigma=sigma, generator=generator,
    )


def _select_trainable(net, mode):
    if mode == "all":
        return [p for p in net.parameters()]
    if mode == "threshold-only":
        for p in net.parameters():
            p.requires_grad_(False)
        picked = [stage.threshold for stage in net.stages]
        for p in picked:
            p.requires_grad_(True)
        return picked
    raise ValueError(f"unknown trainable mode {mode!r}")


def _epoch_pass(net, geometry, batch, order, config, optimizer):
    losses = []
    for lo in range(0, len(order), config.batch_size):
        rows = order[lo : lo + config.batch_size]
        piece = batch.narrow(rows)
        estimates = net(piece, geometry.psi)
        loss = multi_stage_loss(estimates, piece.truth, net, config.epsilon)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    return float(np.mean(losses))


def train(dataset_dir, config):
    """Fit the network; returns (network, report dict).

    The report carries one row per epoch with train and validation
    loss. Non-finite loss aborts immediately with the offending epoch
    in the exception message.
    """
    dataset = load_dataset(dataset_dir)
    geometry = GeometryBuilder(dataset)
    torch.manual_seed(config.seed)
    net = _build_network(geometry, config)
    params = _select_trainable(net, config.trainable)
    base_lr, late_lr = config.rates()
    optimizer = torch.optim.Adam(params, lr=base_lr)
    train_batch = geometry.batch("train")
    val_batch = geometry.batch("val") if "val" in dataset.splits else None
    shuffler = np.random.default_rng(config.seed)
    rows = []
    started = time.perf_counter()
    for epoch in range(config.epochs):
        lr = late_lr if epoch >= config.switch_epoch else base_lr
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = shuffler.permutation(len(train_batch))
        train_loss = _epoch_pass(net, geometry, train_batch, order, config, optimizer)
        row = {"epoch": epoch, "train_loss": train_loss, "lr": lr}
        if val_batch is not None:
            with torch.no_grad():
                val_est = net(val_batch, geometry.psi)
                row["val_loss"] = float(
                    multi_stage_loss(val_est, val_batch.truth, net, config.epsilon)
                )
        rows.append(row)
        if not np.isfinite(train_loss):
            raise RuntimeError(
                f"training diverged: non-finite loss {train_loss} at epoch {epoch} "
                f"(lr={lr}, stages={config.stages}, variant={config.variant})"
            )
    report = {
        "config": asdict(config),
        "epochs": rows,
        "wall_time": time.perf_counter() - started,
    }
    return net, report


def evaluate(net, geometry, split, n_stages=None):
    """Final-stage normalized error on one split."""
    batch = geometry.batch(split)
    with torch.no_grad():
        estimates = net(batch, geometry.psi, n_stages=n_stages)
        return nmse(estimates, batch.truth)


def write_report(report, path):
    with open(path, "w") as handle:
        json.dump(report, handle, indent=2)
        handle.write("\n")
