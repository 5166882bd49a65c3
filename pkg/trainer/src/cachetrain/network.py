"""Unrolled multi-stage reconstruction network with message passing.

A forward pass runs a fixed number of stages. Within a stage every
cache advances its multipliers, pools decoded neighbor messages,
reconstructs its coefficient vector, shrinks it into the auxiliary
estimate, and embeds its field estimate into an anchor-sized message.
Messages cross directed edges synchronously at the stage boundary, so
each stage only ever reads the previous stage's messages, mirroring a
synchronous distributed iteration.
"""

import numpy as np
import torch
from torch import nn

from .layers import (
    StageParameters,
    build_decoder,
    build_encoder,
    pool_messages,
    reconstruct,
    shrink_estimate,
    solver_stage_weights,
    update_multipliers,
)

STATE_KEYS = ("z", "zt", "lam", "xi", "mu", "msg_out", "msg_in")


class UnrolledSolver(nn.Module):
    """K-stage unrolled consensus reconstruction over a cache network."""

    def __init__(
        self,
        n_caches,
        edges,
        wm,
        qw,
        nw,
        n_stages,
        variant="li",
        sigma="leaky",
        dtype=torch.float64,
        generator=None,
    ):
        super().__init__()
        if n_stages < 0:
            raise ValueError("stage count must be non-negative")
        self.arch = {
            "n_caches": n_caches,
            "edges": [list(e) for e in edges],
            "wm": wm,
            "qw": qw,
            "nw": nw,
            "n_stages": n_stages,
            "variant": variant,
            "sigma": sigma,
        }
        self.edges = [tuple(e) for e in edges]
        self.sigma = sigma
        self.n_caches = n_caches
        reverse = {e: self.edges.index((e[1], e[0])) for e in self.edges}
        self._reverse = [reverse[e] for e in self.edges]
        self._sources = [c for c, _ in self.edges]
        self.stages = nn.ModuleList(
            StageParameters(n_caches, len(edges), wm, qw, nw, dtype, generator)
            for _ in range(n_stages)
        )
        self.encoder = build_encoder(variant, nw, qw, dtype)
        self.decoder = build_decoder(variant, nw, qw, dtype)

    def initial_state(self, batch):
        b, c, e = len(batch), self.n_caches, len(self.edges)
        wm, qw, nw = self.arch["wm"], self.arch["qw"], self.arch["nw"]
        zeros = lambda *shape: batch.y.new_zeros(shape)
        return {
            "z": zeros(b, c, nw),
            "zt": zeros(b, c, nw),
            "lam": zeros(b, c, wm),
            "xi": zeros(b, c, nw),
            "mu": zeros(b, e, qw),
            "msg_out": zeros(b, e, qw),
            "msg_in": zeros(b, e, qw),
        }

    def forward(self, batch, psi, n_stages=None, return_state=False):
        """Per-stage field estimates, optionally with the full state trace.

        psi is the (NW, NW) synthesis operator; estimates are x = psi z
        after every stage. With zero stages the initialized (zero)
        estimate is returned so downstream metrics stay well defined.
        """
        k = len(self.stages) if n_stages is None else min(n_stages, len(self.stages))
        state = self.initial_state(batch)
        estimates, states = [], []
        for stage in self.stages[:k]:
            lam, mu, xi = update_multipliers(stage, state, batch, self.edges)
            pooled = pool_messages(
                stage, self.decoder, mu, state["msg_out"], state["msg_in"],
                self.edges, self.n_caches,
            )
            z = reconstruct(stage, batch.y, lam, state["zt"], xi, pooled)
            zt = shrink_estimate(stage, xi, z, self.sigma)
            fields = z @ psi.T
            codes = self.encoder(fields)
            msg_out = codes[:, self._sources]
            msg_in = msg_out[:, self._reverse]
            state = {
                "z": z, "zt": zt, "lam": lam, "xi": xi,
                "mu": mu, "msg_out": msg_out, "msg_in": msg_in,
            }
            estimates.append(fields)
            if return_state:
                states.append(state)
        if not estimates:
            estimates = [batch.y.new_zeros((len(batch), self.n_caches, psi.shape[0]))]
        return (estimates, states) if return_state else estimates


def solver_initialized(geometry, rho, n_stages, split="train", row=0):
    """Network whose forward pass replays the consensus solver exactly.

    Reconstruction weights embed the geometry of one reference instance
    (split/row), and the linear message coder is that deployment's
    anchor selection. Raises when distinct edges carry distinct anchor
    sets, because a single shared coder cannot reproduce them.
    """
    ds = geometry.dataset
    batch = geometry.batch(split, [row])
    wm, qw = batch.y.shape[2], batch.gamma.shape[2]
    net = UnrolledSolver(
        ds.n_caches, geometry.edges, wm, qw, ds.dimension, n_stages,
        variant="li", sigma="soft",
    )
    b_rows = batch.b[0].numpy()
    gamma_rows = batch.gamma[0].numpy()
    psi = geometry.psi.numpy()
    for stage in net.stages:
        solver_stage_weights(stage, b_rows, gamma_rows, geometry.edges, psi, rho)
    deployment = int(ds.splits[split].deployment[row])
    selections = [
        geometry.anchor_selection(deployment, e) for e in range(len(geometry.edges))
    ]
    for sel in selections[1:]:
        if not np.array_equal(sel, selections[0]):
            raise ValueError(
                "distinct per-edge anchor sets cannot share one message coder"
            )
    with torch.no_grad():
        net.encoder.weight.copy_(torch.as_tensor(selections[0], dtype=torch.float64))
        net.encoder.bias.zero_()
        net.decoder.weight.copy_(torch.as_tensor(selections[0].T, dtype=torch.float64))
        net.decoder.bias.zero_()
    return net


def save_network(net, path, extra=None):
    payload = {"arch": net.arch, "state_dict": net.state_dict()}
    if extra:
        payload["extra"] = extra
    torch.save(payload, path)


def load_network(path):
    payload = torch.load(path, weights_only=False)
    arch = payload["arch"]
    net = UnrolledSolver(
        arch["n_caches"], [tuple(e) for e in arch["edges"]], arch["wm"],
        arch["qw"], arch["nw"], arch["n_stages"],
        variant=arch["variant"], sigma=arch["sigma"],
    )
    net.load_state_dict(payload["state_dict"])
    return net, payload.get("extra", {})
