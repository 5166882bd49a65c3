"""Stage parameter containers and the four per-stage layer operations.

Each unrolled stage applies, in order: multiplier updates (measurement,
alignment, splitting), neighbor-message pooling, coefficient
reconstruction, a shrinkage-style estimate, and message embedding. All
maps are affine in their concatenated inputs; weight matrices are held
per cache (and per directed edge for alignment multipliers) inside one
StageParameters module per stage. A special weight assignment makes the
whole stage reproduce one iteration of a consensus solver exactly, which
is both the recommended initialization and the strongest test oracle.
"""

import numpy as np
import torch
from torch import nn

LEAKY_SLOPE = 0.01


def soft_threshold(values, kappa):
    """Proximal shrinkage: sign(v) * max(|v| - kappa, 0)."""
    return torch.sign(values) * torch.clamp(values.abs() - kappa, min=0.0)


def affine(weight, bias, *parts):
    """weight @ concat(parts) + bias, batched over leading dimensions."""
    stacked = torch.cat(parts, dim=-1)
    return stacked @ weight.transpose(-2, -1) + bias


def _linear_params(out_dim, in_dim, dtype, generator=None):
    weight = torch.empty(out_dim, in_dim, dtype=dtype)
    bound = 1.0 / np.sqrt(in_dim)
    if generator is None:
        weight.uniform_(-bound, bound)
    else:
        weight.uniform_(-bound, bound, generator=generator)
    return nn.Parameter(weight), nn.Parameter(torch.zeros(out_dim, dtype=dtype))


class StageParameters(nn.Module):
    """Weights and biases for one unrolled stage.

    Multiplier, reconstruction, and shrinkage weights are per cache;
    alignment-multiplier weights are per directed edge; the pooling map
    is shared by every cache within the stage. The shrinkage threshold
    is a learnable scalar used only by the soft activation.
    """

    def __init__(self, n_caches, n_edges, wm, qw, nw, dtype=torch.float64, generator=None):
        super().__init__()
        self.dims = (wm, qw, nw)
        make = lambda out_dim, in_dim: _linear_params(out_dim, in_dim, dtype, generator)

        def bank(count, out_dim, in_dim):
            pairs = [make(out_dim, in_dim) for _ in range(count)]
            return (
                nn.ParameterList(p[0] for p in pairs),
                nn.ParameterList(p[1] for p in pairs),
            )

        self.w_lam, self.b_lam = bank(n_caches, wm, 3 * wm)
        self.w_mu, self.b_mu = bank(n_edges, qw, 3 * qw)
        self.w_xi, self.b_xi = bank(n_caches, nw, 3 * nw)
        self.w_z, self.b_z = bank(n_caches, nw, 2 * wm + 3 * nw)
        self.w_zt, self.b_zt = bank(n_caches, nw, 2 * nw)
        self.w_agg, self.b_agg = make(nw, 3 * nw)
        self.threshold = nn.Parameter(torch.tensor(0.1, dtype=dtype))


def update_multipliers(stage, state, batch, edges):
    """All three multiplier families advanced one stage.

    Inputs are the previous stage's multipliers plus the feeds each
    family observes: sampled predictions and measurements, outbound and
    inbound anchor messages, and the coefficient/estimate pair.
    """
    sampled = torch.einsum("bcmn,bcn->bcm", batch.b, state["z"])
    lam = torch.stack(
        [
            affine(stage.w_lam[c], stage.b_lam[c], state["lam"][:, c], sampled[:, c], batch.y[:, c])
            for c in range(batch.y.shape[1])
        ],
        dim=1,
    )
    mu = torch.stack(
        [
            affine(
                stage.w_mu[e],
                stage.b_mu[e],
                state["mu"][:, e],
                state["msg_out"][:, e],
                state["msg_in"][:, e],
            )
            for e in range(len(edges))
        ],
        dim=1,
    )
    xi = torch.stack(
        [
            affine(stage.w_xi[c], stage.b_xi[c], state["xi"][:, c], state["z"][:, c], state["zt"][:, c])
            for c in range(batch.y.shape[1])
        ],
        dim=1,
    )
    return lam, mu, xi


def pool_messages(stage, decoder, mu, msg_out, msg_in, edges, n_caches):
    """Per-cache sum over neighbor edges of the decoded message triple.

    Every directed edge (c, cp) contributes one pooled vector to cache
    c; caches without edges receive a zero vector.
    """
    batch = mu.shape[0]
    nw = stage.dims[2]
    pooled = mu.new_zeros((batch, n_caches, nw))
    for e, (c, _) in enumerate(edges):
        decoded = affine(
            stage.w_agg,
            stage.b_agg,
            decoder(msg_out[:, e]),
            decoder(msg_in[:, e]),
            decoder(mu[:, e]),
        )
        pooled[:, c] = pooled[:, c] + decoded
    return pooled


def reconstruct(stage, y, lam, zt_prev, xi, pooled):
    """New coefficient vectors from measurements, multipliers, and pooling."""
    return torch.stack(
        [
            affine(
                stage.w_z[c],
                stage.b_z[c],
                y[:, c],
                lam[:, c],
                zt_prev[:, c],
                xi[:, c],
                pooled[:, c],
            )
            for c in range(y.shape[1])
        ],
        dim=1,
    )


def shrink_estimate(stage, xi, z, sigma):
    """Auxiliary estimate through the stage activation."""
    pre = torch.stack(
        [
            affine(stage.w_zt[c], stage.b_zt[c], xi[:, c], z[:, c])
            for c in range(z.shape[1])
        ],
        dim=1,
    )
    if sigma == "soft":
        return soft_threshold(pre, stage.threshold)
    if sigma == "leaky":
        return torch.nn.functional.leaky_relu(pre, negative_slope=LEAKY_SLOPE)
    raise ValueError(f"unknown activation {sigma!r}")


def build_encoder(variant, nw, qw, dtype=torch.float64):
    """Message embedding network: field window in, anchor-sized code out."""
    if variant == "li":
        return nn.Linear(nw, qw, dtype=dtype)
    if variant == "ae":
        return nn.Sequential(
            nn.Linear(nw, 250, dtype=dtype),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(250, 150, dtype=dtype),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(150, qw, dtype=dtype),
        )
    raise ValueError(f"unknown variant {variant!r}")


def build_decoder(variant, nw, qw, dtype=torch.float64):
    """Mirror of the embedding network, code back to field space."""
    if variant == "li":
        return nn.Linear(qw, nw, dtype=dtype)
    if variant == "ae":
        return nn.Sequential(
            nn.Linear(qw, 150, dtype=dtype),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(150, 250, dtype=dtype),
            nn.LeakyReLU(LEAKY_SLOPE),
            nn.Linear(250, nw, dtype=dtype),
        )
    raise ValueError(f"unknown variant {variant!r}")


def _assign(param, value):
    with torch.no_grad():
        param.copy_(torch.as_tensor(value, dtype=param.dtype))


def solver_stage_weights(stage, b_rows, gamma_rows, edges, psi, rho):
    """Overwrite one stage with the exact consensus-iteration weights.

    b_rows is (C, WM, NW) and gamma_rows (E, QW, NW) for a reference
    instance, both mapping coefficients to sampled values; psi is the
    (NW, NW) synthesis operator. The reconstruction weights embed that
    instance's regularized normal matrix, so exactness holds on the
    instance the geometry came from. All biases are zero and the
    shrinkage threshold is 1 / rho.
    """
    wm, qw, nw = stage.dims
    eye_wm, eye_qw, eye_nw = np.eye(wm), np.eye(qw), np.eye(nw)
    ramp = np.hstack([eye_wm, rho * eye_wm, -rho * eye_wm])
    for c in range(len(stage.w_lam)):
        _assign(stage.w_lam[c], ramp)
        _assign(stage.b_lam[c], np.zeros(wm))
    half = np.hstack([eye_qw, 0.5 * rho * eye_qw, -0.5 * rho * eye_qw])
    for e in range(len(stage.w_mu)):
        _assign(stage.w_mu[e], half)
        _assign(stage.b_mu[e], np.zeros(qw))
    split = np.hstack([eye_nw, rho * eye_nw, -rho * eye_nw])
    for c in range(len(stage.w_xi)):
        _assign(stage.w_xi[c], split)
        _assign(stage.b_xi[c], np.zeros(nw))
    _assign(stage.w_agg, np.hstack([rho * eye_nw, rho * eye_nw, -2.0 * eye_nw]))
    _assign(stage.b_agg, np.zeros(nw))
    for c, b in enumerate(b_rows):
        gram = b.T @ b + eye_nw
        for (src, _), g in zip(edges, gamma_rows):
            if src == c:
                gram = gram + 2.0 * (g.T @ g)
        inverse = np.linalg.inv(gram)
        blocks = np.hstack([rho * b.T, -b.T, rho * eye_nw, -eye_nw, psi.T])
        _assign(stage.w_z[c], (inverse @ blocks) / rho)
        _assign(stage.b_z[c], np.zeros(nw))
        _assign(stage.w_zt[c], np.hstack([eye_nw / rho, eye_nw]))
        _assign(stage.b_zt[c], np.zeros(nw))
    _assign(stage.threshold, 1.0 / rho)
