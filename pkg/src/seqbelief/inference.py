"""Variational inference networks producing per-call posterior statuses.

Each call's exchanges are encoded as [answer; question] tokens, pooled with
attention, and mapped to a posterior mean; later calls additionally condition
on the previous posterior mean. The posterior covariance is a fixed
isotropic tau^2 I.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Array, GraphError, MlpSpec, Node
from .data import Call


@dataclass
class InfParams:
    d_s: int
    d_emb: int
    d_tok: int
    tau: float
    enc_spec: MlpSpec  # [a; q] -> token
    first_spec: MlpSpec  # pooled -> mean (first call)
    next_spec: MlpSpec  # [pooled; prev_mean] -> mean (later calls)
    params: dict[str, Array] = field(default_factory=dict)

    def copy(self) -> "InfParams":
        out = InfParams(
            self.d_s, self.d_emb, self.d_tok, self.tau,
            self.enc_spec, self.first_spec, self.next_spec,
        )
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out


@dataclass
class PosteriorStatus:
    mean: Array
    tau: float

    def __post_init__(self):
        if self.tau < 0 or not np.all(np.isfinite(self.mean)):
            raise GraphError("posterior requires finite mean and non-negative tau")


def init_inf_params(
    d_s: int,
    d_emb: int,
    hidden_dims: tuple[int, ...],
    rng: np.random.Generator,
    tau: float = 1.0,
    d_tok: int | None = None,
    gain: float = 1.0,
    dropout_rate: float = 0.0,
) -> InfParams:
    if d_s < 1 or d_emb < 1:
        raise GraphError("d_s and d_emb must be >= 1")
    if tau <= 0:
        raise GraphError("tau must be positive")
    d_tok = d_tok or d_s
    ip = InfParams(
        d_s=d_s,
        d_emb=d_emb,
        d_tok=d_tok,
        tau=tau,
        enc_spec=MlpSpec(2 * d_emb, hidden_dims, d_tok, "none", dropout_rate),
        first_spec=MlpSpec(d_tok, hidden_dims, d_s, "none", dropout_rate),
        next_spec=MlpSpec(d_tok + d_s, hidden_dims, d_s, "none", dropout_rate),
    )
    params: dict[str, Array] = {}
    for k, v in ad.init_mlp(ip.enc_spec, rng, gain).items():
        params[f"enc.{k}"] = v
    for k, v in ad.init_attention(d_tok, d_tok, d_tok, rng, gain).items():
        params[f"pool.{k}"] = v
    for k, v in ad.init_mlp(ip.first_spec, rng, gain).items():
        params[f"first.{k}"] = v
    for k, v in ad.init_mlp(ip.next_spec, rng, gain).items():
        params[f"next.{k}"] = v
    ip.params = params
    return ip


def call_pair_matrix(call: Call) -> Array:
    """Rows of [a_emb; q_emb] for every exchange in the call."""
    rows = []
    for ex in call.exchanges:
        if ex.q_emb is None or ex.a_emb is None:
            raise GraphError(f"call {call.call_id}: exchanges must be embedded first")
        rows.append(np.concatenate([ex.a_emb, ex.q_emb]))
    return np.stack(rows)


def infer_status_graph(
    pairs, prev_mean, ip: InfParams, p: Mapping | None = None,
    training: bool = False, rng: np.random.Generator | None = None,
) -> tuple[Node, Node]:
    """Posterior mean node plus attention weights over exchanges.

    `pairs` is the (K, 2*d_emb) matrix of [a; q] rows for one call;
    `prev_mean` is the previous call's posterior mean node, or None.
    """
    p = ip.params if p is None else p
    pairs = ad.as_node(pairs)
    if pairs.value.ndim != 2 or pairs.value.shape[0] < 1:
        raise GraphError("need at least one embedded exchange")
    tokens = ad.mlp_forward(ip.enc_spec, ad.subparams(p, "enc"), pairs, training, rng)
    context, weights = ad.attention_pool(ad.subparams(p, "pool"), tokens)
    if prev_mean is None:
        mean = ad.mlp_forward(ip.first_spec, ad.subparams(p, "first"), context, training, rng)
    else:
        x = ad.concat([context, ad.as_node(prev_mean)])
        mean = ad.mlp_forward(ip.next_spec, ad.subparams(p, "next"), x, training, rng)
    return mean, weights


def infer_status(
    call: Call, prev_mean: Array | None, ip: InfParams
) -> PosteriorStatus:
    mean, _ = infer_status_graph(call_pair_matrix(call), prev_mean, ip)
    return PosteriorStatus(mean=mean.value, tau=ip.tau)


def reparam_sample(post, tau: float, noise) -> Node:
    """mean + tau * noise; differentiable with respect to the mean."""
    return ad.add(ad.as_node(post), ad.mul(ad.as_node(noise), tau))
