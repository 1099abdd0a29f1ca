"""Training objective: reconstruction likelihoods, label likelihood,
closed-form Gaussian KL, the time-decayed belief constraint, and the
evidence lower bound assembled from them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import GraphError, Node
from .data import CompanyRecord
from .genmodel import GenParams, gen_answer_mean, gen_question_mean, gen_success_rate
from .inference import InfParams, call_pair_matrix, infer_status_graph

RATE_CLAMP = 1e-7
LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class LossBreakdown:
    recon_q: float
    recon_a: float
    label_ll: float
    kl_total: float
    constraint: float
    elbo: float
    weighted_total: float


def gaussian_loglik(x, mu, sigma: float) -> float:
    """log N(x; mu, sigma^2 I) for a vector (or summed over matrix rows)."""
    x = np.asarray(x, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if sigma <= 0:
        raise GraphError("sigma must be positive")
    if x.shape != mu.shape:
        raise GraphError(f"shape mismatch {x.shape} vs {mu.shape}")
    d = x.size
    return -0.5 * d * (LOG_2PI + 2.0 * math.log(sigma)) - float(((x - mu) ** 2).sum()) / (
        2.0 * sigma**2
    )


def _gauss_ll_node(x: np.ndarray, mu: Node, sigma: float) -> Node:
    d = x.size
    const = -0.5 * d * (LOG_2PI + 2.0 * math.log(sigma))
    sq = ad.ssum(ad.square(ad.sub(ad.as_node(x), mu)))
    return ad.add(ad.mul(sq, -1.0 / (2.0 * sigma**2)), np.float64(const))


def bernoulli_ll(r: float, y: int) -> float:
    r = min(max(r, RATE_CLAMP), 1.0 - RATE_CLAMP)
    return math.log(r) if y else math.log(1.0 - r)


def _bernoulli_ll_node(r: Node, y: int) -> Node:
    rc = ad.clip(r, RATE_CLAMP, 1.0 - RATE_CLAMP)
    return ad.log(rc) if y else ad.log(ad.sub(np.float64(1.0), rc))


def kl_gaussian(mu_q, tau: float, prior_mean) -> float:
    """KL( N(mu_q, tau^2 I) || N(prior_mean, I) ) in closed form."""
    mu_q = np.asarray(mu_q, dtype=np.float64)
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    d = mu_q.size
    delta = mu_q - prior_mean
    return 0.5 * (d * tau**2 + float(delta @ delta) - d - d * math.log(tau**2))


def _kl_node(mu_q: Node, tau: float, prior_mean) -> Node:
    d = mu_q.value.size
    const = 0.5 * (d * tau**2 - d - d * math.log(tau**2))
    sq = ad.ssum(ad.square(ad.sub(mu_q, ad.as_node(prior_mean))))
    return ad.add(ad.mul(sq, 0.5), np.float64(const))


def constraint_term(
    rates: Sequence[float], y: int, gaps_days: Sequence[float], lambda_days: float
) -> float:
    """Sum over calls of exp(-t/lambda) * cross-entropy(rate, y)."""
    if lambda_days <= 0:
        raise GraphError("lambda_days must be positive")
    if len(rates) != len(gaps_days):
        raise GraphError("rates and gaps must align")
    total = 0.0
    for r, t in zip(rates, gaps_days):
        if t < 0:
            raise GraphError("time gaps must be non-negative")
        total += math.exp(-t / lambda_days) * (-bernoulli_ll(r, y))
    return total


def _nsum(nodes: list[Node]) -> Node:
    return reduce(ad.add, nodes)


def call_gaps_days(company: CompanyRecord) -> list[float]:
    return [float((company.outcome_date - c.call_date).days) for c in company.calls]


def elbo_graph(
    company: CompanyRecord,
    gp: GenParams,
    ip: InfParams,
    gnodes: Mapping | None = None,
    inodes: Mapping | None = None,
    *,
    noise: np.ndarray,
    w: float = 0.0,
    lambda_days: float = 365.0,
    paper_literal_ranges: bool = False,
    cross_exchange: bool = True,
    pair_matrices: Sequence[np.ndarray] | None = None,
    e_std: np.ndarray | None = None,
    training: bool = False,
    dropout_rng: np.random.Generator | None = None,
) -> dict[str, Node]:
    """Build the per-company objective graph.

    `noise` has shape (M, L, d_s); the bound is averaged over the M
    reparameterized samples. Posterior means are chained (mean into the
    next call's inference network); samples feed the likelihood and the
    KL prior mean.
    """
    calls = company.calls
    L = len(calls)
    if noise.shape != (noise.shape[0], L, ip.d_s):
        raise GraphError(f"noise must have shape (M, {L}, {ip.d_s})")
    M = noise.shape[0]
    e = company.e_std if e_std is None else e_std
    if e is None:
        raise GraphError(f"company {company.company_id}: features not standardized")
    gaps = call_gaps_days(company)
    mats = (
        [call_pair_matrix(c) for c in calls] if pair_matrices is None else list(pair_matrices)
    )

    # posterior mean chain (deterministic, shared across samples)
    means: list[Node] = []
    prev: Node | None = None
    for l in range(L):
        m = mats[l]
        if paper_literal_ranges and m.shape[0] > 1:
            m = m[:-1]
        mean, _ = infer_status_graph(m, prev, ip, inodes, training, dropout_rng)
        means.append(mean)
        prev = mean

    y = company.label
    tau = ip.tau
    sigma = gp.sigma_obs
    recon_q_parts: list[Node] = []
    recon_a_parts: list[Node] = []
    label_parts: list[Node] = []
    kl_parts: list[Node] = []
    constraint_parts: list[Node] = []

    for m_i in range(M):
        samples = [
            ad.add(means[l], np.asarray(tau * noise[m_i, l], dtype=np.float64))
            for l in range(L)
        ]
        for l in range(L):
            s = samples[l]
            Q = np.stack([ex.q_emb for ex in calls[l].exchanges])
            A = np.stack([ex.a_emb for ex in calls[l].exchanges])
            K = Q.shape[0]
            hi = K - 1 if paper_literal_ranges else K  # last k included in the inner sum
            if cross_exchange:
                recon_q_parts.append(
                    _gauss_ll_node(
                        Q[0],
                        gen_question_mean(s, None, None, gp, gnodes, training, dropout_rng),
                        sigma,
                    )
                )
                if not paper_literal_ranges:
                    recon_a_parts.append(
                        _gauss_ll_node(
                            A[0],
                            gen_answer_mean(s, None, None, Q[0], gp, gnodes, training, dropout_rng),
                            sigma,
                        )
                    )
                if hi >= 2:
                    n = hi - 1
                    srep = ad.tile_rows(s, n)
                    xq = ad.concat([srep, Q[: hi - 1], A[: hi - 1]], axis=1)
                    q_mu = ad.mlp_forward(
                        gp.nn4_spec, ad.subparams(gnodes or gp.params, "nn4"), xq,
                        training, dropout_rng,
                    )
                    recon_q_parts.append(_gauss_ll_node(Q[1:hi], q_mu, sigma))
                    xa = ad.concat([srep, Q[: hi - 1], A[: hi - 1], Q[1:hi]], axis=1)
                    a_mu = ad.mlp_forward(
                        gp.nn5_spec, ad.subparams(gnodes or gp.params, "nn5"), xa,
                        training, dropout_rng,
                    )
                    recon_a_parts.append(_gauss_ll_node(A[1:hi], a_mu, sigma))
            else:
                # ablation: treat every exchange as a first exchange
                hi_k = max(hi, 1)
                srep = ad.tile_rows(s, hi_k)
                q_mu1 = gen_question_mean(s, None, None, gp, gnodes, training, dropout_rng)
                recon_q_parts.append(_gauss_ll_node(Q[:hi_k], ad.tile_rows(q_mu1, hi_k), sigma))
                xa = ad.concat([srep, Q[:hi_k]], axis=1)
                a_mu = ad.mlp_forward(
                    gp.nn3_spec, ad.subparams(gnodes or gp.params, "nn3"), xa,
                    training, dropout_rng,
                )
                recon_a_parts.append(_gauss_ll_node(A[:hi_k], a_mu, sigma))

            prior_mean = samples[l - 1] if l >= 1 else np.zeros(ip.d_s)
            kl_parts.append(_kl_node(means[l], tau, prior_mean))

            r_l, _ = gen_success_rate(
                ad.stack_rows(samples[: l + 1]), e, gp, gnodes, training, dropout_rng
            )
            weight = math.exp(-gaps[l] / lambda_days)
            constraint_parts.append(ad.mul(_bernoulli_ll_node(r_l, y), -weight))
            if l == L - 1:
                label_parts.append(_bernoulli_ll_node(r_l, y))

    inv_m = 1.0 / M
    recon_q = ad.mul(_nsum(recon_q_parts), inv_m)
    recon_a = ad.mul(_nsum(recon_a_parts), inv_m)
    label_ll = ad.mul(_nsum(label_parts), inv_m)
    kl_total = ad.mul(_nsum(kl_parts), inv_m)
    constraint = ad.mul(_nsum(constraint_parts), inv_m)
    elbo_node = ad.sub(ad.add(ad.add(recon_q, recon_a), label_ll), kl_total)
    weighted_total = ad.add(ad.mul(elbo_node, -1.0), ad.mul(constraint, w))
    return {
        "recon_q": recon_q,
        "recon_a": recon_a,
        "label_ll": label_ll,
        "kl_total": kl_total,
        "constraint": constraint,
        "elbo": elbo_node,
        "weighted_total": weighted_total,
    }


def elbo(
    company: CompanyRecord,
    gp: GenParams,
    ip: InfParams,
    noise_seed: int = 0,
    *,
    mc_samples: int = 1,
    w: float = 0.0,
    lambda_days: float = 365.0,
    paper_literal_ranges: bool = False,
    cross_exchange: bool = True,
) -> LossBreakdown:
    rng = np.random.default_rng(noise_seed)
    noise = rng.normal(size=(mc_samples, len(company.calls), ip.d_s))
    nodes = elbo_graph(
        company,
        gp,
        ip,
        noise=noise,
        w=w,
        lambda_days=lambda_days,
        paper_literal_ranges=paper_literal_ranges,
        cross_exchange=cross_exchange,
    )
    return LossBreakdown(**{k: float(v.value) for k, v in nodes.items()})
