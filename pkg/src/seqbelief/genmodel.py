"""Generative networks over latent company statuses and conversation vectors.

The latent status chain is a Gaussian random walk; a success-rate head pools
the status history with attention and combines it with external features;
question/answer vectors are Gaussian draws around MLP means conditioned on
the status and the neighboring exchange. Sampling from this process doubles
as the synthetic oracle used throughout the test suite.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Array, GraphError, MlpSpec, Node
from .data import Call, CompanyRecord, Exchange, FeatureVector, serialize_dataset

HQ_CHOICES = ("APAC", "EU", "LATAM", "Other", "US")
TM_CHOICES = ("09", "35", "36", "41", "42", "45")
SYNTH_D_E = 31 + len(HQ_CHOICES) + len(TM_CHOICES)


@dataclass
class GenParams:
    """All generative tensors plus the architecture they belong to."""

    d_s: int
    d_e: int
    d_emb: int
    sigma_obs: float
    nn1_spec: MlpSpec  # [pooled status; e] -> success rate
    nn2_spec: MlpSpec  # s -> first-question mean
    nn3_spec: MlpSpec  # [s; q] -> first-answer mean
    nn4_spec: MlpSpec  # [s; q_prev; a_prev] -> question mean
    nn5_spec: MlpSpec  # [s; q_prev; a_prev; q_cur] -> answer mean
    params: dict[str, Array] = field(default_factory=dict)

    def copy(self) -> "GenParams":
        out = GenParams(
            self.d_s, self.d_e, self.d_emb, self.sigma_obs,
            self.nn1_spec, self.nn2_spec, self.nn3_spec, self.nn4_spec, self.nn5_spec,
        )
        out.params = {k: v.copy() for k, v in self.params.items()}
        return out


def init_gen_params(
    d_s: int,
    d_e: int,
    d_emb: int,
    hidden_dims: tuple[int, ...],
    rng: np.random.Generator,
    sigma_obs: float = 1.0,
    gain: float = 1.0,
    dropout_rate: float = 0.0,
) -> GenParams:
    gp = GenParams(
        d_s=d_s,
        d_e=d_e,
        d_emb=d_emb,
        sigma_obs=sigma_obs,
        nn1_spec=MlpSpec(d_s + d_e, hidden_dims, 1, "unit_interval", dropout_rate),
        nn2_spec=MlpSpec(d_s, hidden_dims, d_emb, "none", dropout_rate),
        nn3_spec=MlpSpec(d_s + d_emb, hidden_dims, d_emb, "none", dropout_rate),
        nn4_spec=MlpSpec(d_s + 2 * d_emb, hidden_dims, d_emb, "none", dropout_rate),
        nn5_spec=MlpSpec(d_s + 3 * d_emb, hidden_dims, d_emb, "none", dropout_rate),
    )
    params: dict[str, Array] = {}
    for k, v in ad.init_attention(d_s, d_s, d_s, rng, gain).items():
        params[f"nn1_attn.{k}"] = v
    for name, spec in (
        ("nn1", gp.nn1_spec),
        ("nn2", gp.nn2_spec),
        ("nn3", gp.nn3_spec),
        ("nn4", gp.nn4_spec),
        ("nn5", gp.nn5_spec),
    ):
        for k, v in ad.init_mlp(spec, rng, gain).items():
            params[f"{name}.{k}"] = v
    gp.params = params
    return gp


def _p(gp: GenParams, p: Mapping | None) -> Mapping:
    return gp.params if p is None else p


def gen_success_rate(
    statuses, e, gp: GenParams, p: Mapping | None = None,
    training: bool = False, rng: np.random.Generator | None = None,
) -> tuple[Node, Node]:
    """Success rate from the status history (current status included) and features.

    Returns the scalar rate node and the attention weights over statuses.
    """
    p = _p(gp, p)
    e = ad.as_node(e)
    if e.value.shape[-1] != gp.d_e:
        raise GraphError(f"feature width {e.value.shape[-1]} != expected {gp.d_e}")
    context, weights = ad.attention_pool(ad.subparams(p, "nn1_attn"), statuses)
    x = ad.concat([context, e])
    r = ad.mlp_forward(gp.nn1_spec, ad.subparams(p, "nn1"), x, training, rng)
    return ad.ssum(r), weights


def gen_question_mean(
    s, prev_q, prev_a, gp: GenParams, p: Mapping | None = None,
    training: bool = False, rng: np.random.Generator | None = None,
) -> Node:
    p = _p(gp, p)
    if (prev_q is None) != (prev_a is None):
        raise GraphError("prev_q and prev_a must both be present or both absent")
    if prev_q is None:
        return ad.mlp_forward(gp.nn2_spec, ad.subparams(p, "nn2"), ad.as_node(s), training, rng)
    x = ad.concat([ad.as_node(s), ad.as_node(prev_q), ad.as_node(prev_a)])
    return ad.mlp_forward(gp.nn4_spec, ad.subparams(p, "nn4"), x, training, rng)


def gen_answer_mean(
    s, prev_q, prev_a, cur_q, gp: GenParams, p: Mapping | None = None,
    training: bool = False, rng: np.random.Generator | None = None,
) -> Node:
    p = _p(gp, p)
    if (prev_q is None) != (prev_a is None):
        raise GraphError("prev_q and prev_a must both be present or both absent")
    if prev_q is None:
        x = ad.concat([ad.as_node(s), ad.as_node(cur_q)])
        return ad.mlp_forward(gp.nn3_spec, ad.subparams(p, "nn3"), x, training, rng)
    x = ad.concat([ad.as_node(s), ad.as_node(prev_q), ad.as_node(prev_a), ad.as_node(cur_q)])
    return ad.mlp_forward(gp.nn5_spec, ad.subparams(p, "nn5"), x, training, rng)


def sample_status(prev: Array | None, rng: np.random.Generator, d_s: int) -> Array:
    """N(0, I) for the first call, N(prev, I) afterwards."""
    draw = rng.normal(size=d_s)
    return draw if prev is None else prev + draw


@dataclass
class LatentPath:
    statuses: list[Array]
    success_rates: list[float]


def sample_company(
    gp: GenParams,
    e: Array,
    L: int,
    K_list: Sequence[int],
    rng: np.random.Generator,
    *,
    company_id: str = "synthetic",
    features: FeatureVector | None = None,
    first_call_date: dt.date = dt.date(2020, 1, 1),
    call_gap_days: int = 90,
    outcome_gap_days: int = 180,
    expert_types: Sequence[str] | None = None,
) -> tuple[CompanyRecord, LatentPath]:
    """Run the generative process once, returning observables and true latents."""
    if L < 1 or len(K_list) != L or any(k < 1 for k in K_list):
        raise GraphError("need L >= 1 and K >= 1 per call")
    if gp.sigma_obs <= 0:
        raise GraphError("sigma_obs must be positive")
    statuses: list[Array] = []
    rates: list[float] = []
    calls: list[Call] = []
    sigma = gp.sigma_obs
    for l in range(L):
        s = sample_status(statuses[-1] if statuses else None, rng, gp.d_s)
        statuses.append(s)
        r, _ = gen_success_rate(np.stack(statuses), e, gp)
        rates.append(float(r.value))
        exchanges: list[Exchange] = []
        prev_q = prev_a = None
        for k in range(K_list[l]):
            q_mu = gen_question_mean(s, prev_q, prev_a, gp).value
            q = q_mu + sigma * rng.normal(size=gp.d_emb)
            a_mu = gen_answer_mean(s, prev_q, prev_a, q, gp).value
            a = a_mu + sigma * rng.normal(size=gp.d_emb)
            exchanges.append(Exchange(q_emb=q, a_emb=a))
            prev_q, prev_a = q, a
        etype = (
            expert_types[l]
            if expert_types is not None
            else ("Competitor", "Customer", "FormerExec", "IndustryCons", "Partner")[
                rng.integers(0, 5)
            ]
        )
        calls.append(
            Call(
                call_id=f"{company_id}-c{l + 1}",
                call_date=first_call_date + dt.timedelta(days=call_gap_days * l),
                expert_type=etype,
                exchanges=exchanges,
            )
        )
    y = int(rng.random() < rates[-1])
    if features is None:
        features = FeatureVector(
            age_months=120.0,
            founders_count=2.0,
            rounds=5.0,
            raised_funding_musd=100.0,
            investor_count=10.0,
            active_products=20.0,
            it_spend_musd=10.0,
            calls_last_24m=[0] * 24,
            hq=HQ_CHOICES[0],
            trademark_class=TM_CHOICES[0],
        )
    record = CompanyRecord(
        company_id=company_id,
        label=y,
        outcome_date=calls[-1].call_date + dt.timedelta(days=outcome_gap_days),
        features=features,
        calls=calls,
        e_std=np.asarray(e, dtype=np.float64),
    )
    return record, LatentPath(statuses=statuses, success_rates=rates)


# ---------------------------------------------------------------------------
# Synthetic dataset generation

_CALLS_24M_LAMBDA = 2.0
# per-coordinate (mean, std) for the 7 scalar features; log-space for funding/spend
_FEATURE_DISTS = (
    ("age_months", 117.0, 50.0, False),
    ("founders_count", 2.4, 1.0, False),
    ("rounds", 5.8, 2.5, False),
    ("raised_funding_musd", 4.6, 1.4, True),
    ("investor_count", 14.0, 8.0, False),
    ("active_products", 31.0, 12.0, False),
    ("it_spend_musd", 2.4, 1.6, True),
)


def draw_synthetic_features(rng: np.random.Generator) -> tuple[FeatureVector, Array]:
    """Draw company features plus the standardized vector the generator consumes.

    The feature values are constructed so that z-scoring with the stated
    population statistics reproduces the vector fed to the success head,
    letting a pipeline-fitted scaler approximately recover it.
    """
    z = rng.normal(size=7)
    kwargs = {}
    for i, (name, mu, sd, logspace) in enumerate(_FEATURE_DISTS):
        if logspace:
            # log1p(value) = mu + sd*z, so z-scoring the log recovers z
            val = max(math.expm1(mu + sd * z[i]), 0.0)
            z[i] = (math.log1p(val) - mu) / sd
        else:
            val = max(mu + sd * z[i], 0.0)
            z[i] = (val - mu) / sd
        kwargs[name] = float(val)
    counts = rng.poisson(_CALLS_24M_LAMBDA, size=24)
    z_counts = (counts - _CALLS_24M_LAMBDA) / math.sqrt(_CALLS_24M_LAMBDA)
    hq_i = int(rng.integers(0, len(HQ_CHOICES)))
    tm_i = int(rng.integers(0, len(TM_CHOICES)))
    hq_onehot = np.zeros(len(HQ_CHOICES))
    hq_onehot[hq_i] = 1.0
    tm_onehot = np.zeros(len(TM_CHOICES))
    tm_onehot[tm_i] = 1.0
    fv = FeatureVector(
        calls_last_24m=[int(c) for c in counts],
        hq=HQ_CHOICES[hq_i],
        trademark_class=TM_CHOICES[tm_i],
        **kwargs,
    )
    e = np.concatenate([z, z_counts, hq_onehot, tm_onehot])
    return fv, e


@dataclass(frozen=True)
class ShapeDistribution:
    min_calls: int = 1
    max_calls: int = 5
    min_exchanges: int = 2
    max_exchanges: int = 8
    call_gap_days: int = 90
    outcome_gap_days: int = 180


def synth_dataset(
    gp: GenParams,
    n_companies: int,
    out_path: str | Path,
    sidecar_path: str | Path,
    seed: int = 0,
    shape: ShapeDistribution = ShapeDistribution(),
) -> list[CompanyRecord]:
    """Sample companies to a JSONL file plus a latent-path sidecar."""
    if n_companies < 1:
        raise GraphError("n_companies must be >= 1")
    records = []
    sidecar_rows = []
    seeds = np.random.SeedSequence(seed).spawn(n_companies)
    for i in range(n_companies):
        rng = np.random.default_rng(seeds[i])
        fv, e = draw_synthetic_features(rng)
        L = int(rng.integers(shape.min_calls, shape.max_calls + 1))
        K_list = [int(rng.integers(shape.min_exchanges, shape.max_exchanges + 1)) for _ in range(L)]
        cid = f"synth-{seed}-{i:06d}"
        rec, path = sample_company(
            gp,
            e,
            L,
            K_list,
            rng,
            company_id=cid,
            features=fv,
            call_gap_days=shape.call_gap_days,
            outcome_gap_days=shape.outcome_gap_days,
        )
        records.append(rec)
        sidecar_rows.append(
            {
                "company_id": cid,
                "statuses": [s.tolist() for s in path.statuses],
                "success_rates": path.success_rates,
            }
        )
    serialize_dataset(records, out_path)
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        for row in sidecar_rows:
            fh.write(json.dumps(row) + "\n")
    return records
