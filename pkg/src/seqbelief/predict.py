"""Deployment-time sequential belief updating.

Posterior means are chained call by call (no sampling on the rate path);
uncertainty bands come from propagating posterior samples through the
success-rate head. Labels and outcome dates are never read.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autodiff import Array, GraphError
from .data import CompanyRecord
from .genmodel import GenParams, gen_success_rate
from .inference import InfParams, call_pair_matrix, infer_status_graph
from .training import Checkpoint, TrainConfig, _Prepared

BAND_SAMPLES = 100


@dataclass
class CallBelief:
    call_index: int
    posterior_mean: Array
    rate_mean: float
    rate_lo90: float
    rate_hi90: float
    status_attention: Array  # over calls 1..l
    exchange_attention: Array  # over exchanges of call l


@dataclass
class BeliefTrajectory:
    company_id: str
    expert_types: list[str]
    entries: list[CallBelief] = field(default_factory=list)


def _chain_means(
    pair_matrices: Sequence[Array], inf: InfParams, paper_literal: bool
) -> tuple[list[Array], list[Array]]:
    means: list[Array] = []
    exch_weights: list[Array] = []
    prev = None
    for mat in pair_matrices:
        m = mat[:-1] if paper_literal and mat.shape[0] > 1 else mat
        mean, weights = infer_status_graph(m, prev, inf)
        means.append(mean.value)
        exch_weights.append(weights.value)
        prev = mean.value
    return means, exch_weights


def predict_sequence(
    company: CompanyRecord,
    checkpoint: Checkpoint,
    band_samples: int = BAND_SAMPLES,
    band_seed: int = 0,
) -> BeliefTrajectory:
    cfg = checkpoint.config
    gen, inf = checkpoint.gen, checkpoint.inf
    for call in company.calls:
        for ex in call.exchanges:
            if ex.q_emb is None or ex.a_emb is None:
                raise GraphError(f"company {company.company_id}: embed exchanges first")
            if ex.q_emb.shape[0] != cfg.d_emb:
                raise GraphError(
                    f"company {company.company_id}: embedding width "
                    f"{ex.q_emb.shape[0]} != checkpoint d_emb {cfg.d_emb}"
                )
    e = checkpoint.scaler.transform(company)
    mats = [call_pair_matrix(c) for c in company.calls]
    means, exch_weights = _chain_means(mats, inf, cfg.paper_literal_ranges)

    traj = BeliefTrajectory(
        company_id=company.company_id,
        expert_types=[c.expert_type for c in company.calls],
    )
    rng = np.random.default_rng(band_seed)
    for l in range(len(company.calls)):
        prefix = np.stack(means[: l + 1])
        r_node, w_node = gen_success_rate(prefix, e, gen)
        rate_mean = float(r_node.value)
        noise = rng.normal(size=(band_samples, l + 1, inf.d_s))
        draws = np.empty(band_samples)
        for j in range(band_samples):
            sampled = prefix + inf.tau * noise[j]
            rj, _ = gen_success_rate(sampled, e, gen)
            draws[j] = float(rj.value)
        lo, hi = np.percentile(draws, [5.0, 95.0])
        traj.entries.append(
            CallBelief(
                call_index=l + 1,
                posterior_mean=means[l],
                rate_mean=rate_mean,
                rate_lo90=min(float(lo), rate_mean),
                rate_hi90=max(float(hi), rate_mean),
                status_attention=w_node.value,
                exchange_attention=exch_weights[l],
            )
        )
    return traj


def final_rates(
    prepared: Sequence[_Prepared], gen: GenParams, inf: InfParams, cfg: TrainConfig
) -> list[float]:
    """Final-call rate_mean per company, on the fast mean path (no bands)."""
    rates = []
    for prep in prepared:
        if prep.record.e_std is None:
            raise GraphError(f"company {prep.record.company_id}: features not standardized")
        means, _ = _chain_means(prep.pair_matrices, inf, cfg.paper_literal_ranges)
        r, _ = gen_success_rate(np.stack(means), prep.record.e_std, gen)
        rates.append(float(r.value))
    return rates


# ---------------------------------------------------------------------------
# Thresholding


@dataclass
class ThresholdPolicy:
    mode: str = "fixed"  # "fixed" | "tuned"
    value: float = 0.5

    def __post_init__(self):
        if self.mode not in ("fixed", "tuned"):
            raise GraphError(f"unknown threshold mode {self.mode!r}")
        if not (0.0 < self.value < 1.0):
            raise GraphError("threshold must lie in (0, 1)")


def tune_threshold(rates: Sequence[float], labels: Sequence[int]) -> float:
    """F1-maximizing threshold over observed rates; ties go to the lowest."""
    from .evaluation import classification_metrics

    if len(rates) == 0 or len(rates) != len(labels):
        raise GraphError("tuned mode requires aligned validation rates and labels")
    best_t, best_f1 = None, -1.0
    for t in sorted(set(rates)):
        preds = [1 if r >= t else 0 for r in rates]
        f1 = classification_metrics(labels, preds)["f1"]
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return float(best_t)


def classify(trajectory: BeliefTrajectory, policy: ThresholdPolicy) -> list[int]:
    """Per-call binary calls: 1 iff rate_mean >= threshold (boundary inclusive)."""
    return [1 if entry.rate_mean >= policy.value else 0 for entry in trajectory.entries]


# ---------------------------------------------------------------------------
# Trajectory serialization


def trajectory_to_dict(traj: BeliefTrajectory) -> dict:
    return {
        "company_id": traj.company_id,
        "expert_types": traj.expert_types,
        "entries": [
            {
                "call_index": e.call_index,
                "posterior_mean": e.posterior_mean.tolist(),
                "rate_mean": e.rate_mean,
                "rate_lo90": e.rate_lo90,
                "rate_hi90": e.rate_hi90,
                "status_attention": e.status_attention.tolist(),
                "exchange_attention": e.exchange_attention.tolist(),
            }
            for e in traj.entries
        ],
    }


def write_trajectories(trajs: Sequence[BeliefTrajectory], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajs:
            fh.write(json.dumps(trajectory_to_dict(traj)) + "\n")


def read_trajectories(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
