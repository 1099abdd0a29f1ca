"""Shared fixtures: tiny models and toy companies used across the suite."""

from __future__ import annotations

import datetime as dt

import numpy as np
import pytest

from seqbelief.data import Call, CompanyRecord, Exchange, FeatureVector
from seqbelief.genmodel import init_gen_params
from seqbelief.inference import init_inf_params

TINY_D_S = 3
TINY_D_E = 4
TINY_D_EMB = 6


def make_features(rng: np.random.Generator | None = None) -> FeatureVector:
    rng = rng or np.random.default_rng(0)
    return FeatureVector(
        age_months=float(rng.uniform(12, 240)),
        founders_count=float(rng.integers(1, 5)),
        rounds=float(rng.integers(0, 6)),
        raised_funding_musd=float(rng.uniform(0, 50)),
        investor_count=float(rng.integers(0, 12)),
        active_products=float(rng.integers(1, 8)),
        it_spend_musd=float(rng.uniform(0, 5)),
        calls_last_24m=[int(v) for v in rng.integers(0, 3, size=24)],
        hq="US",
        trademark_class="42",
    )


def make_company(
    rng: np.random.Generator,
    n_calls: int = 2,
    exchanges_per_call: int = 3,
    d_emb: int = TINY_D_EMB,
    label: int = 1,
    company_id: str = "toy",
) -> CompanyRecord:
    calls = []
    base = dt.date(2021, 3, 1)
    for l in range(n_calls):
        exchanges = [
            Exchange(
                question_text="q?",
                answer_text="a.",
                q_emb=rng.normal(size=d_emb),
                a_emb=rng.normal(size=d_emb),
            )
            for _ in range(exchanges_per_call)
        ]
        calls.append(
            Call(
                call_id=f"{company_id}-c{l}",
                call_date=base + dt.timedelta(days=90 * l),
                expert_type="Customer",
                exchanges=exchanges,
            )
        )
    rec = CompanyRecord(
        company_id=company_id,
        label=label,
        outcome_date=calls[-1].call_date + dt.timedelta(days=180),
        features=make_features(rng),
        calls=calls,
    )
    rec.e_std = rng.normal(size=TINY_D_E)
    return rec


@pytest.fixture
def tiny_models():
    rng = np.random.default_rng(11)
    gp = init_gen_params(TINY_D_S, TINY_D_E, TINY_D_EMB, (5,), rng, gain=0.6)
    ip = init_inf_params(TINY_D_S, TINY_D_EMB, (5,), rng)
    return gp, ip


@pytest.fixture
def toy_company():
    return make_company(np.random.default_rng(7))
