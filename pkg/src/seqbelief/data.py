"""Domain records for companies, calls, and exchanges.

JSONL parsing/serialization with validation, training-stats feature
standardization, and deterministic dataset splitting.
"""
from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

EXPERT_TYPES = ("Competitor", "Customer", "FormerExec", "IndustryCons", "Partner")

CONTINUOUS_FIELDS = (
    "age_months",
    "founders_count",
    "rounds",
    "raised_funding_musd",
    "investor_count",
    "active_products",
    "it_spend_musd",
)
LOG1P_FIELDS = ("raised_funding_musd", "it_spend_musd")


class DataError(ValueError):
    """Raised on malformed or invariant-violating dataset content."""


@dataclass
class Exchange:
    question_text: str | None = None
    answer_text: str | None = None
    q_emb: np.ndarray | None = None
    a_emb: np.ndarray | None = None


@dataclass
class Call:
    call_id: str
    call_date: dt.date
    expert_type: str
    exchanges: list[Exchange]


@dataclass
class FeatureVector:
    age_months: float
    founders_count: float
    rounds: float
    raised_funding_musd: float
    investor_count: float
    active_products: float
    it_spend_musd: float
    calls_last_24m: list[int]
    hq: str
    trademark_class: str


@dataclass
class CompanyRecord:
    company_id: str
    label: int
    outcome_date: dt.date
    features: FeatureVector
    calls: list[Call]
    e_std: np.ndarray | None = None  # filled by Scaler.transform


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float
    valid_frac: float
    test_frac: float
    seed: int = 0
    stratify: bool = False


def _parse_date(s: str, ctx: str) -> dt.date:
    try:
        return dt.date.fromisoformat(s)
    except (TypeError, ValueError) as e:
        raise DataError(f"{ctx}: bad date {s!r}") from e


def validate_record(rec: CompanyRecord) -> None:
    cid = rec.company_id
    if rec.label not in (0, 1):
        raise DataError(f"company {cid}: label must be 0 or 1")
    if not rec.calls:
        raise DataError(f"company {cid}: at least one call required")
    prev = None
    for call in rec.calls:
        if call.expert_type not in EXPERT_TYPES:
            raise DataError(f"company {cid}: unknown expert_type {call.expert_type!r}")
        if not call.exchanges:
            raise DataError(f"company {cid}: call {call.call_id} has no exchanges")
        if prev is not None and call.call_date <= prev:
            raise DataError(f"company {cid}: calls not strictly ordered by date")
        prev = call.call_date
        for i, ex in enumerate(call.exchanges):
            if ex.question_text is None and ex.q_emb is None:
                raise DataError(
                    f"company {cid}: call {call.call_id} exchange {i} lacks question text and embedding"
                )
            if ex.answer_text is None and ex.a_emb is None:
                raise DataError(
                    f"company {cid}: call {call.call_id} exchange {i} lacks answer text and embedding"
                )
    if rec.outcome_date < rec.calls[-1].call_date:
        raise DataError(f"company {cid}: outcome_date precedes last call date")
    fv = rec.features
    if len(fv.calls_last_24m) != 24:
        raise DataError(f"company {cid}: calls_last_24m must have 24 entries")
    for name in CONTINUOUS_FIELDS:
        if getattr(fv, name) < 0:
            raise DataError(f"company {cid}: feature {name} must be non-negative")


def record_from_dict(obj: dict) -> CompanyRecord:
    try:
        return _record_from_dict(obj)
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, DataError):
            raise
        cid = obj.get("company_id", "<unknown>") if isinstance(obj, dict) else "<unknown>"
        raise DataError(f"company {cid}: malformed record ({e})") from e


def _record_from_dict(obj: dict) -> CompanyRecord:
    cid = obj["company_id"]
    f = obj["features"]
    fv = FeatureVector(
        age_months=float(f["age_months"]),
        founders_count=float(f["founders_count"]),
        rounds=float(f["rounds"]),
        raised_funding_musd=float(f["raised_funding_musd"]),
        investor_count=float(f["investor_count"]),
        active_products=float(f["active_products"]),
        it_spend_musd=float(f["it_spend_musd"]),
        calls_last_24m=[int(c) for c in f["calls_last_24m"]],
        hq=str(f["hq"]),
        trademark_class=str(f["trademark_class"]),
    )
    calls = []
    for c in obj["calls"]:
        exchanges = [
            Exchange(
                question_text=ex.get("q"),
                answer_text=ex.get("a"),
                q_emb=None if ex.get("q_emb") is None else np.asarray(ex["q_emb"], dtype=np.float64),
                a_emb=None if ex.get("a_emb") is None else np.asarray(ex["a_emb"], dtype=np.float64),
            )
            for ex in c["exchanges"]
        ]
        calls.append(
            Call(
                call_id=str(c["call_id"]),
                call_date=_parse_date(c["date"], f"company {cid}"),
                expert_type=str(c["expert_type"]),
                exchanges=exchanges,
            )
        )
    rec = CompanyRecord(
        company_id=str(cid),
        label=int(obj["label"]),
        outcome_date=_parse_date(obj["outcome_date"], f"company {cid}"),
        features=fv,
        calls=calls,
    )
    validate_record(rec)
    return rec


def record_to_dict(rec: CompanyRecord) -> dict:
    fv = rec.features
    return {
        "company_id": rec.company_id,
        "label": rec.label,
        "outcome_date": rec.outcome_date.isoformat(),
        "features": {
            **{name: getattr(fv, name) for name in CONTINUOUS_FIELDS},
            "calls_last_24m": list(fv.calls_last_24m),
            "hq": fv.hq,
            "trademark_class": fv.trademark_class,
        },
        "calls": [
            {
                "call_id": c.call_id,
                "date": c.call_date.isoformat(),
                "expert_type": c.expert_type,
                "exchanges": [
                    {
                        "q": ex.question_text,
                        "a": ex.answer_text,
                        "q_emb": None if ex.q_emb is None else ex.q_emb.tolist(),
                        "a_emb": None if ex.a_emb is None else ex.a_emb.tolist(),
                    }
                    for ex in c.exchanges
                ],
            }
            for c in rec.calls
        ],
    }


def parse_dataset(path: str | Path) -> list[CompanyRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: malformed JSON ({e.msg})") from e
            try:
                records.append(record_from_dict(obj))
            except DataError as e:
                raise DataError(f"{path}:{lineno}: {e}") from e
    return records


def serialize_dataset(records: list[CompanyRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_dict(rec)) + "\n")


# ---------------------------------------------------------------------------
# Feature standardization


@dataclass
class Scaler:
    """Training-set feature statistics plus frozen categorical vocabularies."""

    mean: np.ndarray  # 31 continuous coordinates (7 scalars + 24 call counts)
    std: np.ndarray  # population std; 0 marks a constant coordinate
    hq_vocab: list[str]
    trademark_vocab: list[str]
    d_emb: int = 768

    @property
    def d_e(self) -> int:
        return 31 + len(self.hq_vocab) + len(self.trademark_vocab)

    def transform(self, rec: CompanyRecord) -> np.ndarray:
        raw = _raw_continuous(rec.features)
        z = np.where(self.std > 0, (raw - self.mean) / np.where(self.std > 0, self.std, 1.0), 0.0)
        hq = np.zeros(len(self.hq_vocab))
        if rec.features.hq in self.hq_vocab:
            hq[self.hq_vocab.index(rec.features.hq)] = 1.0
        tm = np.zeros(len(self.trademark_vocab))
        if rec.features.trademark_class in self.trademark_vocab:
            tm[self.trademark_vocab.index(rec.features.trademark_class)] = 1.0
        return np.concatenate([z, hq, tm])

    def to_manifest(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "hq_vocab": self.hq_vocab,
            "trademark_vocab": self.trademark_vocab,
            "d_e": self.d_e,
            "d_emb": self.d_emb,
        }

    @classmethod
    def from_manifest(cls, m: dict) -> "Scaler":
        return cls(
            mean=np.asarray(m["mean"], dtype=np.float64),
            std=np.asarray(m["std"], dtype=np.float64),
            hq_vocab=list(m["hq_vocab"]),
            trademark_vocab=list(m["trademark_vocab"]),
            d_emb=int(m["d_emb"]),
        )


def _raw_continuous(fv: FeatureVector) -> np.ndarray:
    vals = []
    for name in CONTINUOUS_FIELDS:
        v = float(getattr(fv, name))
        if name in LOG1P_FIELDS:
            v = math.log1p(v)
        vals.append(v)
    vals.extend(float(c) for c in fv.calls_last_24m)
    return np.asarray(vals, dtype=np.float64)


def fit_scaler(train: list[CompanyRecord], d_emb: int = 768) -> Scaler:
    if not train:
        raise DataError("cannot fit a scaler on an empty training set")
    raw = np.stack([_raw_continuous(r.features) for r in train])
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)  # population variance
    std[std < 1e-12] = 0.0
    hq_vocab = sorted({r.features.hq for r in train})
    tm_vocab = sorted({r.features.trademark_class for r in train})
    return Scaler(mean=mean, std=std, hq_vocab=hq_vocab, trademark_vocab=tm_vocab, d_emb=d_emb)


def standardize_features(
    train: list[CompanyRecord], all_records: list[CompanyRecord], d_emb: int = 768
) -> Scaler:
    """Fit on `train`, attach standardized vectors to every record in `all_records`."""
    scaler = fit_scaler(train, d_emb=d_emb)
    for rec in all_records:
        rec.e_std = scaler.transform(rec)
    return scaler


# ---------------------------------------------------------------------------
# Splitting


def split_dataset(
    records: list[CompanyRecord], spec: SplitSpec
) -> tuple[list[CompanyRecord], list[CompanyRecord], list[CompanyRecord]]:
    if abs(spec.train_frac + spec.valid_frac + spec.test_frac - 1.0) > 1e-9:
        raise DataError("split fractions must sum to 1")
    if min(spec.train_frac, spec.valid_frac, spec.test_frac) <= 0:
        raise DataError("split fractions must be positive")
    if len(records) < 3:
        raise DataError("need at least 3 records to split")
    rng = np.random.default_rng(spec.seed)

    def carve(group: list[CompanyRecord]):
        idx = rng.permutation(len(group))
        n_valid = math.floor(len(group) * spec.valid_frac)
        n_test = math.floor(len(group) * spec.test_frac)
        valid = [group[i] for i in idx[:n_valid]]
        test = [group[i] for i in idx[n_valid : n_valid + n_test]]
        train = [group[i] for i in idx[n_valid + n_test :]]
        return train, valid, test

    if spec.stratify:
        train, valid, test = [], [], []
        for lbl in (0, 1):
            group = [r for r in records if r.label == lbl]
            if group:
                tr, va, te = carve(group)
                train += tr
                valid += va
                test += te
        return train, valid, test
    return carve(list(records))
