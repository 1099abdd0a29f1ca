"""Text-to-embedding interface for question/answer exchanges.

Default is a deterministic offline mock encoder (stable token hashes
projected into a seeded random basis, unit-normalized). A remote mode
POSTs each text to a summarizer endpoint with a domain prompt and then
encodes the returned summary with the same mock encoder.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import CompanyRecord, Exchange

CACHE_ENV_VAR = "SEQBELIEF_CACHE_DIR"

DEFAULT_SUMMARY_PROMPT = (
    "Assume you are an investment analysis expert. Please summarize the given "
    "private company's expert call content from the following perspectives in "
    "no more than {max_words} words: Startup Characteristics (Product, Financial "
    "Health, Founding Team, Leadership, Intellectual Property); Market and "
    "Industry Dynamics (Market Size, Competitive Landscape, Economic and "
    "Regulatory Environment); Investor Characteristics (VC Expertise, Investment "
    "Strategy, Governance Role); Buyer Characteristics (Strategic Fit, Buyer's "
    "reputation for successful cultural and operational integration); "
    "Relationships Between Factors. If there is no description associated with "
    "the above feature, output the None value."
)


class EmbedError(RuntimeError):
    pass


@dataclass
class EmbedderConfig:
    mode: str = "mock"  # "mock" | "remote"
    d_emb: int = 768
    remote_endpoint: str | None = None
    prompt_template: str = DEFAULT_SUMMARY_PROMPT
    max_summary_words: int = 200
    request_timeout_ms: int = 30_000
    cache_dir: str | None = None

    def __post_init__(self):
        if self.d_emb < 8:
            raise EmbedError("d_emb must be >= 8")
        if self.mode not in ("mock", "remote"):
            raise EmbedError(f"unknown embedder mode {self.mode!r}")
        if self.mode == "remote" and not self.remote_endpoint:
            raise EmbedError("remote mode requires an endpoint")

    @property
    def prompt(self) -> str:
        return self.prompt_template.format(max_words=self.max_summary_words)

    def resolved_cache_dir(self) -> Path | None:
        path = self.cache_dir or os.environ.get(CACHE_ENV_VAR)
        return Path(path) if path else None


def _token_seed(token: str) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "little")


def mock_embed(text: str, d_emb: int) -> np.ndarray:
    """Deterministic unit-norm embedding of a text.

    Each whitespace token hashes to a seed for a fixed Gaussian direction;
    the token directions are summed and the result normalized.
    """
    if d_emb < 8:
        raise EmbedError("d_emb must be >= 8")
    tokens = text.lower().split()
    if not tokens:
        v = np.zeros(d_emb)
        v[0] = 1.0
        return v
    acc = np.zeros(d_emb)
    for tok in tokens:
        rng = np.random.default_rng(_token_seed(tok))
        acc += rng.normal(size=d_emb)
    norm = np.linalg.norm(acc)
    if norm < 1e-12:
        v = np.zeros(d_emb)
        v[0] = 1.0
        return v
    return acc / norm


def _cache_key(cfg: EmbedderConfig, text: str) -> str:
    h = hashlib.sha256()
    h.update(f"{cfg.mode}|{cfg.d_emb}|".encode())
    h.update(text.encode("utf-8"))
    return h.hexdigest()


def _cache_read(cache_dir: Path, key: str) -> np.ndarray | None:
    path = cache_dir / f"{key}.json"
    if not path.exists():
        return None
    try:
        obj = json.loads(path.read_text())
        return np.asarray(obj["embedding"], dtype=np.float64)
    except (json.JSONDecodeError, KeyError, TypeError):
        return None  # corrupt entry: recompute


def _cache_write(cache_dir: Path, key: str, emb: np.ndarray) -> None:
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = cache_dir / f"{key}.json.tmp"
    tmp.write_text(json.dumps({"embedding": emb.tolist()}))
    tmp.replace(cache_dir / f"{key}.json")


def _remote_summarize(cfg: EmbedderConfig, text: str, ctx: str) -> str:
    import requests

    payload = {"prompt": cfg.prompt, "text": text}
    timeout = cfg.request_timeout_ms / 1000.0
    last_err: Exception | None = None
    for attempt in range(3):
        try:
            resp = requests.post(cfg.remote_endpoint, json=payload, timeout=timeout)
            if 200 <= resp.status_code < 300:
                return resp.json()["summary"]
            last_err = EmbedError(f"{ctx}: endpoint returned {resp.status_code}")
        except Exception as e:  # noqa: BLE001 - retried below
            last_err = e
        time.sleep(0.1 * (2**attempt))
    raise EmbedError(f"{ctx}: remote summarization failed after 3 attempts") from last_err


def _embed_text(cfg: EmbedderConfig, text: str, ctx: str) -> np.ndarray:
    cache_dir = cfg.resolved_cache_dir()
    key = _cache_key(cfg, text)
    if cache_dir is not None:
        cached = _cache_read(cache_dir, key)
        if cached is not None and cached.shape == (cfg.d_emb,):
            return cached
    if cfg.mode == "mock":
        emb = mock_embed(text, cfg.d_emb)
    else:
        summary = _remote_summarize(cfg, text, ctx)
        emb = mock_embed(summary, cfg.d_emb)
    if cache_dir is not None:
        _cache_write(cache_dir, key, emb)
    return emb


def llm_extract(exchange: Exchange, cfg: EmbedderConfig, ctx: str = "exchange") -> tuple[np.ndarray, np.ndarray]:
    """Embed one exchange's question and answer; pass through if present."""
    if exchange.q_emb is not None and exchange.a_emb is not None:
        return exchange.q_emb, exchange.a_emb
    if exchange.question_text is None or exchange.answer_text is None:
        raise EmbedError(f"{ctx}: missing text for embedding")
    q = _embed_text(cfg, exchange.question_text, f"{ctx} question")
    a = _embed_text(cfg, exchange.answer_text, f"{ctx} answer")
    return q, a


def embed_dataset(records: list[CompanyRecord], cfg: EmbedderConfig) -> None:
    """Fill embeddings in place for every exchange lacking them."""
    for rec in records:
        for call in rec.calls:
            for i, ex in enumerate(call.exchanges):
                ctx = f"company {rec.company_id} call {call.call_id} exchange {i}"
                ex.q_emb, ex.a_emb = llm_extract(ex, cfg, ctx)
