"""Two-step alternating training of inference and generative parameter sets,
checkpoint persistence, and grid sweeps.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Array, GraphError
from .data import CompanyRecord, Scaler, standardize_features
from .genmodel import GenParams, init_gen_params
from .inference import InfParams, call_pair_matrix, init_inf_params
from .objective import elbo_graph

CHECKPOINT_MAGIC = b"SEQBELIEF"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-5
    dropout: float = 0.15
    d_s: int = 512
    w: float = 1e-4
    sigma_obs: float = 1.0
    tau: float = 1.0
    lambda_days: float = 365.0
    batch_size: int = 8
    mc_samples: int = 1
    inf_epochs_per_round: int = 1
    gen_epochs_per_round: int = 1
    max_rounds: int = 50
    patience: int = 5
    seed: int = 0
    d_emb: int = 768
    hidden_dims: tuple[int, ...] = (512, 512)
    init_gain: float = 1.0
    paper_literal_ranges: bool = False
    cross_exchange: bool = True  # False forces first-exchange network paths everywhere

    def __post_init__(self):
        positive = (
            self.learning_rate, self.d_s, self.sigma_obs, self.tau, self.lambda_days,
            self.batch_size, self.mc_samples, self.inf_epochs_per_round,
            self.gen_epochs_per_round, self.d_emb,
        )
        if any(v <= 0 for v in positive) or self.w < 0 or self.max_rounds < 0:
            raise GraphError("invalid training configuration")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "hidden_dims" in d:
            d["hidden_dims"] = tuple(d["hidden_dims"])
        return cls(**d)


@dataclass
class Checkpoint:
    version: int
    config: TrainConfig
    gen: GenParams
    inf: InfParams
    scaler: Scaler
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        names = [f"gen.{k}" for k in sorted(self.gen.params)] + [
            f"inf.{k}" for k in sorted(self.inf.params)
        ]
        arrays = {f"gen.{k}": v for k, v in self.gen.params.items()}
        arrays.update({f"inf.{k}": v for k, v in self.inf.params.items()})
        index = {}
        offset = 0
        for name in names:
            arr = arrays[name]
            index[name] = {"shape": list(arr.shape), "offset": offset}
            offset += arr.size
        header = json.dumps(
            {
                "version": self.version,
                "config": self.config.to_dict(),
                "scaler": self.scaler.to_manifest(),
                "tensors": index,
                "history": self.history,
            }
        ).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for name in names:
                fh.write(arrays[name].astype("<f8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        with open(path, "rb") as fh:
            magic = fh.read(len(CHECKPOINT_MAGIC))
            if magic != CHECKPOINT_MAGIC:
                raise GraphError(f"{path}: not a checkpoint file")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen).decode("utf-8"))
            payload = np.frombuffer(fh.read(), dtype="<f8")
        cfg = TrainConfig.from_dict(header["config"])
        scaler = Scaler.from_manifest(header["scaler"])
        gen, inf = init_model(cfg, scaler.d_e)
        for name, meta in header["tensors"].items():
            shape = tuple(meta["shape"])
            size = int(np.prod(shape)) if shape else 1
            arr = payload[meta["offset"] : meta["offset"] + size].reshape(shape).copy()
            group, key = name.split(".", 1)
            (gen.params if group == "gen" else inf.params)[key] = arr
        return cls(
            version=header["version"],
            config=cfg,
            gen=gen,
            inf=inf,
            scaler=scaler,
            history=header.get("history", []),
        )


def init_model(cfg: TrainConfig, d_e: int, rng: np.random.Generator | None = None
               ) -> tuple[GenParams, InfParams]:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    gen = init_gen_params(
        cfg.d_s, d_e, cfg.d_emb, cfg.hidden_dims, rng,
        sigma_obs=cfg.sigma_obs, gain=cfg.init_gain, dropout_rate=cfg.dropout,
    )
    inf = init_inf_params(
        cfg.d_s, cfg.d_emb, cfg.hidden_dims, rng,
        tau=cfg.tau, gain=cfg.init_gain, dropout_rate=cfg.dropout,
    )
    return gen, inf


@dataclass
class _Prepared:
    record: CompanyRecord
    pair_matrices: list[Array]
    n_calls: int


def _prepare(records: list[CompanyRecord]) -> list[_Prepared]:
    out = []
    for rec in records:
        if rec.e_std is None:
            raise GraphError(f"company {rec.company_id}: features not standardized")
        out.append(_Prepared(rec, [call_pair_matrix(c) for c in rec.calls], len(rec.calls)))
    return out


def _dataset_loss(
    batch: list[_Prepared],
    gen: GenParams,
    inf: InfParams,
    cfg: TrainConfig,
    rng: np.random.Generator,
    update: str,  # "inf" | "gen" | "none"
) -> tuple[ad.Node, dict[str, ad.Node], dict]:
    """Batch-mean objective graph plus the parameter nodes being updated."""
    gnodes = ad.wrap_params(gen.params)
    inodes = ad.wrap_params(inf.params)
    totals = []
    sums = {"elbo": 0.0, "kl_total": 0.0, "constraint": 0.0}
    for prep in batch:
        noise = rng.normal(size=(cfg.mc_samples, prep.n_calls, cfg.d_s))
        parts = elbo_graph(
            prep.record, gen, inf, gnodes, inodes,
            noise=noise,
            w=cfg.w if update != "gen" else 0.0,
            lambda_days=cfg.lambda_days,
            paper_literal_ranges=cfg.paper_literal_ranges,
            cross_exchange=cfg.cross_exchange,
            pair_matrices=prep.pair_matrices,
            training=update != "none",
            dropout_rng=rng,
        )
        if update == "gen":
            totals.append(ad.mul(parts["elbo"], -1.0))
        else:
            totals.append(parts["weighted_total"])
        for k in sums:
            sums[k] += float(parts[k].value)
    loss = totals[0]
    for t in totals[1:]:
        loss = ad.add(loss, t)
    loss = ad.mul(loss, 1.0 / len(batch))
    nodes = inodes if update == "inf" else gnodes
    for k in sums:
        sums[k] /= len(batch)
    return loss, nodes, sums


def evaluate_dataset(
    prepared: list[_Prepared], gen: GenParams, inf: InfParams, cfg: TrainConfig, noise_seed: int
) -> dict[str, float]:
    """Mean loss components over a dataset under a fixed noise seed."""
    sums = {"elbo": 0.0, "kl_total": 0.0, "constraint": 0.0, "label_ll": 0.0}
    rng = np.random.default_rng(noise_seed)
    for prep in prepared:
        noise = rng.normal(size=(cfg.mc_samples, prep.n_calls, cfg.d_s))
        parts = elbo_graph(
            prep.record, gen, inf,
            noise=noise, w=cfg.w, lambda_days=cfg.lambda_days,
            paper_literal_ranges=cfg.paper_literal_ranges,
            cross_exchange=cfg.cross_exchange,
            pair_matrices=prep.pair_matrices,
        )
        for k in sums:
            sums[k] += float(parts[k].value)
    return {k: v / len(prepared) for k, v in sums.items()}


def _valid_f1(prepared: list[_Prepared], gen: GenParams, inf: InfParams, cfg: TrainConfig) -> float:
    from .evaluation import classification_metrics
    from .predict import final_rates

    rates = final_rates(prepared, gen, inf, cfg)
    y_true = [p.record.label for p in prepared]
    y_pred = [1 if r >= 0.5 else 0 for r in rates]
    return classification_metrics(y_true, y_pred)["f1"]


def em_fit(
    train: list[CompanyRecord],
    valid: list[CompanyRecord],
    cfg: TrainConfig,
    scaler: Scaler | None = None,
    progress: bool = False,
) -> tuple[Checkpoint, list[dict]]:
    """Alternating optimization: inference step against -ELBO + w*C with the
    generative set frozen, then generative step against -ELBO with the
    inference set frozen. Stops on a patience rule over the 3-round moving
    average of validation ELBO; returns the best-validation checkpoint.
    """
    if not train:
        raise GraphError("empty training set")
    if scaler is None:
        scaler = standardize_features(train, train + valid, d_emb=cfg.d_emb)
    prepared_train = _prepare(train)
    prepared_valid = _prepare(valid) if valid else []

    rng = np.random.default_rng(cfg.seed)
    gen, inf = init_model(cfg, scaler.d_e, rng)
    adam_inf = ad.init_adam(inf.params, cfg.learning_rate)
    adam_gen = ad.init_adam(gen.params, cfg.learning_rate)

    history: list[dict] = []
    best: tuple[float, GenParams, InfParams] | None = None
    moving: list[float] = []
    best_ma = -np.inf
    stall = 0

    def run_epochs(update: str, n_epochs: int, round_idx: int) -> None:
        params = inf.params if update == "inf" else gen.params
        state = adam_inf if update == "inf" else adam_gen
        for epoch in range(n_epochs):
            order_rng = np.random.default_rng((cfg.seed, round_idx, epoch, 0 if update == "inf" else 1))
            order = order_rng.permutation(len(prepared_train))
            for start in range(0, len(order), cfg.batch_size):
                batch = [prepared_train[i] for i in order[start : start + cfg.batch_size]]
                noise_rng = np.random.default_rng(
                    (cfg.seed, round_idx, epoch, start, 2 if update == "inf" else 3)
                )
                loss, nodes, _ = _dataset_loss(batch, gen, inf, cfg, noise_rng, update)
                if not np.isfinite(loss.value):
                    raise GraphError(
                        f"non-finite loss in round {round_idx} "
                        f"(companies {[p.record.company_id for p in batch]})"
                    )
                ad.backward(loss)
                ad.adam_step(state, params, ad.grads_of(nodes))

    for round_idx in range(cfg.max_rounds):
        run_epochs("inf", cfg.inf_epochs_per_round, round_idx)
        run_epochs("gen", cfg.gen_epochs_per_round, round_idx)

        train_eval = evaluate_dataset(prepared_train, gen, inf, cfg, noise_seed=cfg.seed + 10_000)
        eval_split = prepared_valid or prepared_train
        valid_eval = evaluate_dataset(eval_split, gen, inf, cfg, noise_seed=cfg.seed + 20_000)
        f1 = _valid_f1(eval_split, gen, inf, cfg)
        for split, ev in (("train", train_eval), ("valid", valid_eval)):
            history.append(
                {
                    "round": round_idx,
                    "split": split,
                    "elbo": ev["elbo"],
                    "kl": ev["kl_total"],
                    "constraint": ev["constraint"],
                    "f1": f1 if split == "valid" else "",
                }
            )
        if progress:
            print(
                f"round {round_idx}: train elbo {train_eval['elbo']:.4f} "
                f"valid elbo {valid_eval['elbo']:.4f} f1 {f1:.3f}"
            )
        if best is None or valid_eval["elbo"] > best[0]:
            best = (valid_eval["elbo"], gen.copy(), inf.copy())
        moving.append(valid_eval["elbo"])
        ma = float(np.mean(moving[-3:]))
        if ma > best_ma + 1e-4:
            best_ma = ma
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                break

    if best is None:
        best = (-np.inf, gen, inf)
    checkpoint = Checkpoint(
        version=CHECKPOINT_VERSION,
        config=cfg,
        gen=best[1],
        inf=best[2],
        scaler=scaler,
        history=history,
    )
    return checkpoint, history


def write_history_csv(history: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["round", "split", "elbo", "kl", "constraint", "f1"])
        writer.writeheader()
        writer.writerows(history)


def sweep(
    grid: dict[str, list],
    train: list[CompanyRecord],
    valid: list[CompanyRecord],
    base_cfg: TrainConfig,
) -> list[dict]:
    """One em_fit per grid point; rows sorted by validation F1 descending."""
    if not grid or any(not v for v in grid.values()):
        raise GraphError("grid axes must be non-empty")
    axes = sorted(grid)
    rows = []
    combos: list[dict] = [{}]
    for axis in axes:
        combos = [dict(c, **{axis: v}) for c in combos for v in grid[axis]]
    for combo in combos:
        if "hidden_dims" in combo:
            combo["hidden_dims"] = tuple(combo["hidden_dims"])
        cfg = replace(base_cfg, **combo)
        ckpt, _ = em_fit(train, valid, cfg)
        prepared = _prepare(valid if valid else train)
        f1 = _valid_f1(prepared, ckpt.gen, ckpt.inf, cfg)
        ev = evaluate_dataset(prepared, ckpt.gen, ckpt.inf, cfg, noise_seed=cfg.seed + 20_000)
        rows.append({**combo, "valid_f1": f1, "valid_elbo": ev["elbo"]})
    rows.sort(key=lambda r: r["valid_f1"], reverse=True)
    return rows
