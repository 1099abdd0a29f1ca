"""Sequential latent-belief modeling of expert-call conversations."""

from .autodiff import AdamState, MlpSpec, adam_step, attention_pool, backward, finite_diff_check, mlp_forward
from .data import (
    Call,
    CompanyRecord,
    Exchange,
    FeatureVector,
    Scaler,
    SplitSpec,
    parse_dataset,
    serialize_dataset,
    split_dataset,
    standardize_features,
)
from .embed import EmbedderConfig, embed_dataset, llm_extract, mock_embed
from .evaluation import ConfusionCounts, CostModel, auc, classification_metrics, moic, roi
from .genmodel import GenParams, LatentPath, init_gen_params, sample_company, sample_status, synth_dataset
from .inference import InfParams, PosteriorStatus, infer_status, init_inf_params, reparam_sample
from .objective import LossBreakdown, bernoulli_ll, constraint_term, elbo, gaussian_loglik, kl_gaussian
from .predict import BeliefTrajectory, ThresholdPolicy, classify, predict_sequence, tune_threshold
from .training import Checkpoint, TrainConfig, em_fit, sweep

__version__ = "0.1.0"
