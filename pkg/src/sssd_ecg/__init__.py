"""Conditional 12-lead ECG synthesis with structured state-space diffusion,
GAN baselines, and a synthetic-data evaluation harness."""

from .data import (Dataset, EcgRecord, LabelVocabulary, encode_labels,
                   decode_labels, load_dataset, make_toy_corpus, save_dataset)
from .diffusion import (NoiseSchedule, ancestral_sample, build_schedule,
                        denoising_loss, forward_sample)
from .leads import (check_lead_consistency, project_to_8_leads,
                    reconstruct_12_leads)
from .model import SssdEcg, SssdEcgConfig, generate_dataset_copy

__all__ = [
    "Dataset", "EcgRecord", "LabelVocabulary", "encode_labels",
    "decode_labels", "load_dataset", "make_toy_corpus", "save_dataset",
    "NoiseSchedule", "ancestral_sample", "build_schedule", "denoising_loss",
    "forward_sample", "check_lead_consistency", "project_to_8_leads",
    "reconstruct_12_leads", "SssdEcg", "SssdEcgConfig",
    "generate_dataset_copy",
]

__version__ = "0.1.0"
