"""Counterfactual patient simulation and an uncertainty-aware diagnosis agent."""
import os as _os

# BLAS reads these at import time, so they must be set before numpy loads
if _os.environ.get("COUNTERFACT_DIAG_THREADS"):
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["COUNTERFACT_DIAG_THREADS"])

from .data import DiagnosisRecord, RecordBase, Vocabs, synth_generate
from .orchestrator import ExperimentConfig, train_agent, train_sl_baseline
from .simulator import Simulator

__all__ = ["DiagnosisRecord", "RecordBase", "Vocabs", "synth_generate", "ExperimentConfig",
           "train_agent", "train_sl_baseline", "Simulator"]
