"""Sub-band cepstral countermeasures for audio anti-spoofing.

The package covers the full experimental loop: parametric sub-band LFCC
extraction, GMM log-likelihood-ratio countermeasures, detection metrics
(ROC-convex-hull EER, minimum normalized t-DCF, Bhattacharyya distance),
heat-map band selection by centre of mass, four score fusers (linear and
multinomial logistic, per-class GMMs, polynomial-kernel SVM) and synthetic
corpora for desk-scale reproduction of the whole pipeline.
"""

from .errors import BandcmError, ConfigurationError, DataError, TrainingError
from .frontend import (
    FrontendConfig,
    Waveform,
    extract_lfcc,
    frame_signal,
    linear_filterbank,
    load_wav,
    power_spectrum,
    write_wav,
)
from .gmm import CmPair, EmOptions, GmmModel, llr_score, log_likelihood, train_gmm
from .metrics import (
    LabeledScores,
    TdcfCosts,
    bhattacharyya,
    eer,
    fit_score_gaussians,
    min_tdcf,
)
from .subband import BandGrid, ComResult, HeatMap, build_heatmap, center_of_mass, resolution_sweep
from .fusion import (
    ScoreVectorSet,
    fuse,
    train_gmm_fusion,
    train_linear_fusion,
    train_multinomial_fusion,
    train_svm_poly,
)
from .corpus import ScenarioSpec, SynthSpec, Trial, parse_protocol, synth_corpus, synth_scenario

__version__ = "0.1.0"

__all__ = [
    "BandcmError",
    "BandGrid",
    "CmPair",
    "ComResult",
    "ConfigurationError",
    "DataError",
    "EmOptions",
    "FrontendConfig",
    "GmmModel",
    "HeatMap",
    "LabeledScores",
    "ScenarioSpec",
    "ScoreVectorSet",
    "SynthSpec",
    "TdcfCosts",
    "TrainingError",
    "Trial",
    "Waveform",
    "bhattacharyya",
    "build_heatmap",
    "center_of_mass",
    "eer",
    "extract_lfcc",
    "fit_score_gaussians",
    "frame_signal",
    "fuse",
    "linear_filterbank",
    "llr_score",
    "load_wav",
    "log_likelihood",
    "min_tdcf",
    "parse_protocol",
    "power_spectrum",
    "resolution_sweep",
    "synth_corpus",
    "synth_scenario",
    "train_gmm",
    "train_gmm_fusion",
    "train_linear_fusion",
    "train_multinomial_fusion",
    "train_svm_poly",
    "write_wav",
]
