"""Memory-bounded adaptive kNN classification for drifting data streams."""

from .adapt import (ActiveTinyKNN, CondensingInTimeKNN, EngineConfig, HybridTinyKNN,
                    StepOutcome, make_engine)
from .cdt import CusumConfig, Detection, GeneralizedCusum, brute_force_g
from .core import (BoundedSampleStore, EmptyKnowledgeError, LabeledSample, MemoryLedger,
                   ProtocolError, memory_bytes, memory_footprint)
from .features import (AudioClip, ConvFilterBank, SpectrogramFeatureExtractor,
                       random_filter_bank)
from .knn import TinyKNNClassifier, condense
from .stream import DriftScenario, aggregate_runs, run_test_then_train, smooth_accuracy

__version__ = "0.1.0"

__all__ = [
    "ActiveTinyKNN", "AudioClip", "BoundedSampleStore", "CondensingInTimeKNN",
    "ConvFilterBank", "CusumConfig", "Detection", "DriftScenario", "EmptyKnowledgeError",
    "EngineConfig", "GeneralizedCusum", "HybridTinyKNN", "LabeledSample", "MemoryLedger",
    "ProtocolError", "SpectrogramFeatureExtractor", "StepOutcome", "TinyKNNClassifier",
    "aggregate_runs", "brute_force_g", "condense", "make_engine", "memory_bytes",
    "memory_footprint", "random_filter_bank", "run_test_then_train", "smooth_accuracy",
]
