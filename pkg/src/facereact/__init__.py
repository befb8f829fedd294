"""Real-time nonverbal facial-response engine over 3-D keypoint sequences."""

from .core import (
    CORE_EMOTIONS,
    DEFAULT_FPS,
    DEFAULT_N_KP,
    FULL_EMOTIONS,
    EmotionLabel,
    ExpressionSequence,
    KeypointFrame,
    flatten,
    subtract_mean_frame,
    unflatten,
    window,
    window_count,
)
from .dataset import (
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    save_manifest,
    scan,
    split,
    verify_manifest,
)
from .distill import (
    DistillPair,
    StudentNetwork,
    StudentResponder,
    TrainConfig,
    build_targets,
    respond_nn,
)
from .evaluate import (
    ConfusionMatrix,
    EvalConfig,
    EvalItem,
    EvalRecord,
    HTTPClassifier,
    MockClassifier,
    aggregate,
    classify_video,
    evaluate_method,
    majority_label,
    sample_frames,
)
from .exceptions import (
    ArtifactFormatError,
    ClassifierError,
    DatasetError,
    DegenerateDataError,
    DimensionError,
    EmptyIndexError,
    FaceReactError,
    FitError,
    LabelParseError,
    ProtocolError,
    TrainingError,
)
from .kpjl import read_kpjl, write_kpjl
from .pca import ExpressionSpacePCA, NoiseSpec
from .pipeline import (
    METHODS,
    MirrorResponder,
    ResponderConfig,
    ResponseSession,
    respond_chunk,
    respond_sequence,
)
from .retrieval import NearestReactionIndex, RetrievalMatch
from .service import EngineServer, ModelRegistry, serve

__version__ = "0.1.0"
