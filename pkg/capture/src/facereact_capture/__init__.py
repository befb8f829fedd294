"""Capture client for the facereact engine: webcam landmarks in, reactions out."""

from .client import EngineClient, EngineDisconnected, EngineError
from .kpjl import KpjlWriter, read_kpjl
from .landmarks import default_landmark_map, load_landmark_map, validate_landmark_map
from .select import FaceDetection, select_face
from .sources import CaptureTick, SyntheticLandmarkSource, make_source
from .viewer import CaptureConfig, LiveSession, record_clip

__version__ = "0.1.0"
