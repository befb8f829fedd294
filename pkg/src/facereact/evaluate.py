"""Emotion-conveyance evaluation harness.

Protocol: render uniformly sampled frames of each generated response
video, ask a multimodal classifier (remote endpoint or deterministic local
mock) for one emotion label per frame, take the per-video majority, and
aggregate into accuracy plus a confusion matrix.  Zero-shot sends only the
frames; few-shot prepends one or more labeled exemplar images per class.

Every classifier transcript is kept on the record so reported tables can
be recomputed offline without re-querying the classifier.
"""

from __future__ import annotations

import base64
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import requests
from PIL import Image, ImageDraw

from .core import ExpressionSequence
from .exceptions import ClassifierError, LabelParseError
from .validation import check_sequence

DEFAULT_FRAMES_PER_VIDEO = 10
DEFAULT_WORKERS = 4
API_KEY_ENV = "FACEREACT_API_KEY"

DEFAULT_PROMPT_TEMPLATE = (
    "You are a helpful assistant generating a video emotion summary from "
    "{n_frames} frames of the same video. Classify each frame into one of "
    "{n_classes} emotions: {class_list}. Provide an output for each frame."
)


def sample_frames(n_total: int, k: int = DEFAULT_FRAMES_PER_VIDEO) -> list[int]:
    """k uniformly spaced frame indices over a video of n_total frames.

    index_i = floor(i * (n_total - 1) / (k - 1)); duplicates appear when the
    video is shorter than k frames.
    """
    if n_total < 1:
        raise ValueError("video has no frames")
    if k < 1:
        raise ValueError("k must be >= 1")
    if k == 1:
        return [0]
    return [i * (n_total - 1) // (k - 1) for i in range(k)]


# -- frame rendering ------------------------------------------------------


def sequence_extent(seq: ExpressionSequence, margin: float = 0.1):
    arr = seq.as_array()
    lo = arr[:, :, :2].min(axis=(0, 1))
    hi = arr[:, :, :2].max(axis=(0, 1))
    span = np.maximum(hi - lo, 1e-6)
    return lo - margin * span, hi + margin * span


def render_frame_image(points: np.ndarray, extent, size: int = 224) -> Image.Image:
    """Dot-plot rasterization of one keypoint frame (x right, y down)."""
    lo, hi = extent
    img = Image.new("L", (size, size), color=255)
    draw = ImageDraw.Draw(img)
    scale = (size - 1) / (hi - lo)
    xy = (points[:, :2] - lo) * scale
    r = max(size // 112, 1)
    for x, y in xy:
        draw.ellipse([x - r, y - r, x + r, y + r], fill=0)
    return img


def render_sequence_frames(
    seq: ExpressionSequence, indices: Sequence[int], size: int = 224
) -> list[bytes]:
    """PNG bytes for the selected frames, sharing one spatial extent."""
    extent = sequence_extent(seq)
    arr = seq.as_array()
    out = []
    for idx in indices:
        img = render_frame_image(arr[idx], extent, size=size)
        buf = io.BytesIO()
        img.save(buf, format="PNG")
        out.append(buf.getvalue())
    return out


# -- classifier transports -------------------------------------------------


class ClassificationRequest(NamedTuple):
    video_id: str
    system_prompt: str
    frames_png: list[bytes]
    exemplars: list[tuple[str, bytes]]  # (label, png) pairs, few-shot only
    true_label: Optional[str]  # carried for the oracle mock; never sent remotely


class MockClassifier:
    """Deterministic local stand-in for CI and offline runs.

    ``oracle`` mode echoes the ground-truth label for every frame;
    ``scripted`` mode replays a fixed video_id -> labels table.
    """

    def __init__(self, scripted: Optional[dict] = None):
        self.scripted = scripted

    def classify(self, request: ClassificationRequest) -> dict:
        if self.scripted is not None:
            labels = self.scripted[request.video_id]
        else:
            if request.true_label is None:
                raise ClassifierError("oracle mock needs the true label")
            labels = [request.true_label] * len(request.frames_png)
        return {"labels": list(labels), "transcript": "mock"}


class HTTPClassifier:
    """JSON-over-HTTP classifier endpoint.

    Request body: ``{"video_id", "system", "frames": [b64 PNG, ...],
    "exemplars": [{"label", "image"}, ...]}``.  The endpoint may answer
    either ``{"labels": [...]}`` or ``{"text": "..."}`` (one answer line
    per frame).  Credentials come from the environment and are sent as a
    bearer token, never logged or persisted.
    """

    def __init__(
        self,
        endpoint: str,
        api_key_env: str = API_KEY_ENV,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_s: float = 0.5,
        sleep: Callable[[float], None] = time.sleep,
        session: Optional[requests.Session] = None,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._sleep = sleep
        self._session = session or requests.Session()

    def classify(self, request: ClassificationRequest) -> dict:
        payload = {
            "video_id": request.video_id,
            "system": request.system_prompt,
            "frames": [base64.b64encode(b).decode("ascii") for b in request.frames_png],
            "exemplars": [
                {"label": label, "image": base64.b64encode(b).decode("ascii")}
                for label, b in request.exemplars
            ],
        }
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_s * 2 ** (attempt - 1))
            try:
                resp = self._session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = f"transport: {exc}"
                continue
            if resp.status_code >= 500:
                last_error = f"server error {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise ClassifierError(f"endpoint returned {resp.status_code}")
            try:
                return resp.json()
            except ValueError as exc:
                raise ClassifierError(f"non-JSON response: {exc}") from exc
        raise ClassifierError(f"gave up after {self.max_retries + 1} attempts: {last_error}")


def make_classifier(descriptor: str, **kwargs):
    """"mock" or an http(s) endpoint URL."""
    if descriptor == "mock":
        return MockClassifier()
    if descriptor.startswith("http://") or descriptor.startswith("https://"):
        return HTTPClassifier(descriptor, **kwargs)
    raise ValueError(f"unknown classifier descriptor {descriptor!r}")


# -- label parsing and majority vote ---------------------------------------


def _first_class_in_line(line: str, classes: Sequence[str]) -> Optional[str]:
    low = line.lower()
    best = None
    for cls in classes:
        pos = low.find(cls)
        if pos < 0:
            continue
        # Earliest mention wins; the longer name wins at equal position
        # ("happy to see you" vs "happy").
        key = (pos, -len(cls))
        if best is None or key < best[0]:
            best = (key, cls)
    return best[1] if best else None


def parse_frame_labels(
    text: str, classes: Sequence[str], k: int, strict: bool = False
) -> list[str]:
    """One label per frame answer; tolerant by default.

    Lenient mode accepts any response whose labeled lines number at least
    k (first k win); strict mode demands exactly k labeled lines.
    """
    classes = [c.lower() for c in classes]
    labels = []
    for line in text.splitlines():
        found = _first_class_in_line(line, classes)
        if found is not None:
            labels.append(found)
    if strict and len(labels) != k:
        raise LabelParseError(
            f"expected exactly {k} labeled lines, found {len(labels)}"
        )
    if len(labels) < k:
        raise LabelParseError(f"expected {k} frame labels, found {len(labels)}")
    return labels[:k]


def majority_label(frame_labels: Sequence[str], class_order: Sequence[str]) -> str:
    """Mode of the labels; ties resolve to the earliest class in class_order."""
    counts = {c: 0 for c in class_order}
    for label in frame_labels:
        counts[label] += 1
    best = max(counts.values())
    for cls in class_order:
        if counts[cls] == best:
            return cls
    raise ValueError("no labels given")  # unreachable for non-empty input


# -- records, config, per-video classification ------------------------------


@dataclass(frozen=True)
class EvalConfig:
    emotion_set: tuple[str, ...]
    frames_per_video: int = DEFAULT_FRAMES_PER_VIDEO
    mode: str = "zero_shot"
    exemplars: tuple[tuple[str, bytes], ...] = ()
    system_prompt_template: str = DEFAULT_PROMPT_TEMPLATE
    strict_parsing: bool = False
    image_size: int = 224
    workers: int = DEFAULT_WORKERS

    def __post_init__(self):
        if self.frames_per_video < 1:
            raise ValueError("frames_per_video must be >= 1")
        if self.mode not in ("zero_shot", "few_shot"):
            raise ValueError(f"mode must be zero_shot or few_shot, got {self.mode!r}")
        object.__setattr__(
            self, "emotion_set", tuple(e.lower() for e in self.emotion_set)
        )
        if self.mode == "few_shot":
            covered = {label.lower() for label, _ in self.exemplars}
            missing = set(self.emotion_set) - covered
            if missing:
                raise ValueError(
                    f"few_shot needs at least one exemplar per class; missing {sorted(missing)}"
                )

    def system_prompt(self) -> str:
        classes = list(self.emotion_set)
        class_list = ", or ".join([", ".join(classes[:-1]), classes[-1]]) if len(
            classes
        ) > 1 else classes[0]
        return self.system_prompt_template.format(
            n_frames=self.frames_per_video,
            n_classes=len(classes),
            class_list=class_list,
        )


@dataclass(frozen=True)
class EvalRecord:
    video_id: str
    true_label: str
    frame_labels: tuple[str, ...]
    majority: Optional[str]
    valid: bool
    reason: Optional[str] = None
    transcript: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "true_label": self.true_label,
            "frame_labels": list(self.frame_labels),
            "majority": self.majority,
            "valid": self.valid,
            "reason": self.reason,
            "transcript": self.transcript,
        }


class EvalItem(NamedTuple):
    video_id: str
    true_label: str
    sequence: ExpressionSequence


def classify_video(cfg: EvalConfig, item: EvalItem, classifier) -> EvalRecord:
    """Render, query, parse and majority-vote one video."""
    check_sequence(item.sequence)
    indices = sample_frames(len(item.sequence), cfg.frames_per_video)
    frames_png = render_sequence_frames(item.sequence, indices, size=cfg.image_size)
    request = ClassificationRequest(
        video_id=item.video_id,
        system_prompt=cfg.system_prompt(),
        frames_png=frames_png,
        exemplars=list(cfg.exemplars) if cfg.mode == "few_shot" else [],
        true_label=item.true_label,
    )
    try:
        answer = classifier.classify(request)
    except ClassifierError as exc:
        return EvalRecord(
            video_id=item.video_id,
            true_label=item.true_label,
            frame_labels=(),
            majority=None,
            valid=False,
            reason=str(exc),
        )
    transcript = json.dumps(answer, sort_keys=True)
    try:
        if "labels" in answer:
            labels = [str(l).lower() for l in answer["labels"]]
            unknown = [l for l in labels if l not in cfg.emotion_set]
            if unknown:
                raise LabelParseError(f"labels outside the class set: {unknown}")
            if len(labels) < cfg.frames_per_video or (
                cfg.strict_parsing and len(labels) != cfg.frames_per_video
            ):
                raise LabelParseError(
                    f"expected {cfg.frames_per_video} labels, got {len(labels)}"
                )
            labels = labels[: cfg.frames_per_video]
        elif "text" in answer:
            labels = parse_frame_labels(
                str(answer["text"]),
                cfg.emotion_set,
                cfg.frames_per_video,
                strict=cfg.strict_parsing,
            )
        else:
            raise LabelParseError("response has neither 'labels' nor 'text'")
    except LabelParseError as exc:
        return EvalRecord(
            video_id=item.video_id,
            true_label=item.true_label,
            frame_labels=(),
            majority=None,
            valid=False,
            reason=str(exc),
            transcript=transcript,
        )
    return EvalRecord(
        video_id=item.video_id,
        true_label=item.true_label,
        frame_labels=tuple(labels),
        majority=majority_label(labels, cfg.emotion_set),
        valid=True,
        transcript=transcript,
    )


def classify_videos(
    cfg: EvalConfig, items: Sequence[EvalItem], classifier
) -> list[EvalRecord]:
    """Classify concurrently (bounded pool); output order follows input order."""
    if cfg.workers <= 1 or len(items) <= 1:
        return [classify_video(cfg, item, classifier) for item in items]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(lambda it: classify_video(cfg, it, classifier), items))


# -- aggregation ------------------------------------------------------------


@dataclass
class ConfusionMatrix:
    classes: tuple[str, ...]
    counts: np.ndarray  # rows = true, cols = predicted

    @classmethod
    def from_pairs(cls, pairs, classes: Sequence[str]) -> "ConfusionMatrix":
        classes = tuple(classes)
        index = {c: i for i, c in enumerate(classes)}
        counts = np.zeros((len(classes), len(classes)), dtype=int)
        for true, pred in pairs:
            counts[index[true], index[pred]] += 1
        return cls(classes=classes, counts=counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts)) / self.total if self.total else 0.0

    def per_class_accuracy(self) -> dict:
        out = {}
        for i, cls in enumerate(self.classes):
            row = self.counts[i].sum()
            out[cls] = float(self.counts[i, i]) / row if row else None
        return out

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.tolist()}


def aggregate(
    records: Sequence[EvalRecord],
    annotator_tables: Optional[dict] = None,
    config: Optional[EvalConfig] = None,
) -> dict:
    """Fold records into the report: matrix, accuracies, exclusions, humans."""
    valid = [r for r in records if r.valid]
    excluded = [r for r in records if not r.valid]
    if not valid:
        raise ClassifierError("no valid records to aggregate")
    classes = config.emotion_set if config else tuple(
        sorted({r.true_label for r in valid})
    )
    matrix = ConfusionMatrix.from_pairs(
        [(r.true_label, r.majority) for r in valid], classes
    )
    report = {
        "n_videos": len(records),
        "n_valid": len(valid),
        "n_excluded": len(excluded),
        "excluded": [{"video_id": r.video_id, "reason": r.reason} for r in excluded],
        "accuracy": matrix.accuracy(),
        "per_class_accuracy": matrix.per_class_accuracy(),
        "confusion_matrix": matrix.to_dict(),
        "records": [r.to_dict() for r in records],
    }
    if config is not None:
        report["config"] = {
            "emotion_set": list(config.emotion_set),
            "frames_per_video": config.frames_per_video,
            "mode": config.mode,
            "strict_parsing": config.strict_parsing,
        }
    if annotator_tables:
        truth = {r.video_id: r.true_label for r in valid}
        per_annotator = {}
        for name, table in sorted(annotator_tables.items()):
            scored = [
                (vid, str(label).lower()) for vid, label in table.items() if vid in truth
            ]
            if not scored:
                per_annotator[name] = None
                continue
            hits = sum(1 for vid, label in scored if truth[vid] == label)
            per_annotator[name] = hits / len(scored)
        rated = [a for a in per_annotator.values() if a is not None]
        report["annotators"] = {
            "per_annotator_accuracy": per_annotator,
            "humans_mean": float(np.mean(rated)) if rated else None,
        }
    return report


def evaluate_method(
    manifest,
    responder,
    cfg: EvalConfig,
    classifier,
    split: str = "test",
    seed: Optional[int] = None,
) -> dict:
    """Full protocol: respond per chunk, classify the responses, aggregate.

    Each test clip gets its own response noise stream derived from
    (seed, clip index), so the report is reproducible regardless of
    worker interleaving.
    """
    from .pipeline import respond_sequence  # local import avoids a cycle

    entries = manifest.select(split=split, emotions=cfg.emotion_set)
    if not entries:
        raise ClassifierError(f"no {split} clips for classes {cfg.emotion_set}")
    items = []
    skipped = []
    for i, entry in enumerate(entries):
        seq = manifest.load_sequence(entry)
        rng = np.random.default_rng(None if seed is None else [seed, i])
        response = respond_sequence(responder, seq, rng=rng)
        if response is None:
            skipped.append(
                EvalRecord(
                    video_id=entry.path,
                    true_label=entry.label,
                    frame_labels=(),
                    majority=None,
                    valid=False,
                    reason=f"shorter than one {responder.window}-frame chunk",
                )
            )
            continue
        items.append(EvalItem(entry.path, entry.label, response))
    records = list(classify_videos(cfg, items, classifier)) + skipped
    report = aggregate(records, config=cfg)
    report["method"] = responder.method
    report["split"] = split
    report["seed"] = seed
    return report
