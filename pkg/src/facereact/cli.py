"""Unified command-line surface for every offline operation plus the live service."""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import __version__
from .core import CORE_EMOTIONS, FULL_EMOTIONS, window as cut_windows
from .dataset import (
    describe_manifest,
    load_manifest,
    save_manifest,
    scan,
    split as split_dataset,
)
from .distill import SNN_MAGIC, StudentNetwork, TrainConfig, build_targets, train
from .evaluate import EvalConfig, evaluate_method, make_classifier
from .exceptions import FaceReactError
from .kpjl import FORMAT_NAME as KPJL_FORMAT, read_kpjl, read_kpjl_header, write_kpjl
from .pca import ESM_MAGIC, ExpressionSpacePCA
from .pipeline import METHODS, ResponderConfig, respond_sequence
from .retrieval import RIX_MAGIC, NearestReactionIndex
from .service import DEFAULT_BIND, serve as build_server

TRAIN_WINDOW = 60
TRAIN_STRIDE = 30


def emotion_tuple(text):
    return tuple(e.strip().lower() for e in text.split(",") if e.strip())


def fail(message: str):
    raise click.ClickException(message)


@click.group(name="facereact")
@click.version_option(__version__)
def main():
    """Nonverbal facial-response engine over 3-D keypoint sequences."""


@main.command("split-dataset")
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--ratio", default=0.8, show_default=True, type=float)
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option(
    "--emotions",
    default=",".join(FULL_EMOTIONS),
    show_default=True,
    help="Comma-separated closed label set accepted under --root.",
)
def split_dataset_cmd(root, ratio, seed, out, emotions):
    """Scan a KPJL corpus and materialize a per-emotion train/test split."""
    try:
        manifest = split_dataset(
            scan(root, emotions=emotion_tuple(emotions)), ratio=ratio, seed=seed
        )
    except FaceReactError as exc:
        fail(str(exc))
    save_manifest(out, manifest)
    info = describe_manifest(manifest)
    click.echo(
        f"{info['entries']} clips, {info['rejects']} rejects -> {out}"
    )
    for label, counts in sorted(info["counts"].items()):
        click.echo(f"  {label}: {counts.get('train', 0)} train / {counts.get('test', 0)} test")


def _training_windows(manifest, emotions, window, stride):
    streams = manifest.load_sequences(split="train", emotions=emotions)
    if not streams:
        fail(f"manifest has no train clips for emotions {sorted(emotions)}")
    windows = []
    for stream in streams:
        windows.extend(cut_windows(stream, window, stride))
    if not windows:
        fail(f"no train clip is long enough for a {window}-frame window")
    return windows


@main.command("fit-pca")
@click.option("--train", "manifest_path", required=True, type=click.Path(exists=True))
@click.option(
    "--emotions", default=",".join(CORE_EMOTIONS), show_default=True
)
@click.option("--threshold", default=0.95, show_default=True, type=float)
@click.option("--sigma", default=0.1, show_default=True, type=float)
@click.option("--window", default=TRAIN_WINDOW, show_default=True, type=int)
@click.option("--stride", default=TRAIN_STRIDE, show_default=True, type=int)
@click.option(
    "--per-emotion",
    is_flag=True,
    help="Fit one expression space per emotion (<out stem>.<emotion>.esm) "
    "instead of the default pooled space.",
)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def fit_pca_cmd(manifest_path, emotions, threshold, sigma, window, stride, per_emotion, out):
    """Fit the PCA expression space over train-split windows."""
    manifest = load_manifest(manifest_path)
    wanted = emotion_tuple(emotions)
    try:
        if per_emotion:
            for emotion in wanted:
                windows = _training_windows(manifest, (emotion,), window, stride)
                model = ExpressionSpacePCA(
                    variance_threshold=threshold, sigma=sigma
                ).fit(windows)
                path = Path(out).with_suffix(f".{emotion}.esm")
                model.save(path)
                click.echo(
                    f"{emotion}: {len(windows)} windows -> k*={model.k_star_} ({path})"
                )
        else:
            windows = _training_windows(manifest, wanted, window, stride)
            model = ExpressionSpacePCA(variance_threshold=threshold, sigma=sigma).fit(
                windows
            )
            model.save(out)
            click.echo(
                f"{len(windows)} windows, D={model.dim_} -> k*={model.k_star_} ({out})"
            )
    except FaceReactError as exc:
        fail(str(exc))


@main.command("train-nn")
@click.option("--teacher", required=True, type=click.Path(exists=True))
@click.option("--train", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--emotions", default=",".join(CORE_EMOTIONS), show_default=True)
@click.option("--epochs", default=200, show_default=True, type=int)
@click.option("--lr", default=1e-3, show_default=True, type=float)
@click.option("--batch-size", default=16, show_default=True, type=int)
@click.option("--momentum", default=0.0, show_default=True, type=float)
@click.option("--sigma-train", default=None, type=float, help="Teacher noise while building targets (default: the teacher's sigma).")
@click.option("--seed", default=7, show_default=True, type=int)
@click.option("--stride", default=TRAIN_STRIDE, show_default=True, type=int)
@click.option("--activation", default="identity", show_default=True, type=click.Choice(["identity", "tanh"]))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def train_nn_cmd(
    teacher, manifest_path, emotions, epochs, lr, batch_size, momentum,
    sigma_train, seed, stride, activation, out,
):
    """Distill the PCA responder into the student network."""
    try:
        space = ExpressionSpacePCA.load(teacher)
        manifest = load_manifest(manifest_path)
        windows = _training_windows(
            manifest, emotion_tuple(emotions), space.window_, stride
        )
        cfg = TrainConfig(
            learning_rate=lr,
            epochs=epochs,
            batch_size=batch_size,
            sigma_train=sigma_train,
            seed=seed,
            momentum=momentum,
        )
        pairs = build_targets(
            space, windows, sigma=cfg.sigma_train, rng=np.random.default_rng(seed)
        )
        net, history = train(pairs, cfg, space.eigenvalues_, activation=activation)
        net.save(out)
    except FaceReactError as exc:
        fail(str(exc))
    click.echo(
        f"{len(pairs)} pairs, loss {history[0]:.6g} -> {history[-1]:.6g} "
        f"over {len(history)} epochs ({out})"
    )


@main.command("build-index")
@click.option("--train", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--emotions", default=",".join(CORE_EMOTIONS), show_default=True)
@click.option("--window", default=TRAIN_WINDOW, show_default=True, type=int)
@click.option("--stride", default=TRAIN_STRIDE, show_default=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def build_index_cmd(manifest_path, emotions, window, stride, out):
    """Build the nearest-neighbor reaction index from train-split streams."""
    manifest = load_manifest(manifest_path)
    entries = manifest.select(split="train", emotions=emotion_tuple(emotions))
    if not entries:
        fail(f"manifest has no train clips for emotions {emotions}")
    streams = [(e.path, manifest.load_sequence(e)) for e in entries]
    try:
        index = NearestReactionIndex(window=window, stride=stride).fit(streams)
    except FaceReactError as exc:
        fail(str(exc))
    index.save(out)
    click.echo(f"{len(index)} windows from {len(streams)} streams ({out})")


@main.command("respond")
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True))
@click.option("--sigma", default=None, type=float)
@click.option("--seed", default=None, type=int)
@click.option("--window", default=None, type=int, help="Chunk size (mirror only; models fix their own).")
@click.option("--in", "input_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def respond_cmd(method, model_path, sigma, seed, window, input_path, out):
    """Respond to a recorded KPJL stream, chunk by tumbling chunk."""
    try:
        responder = ResponderConfig(
            method=method,
            window=window,
            sigma=sigma,
            model_path=model_path,
            seed=seed,
        ).load()
        seq = read_kpjl(input_path)
        response = respond_sequence(responder, seq, rng=np.random.default_rng(seed))
    except FaceReactError as exc:
        fail(str(exc))
    if response is None:
        fail(
            f"{input_path} has {len(read_kpjl(input_path))} frames; "
            f"{method} needs at least {responder.window}"
        )
    write_kpjl(out, response)
    click.echo(
        f"{method}: {len(response)} response frames "
        f"({len(seq) - len(response)} trailing input frames unconsumed) -> {out}"
    )


@main.command("serve")
@click.option("--bind", default=DEFAULT_BIND, show_default=True, envvar="FACEREACT_BIND")
@click.option("--pca", default=None, type=click.Path(exists=True))
@click.option("--nn", default=None, type=click.Path(exists=True))
@click.option("--index", "retrieval", default=None, type=click.Path(exists=True))
@click.option("--overflow-chunks", default=10, show_default=True, type=int)
@click.option("--stats-every", default=10, show_default=True, type=int)
def serve_cmd(bind, pca, nn, retrieval, overflow_chunks, stats_every):
    """Host live sessions over the newline-delimited JSON wire protocol."""
    try:
        server = build_server(
            bind=bind,
            pca=pca,
            nn=nn,
            retrieval=retrieval,
            overflow_chunks=overflow_chunks,
            stats_every=stats_every,
        )
        server.start()
    except (FaceReactError, OSError, ValueError) as exc:
        fail(str(exc))
    click.echo(
        f"listening on {server.host}:{server.port} "
        f"(methods: {', '.join(server.registry.available_methods())})"
    )
    server.serve_forever()


@main.command("eval")
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True))
@click.option("--split", default="test", show_default=True, type=click.Choice(["train", "test"]))
@click.option("--method", required=True, type=click.Choice(METHODS))
@click.option("--model", "model_path", default=None, type=click.Path(exists=True))
@click.option("--classes", default=",".join(CORE_EMOTIONS), show_default=True)
@click.option("--mode", default="zero_shot", show_default=True, type=click.Choice(["zero_shot", "few_shot"]))
@click.option(
    "--exemplar",
    "exemplars",
    multiple=True,
    metavar="LABEL=IMAGE",
    help="Few-shot exemplar image per class (repeatable).",
)
@click.option("--classifier", default="mock", show_default=True, help='"mock" or an http(s) endpoint URL.')
@click.option("--frames-per-video", default=10, show_default=True, type=int)
@click.option("--sigma", default=None, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--strict-parsing", is_flag=True)
@click.option("--workers", default=4, show_default=True, type=int)
@click.option("--annotators", default=None, type=click.Path(exists=True), help="JSON file {annotator: {video_id: label}} for the human baseline.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def eval_cmd(
    manifest_path, split, method, model_path, classes, mode, exemplars,
    classifier, frames_per_video, sigma, seed, strict_parsing, workers,
    annotators, out,
):
    """Run the emotion-conveyance protocol and write the JSON report."""
    exemplar_blobs = []
    for spec_text in exemplars:
        label, _, image_path = spec_text.partition("=")
        if not image_path:
            fail(f"--exemplar wants LABEL=IMAGE, got {spec_text!r}")
        exemplar_blobs.append((label.lower(), Path(image_path).read_bytes()))
    try:
        cfg = EvalConfig(
            emotion_set=emotion_tuple(classes),
            frames_per_video=frames_per_video,
            mode=mode,
            exemplars=tuple(exemplar_blobs),
            strict_parsing=strict_parsing,
            workers=workers,
        )
        responder = ResponderConfig(
            method=method, sigma=sigma, model_path=model_path, seed=seed
        ).load()
        manifest = load_manifest(manifest_path)
        report = evaluate_method(
            manifest,
            responder,
            cfg,
            make_classifier(classifier),
            split=split,
            seed=seed,
        )
        if annotators:
            with open(annotators, "r", encoding="utf-8") as fh:
                tables = json.load(fh)
            from .evaluate import EvalRecord, aggregate  # recompute with humans

            records = [
                EvalRecord(
                    video_id=r["video_id"],
                    true_label=r["true_label"],
                    frame_labels=tuple(r["frame_labels"]),
                    majority=r["majority"],
                    valid=r["valid"],
                    reason=r["reason"],
                    transcript=r["transcript"],
                )
                for r in report["records"]
            ]
            report.update(aggregate(records, annotator_tables=tables, config=cfg))
    except (FaceReactError, ValueError) as exc:
        fail(str(exc))
    with open(out, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    click.echo(
        f"{method} on {report['n_valid']}/{report['n_videos']} videos: "
        f"accuracy {report['accuracy'] * 100:.2f}% -> {out}"
    )


@main.command("inspect")
@click.argument("artifact", type=click.Path(exists=True, dir_okay=False))
def inspect_cmd(artifact):
    """Pretty-print the header of any engine artifact."""
    path = Path(artifact)
    try:
        info = _inspect(path)
    except FaceReactError as exc:
        fail(str(exc))
    for key, value in info.items():
        click.echo(f"{key}: {value}")


def _inspect(path: Path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == ESM_MAGIC:
        return ExpressionSpacePCA.load(path).describe()
    if magic == SNN_MAGIC:
        return StudentNetwork.load(path).describe()
    if magic == RIX_MAGIC:
        return NearestReactionIndex.load(path).describe()
    text = path.read_text(encoding="utf-8", errors="replace")
    first_line = text.splitlines()[0] if text else ""
    try:
        head = json.loads(first_line)
    except json.JSONDecodeError:
        head = None
    if isinstance(head, dict) and head.get("format") == KPJL_FORMAT:
        header = read_kpjl_header(path)
        n_frames = max(len(text.splitlines()) - 1, 0)
        return {
            "kind": "keypoint-sequence",
            "n_kp": header["n_kp"],
            "fps": header["fps"],
            "label": header["label"],
            "frames": n_frames,
        }
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        fail(f"{path}: not a recognized artifact")
    if isinstance(doc, dict) and doc.get("format") == "facereact-manifest":
        return describe_manifest(load_manifest(path))
    if isinstance(doc, dict) and "confusion_matrix" in doc:
        return {
            "kind": "eval-report",
            "method": doc.get("method"),
            "split": doc.get("split"),
            "videos": doc.get("n_videos"),
            "valid": doc.get("n_valid"),
            "accuracy": doc.get("accuracy"),
        }
    fail(f"{path}: not a recognized artifact")


if __name__ == "__main__":
    main()
