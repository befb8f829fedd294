"""Command-line surface of the capture client."""

from __future__ import annotations

import time
from pathlib import Path

import click

from .client import EngineDisconnected, EngineError
from .landmarks import default_landmark_map, load_landmark_map
from .sources import make_source
from .viewer import METHODS, CaptureConfig, LiveSession, record_clip


def _build_source(kind, camera, fps, landmark_map_path, seed, paced):
    landmark_map = (
        load_landmark_map(landmark_map_path) if landmark_map_path else None
    )
    return make_source(
        kind,
        camera_index=camera,
        fps=fps,
        landmark_map=landmark_map,
        seed=seed,
        paced=paced,
    )


@click.group(name="facereact-capture")
def main():
    """Webcam capture and live viewer client for the response engine."""


@main.command("live")
@click.option("--engine", default="127.0.0.1:7460", show_default=True)
@click.option("--method", default="mirror", show_default=True, type=click.Choice(METHODS))
@click.option("--sigma", default=None, type=float)
@click.option("--window", default=None, type=int, help="Override the method's natural chunk size.")
@click.option("--seed", default=None, type=int)
@click.option("--source", "source_kind", default="camera", show_default=True, type=click.Choice(["camera", "synthetic"]))
@click.option("--camera", default=0, show_default=True, type=int)
@click.option("--fps", default=30.0, show_default=True, type=float)
@click.option("--landmark-map", "landmark_map_path", default=None, type=click.Path(exists=True))
@click.option("--record", "record_path", default=None, type=click.Path(dir_okay=False), help="Record the user stream (responses go to *.response.kpjl).")
@click.option("--label", "record_label", default=None, help="Emotion label written into the recording header.")
@click.option("--duration", default=None, type=float, help="Stop after this many seconds of frames (default: run until q/Ctrl-C).")
@click.option("--headless", is_flag=True, help="No window; prints periodic status lines instead.")
def live_cmd(
    engine, method, sigma, window, seed, source_kind, camera, fps,
    landmark_map_path, record_path, record_label, duration, headless,
):
    """Stream your expressions to the engine and replay its reactions."""
    cfg = CaptureConfig(
        engine=engine,
        camera_index=camera,
        fps=fps,
        method=method,
        sigma=sigma,
        window=window,
        seed=seed,
        landmark_map_path=landmark_map_path,
        record_path=record_path,
        record_label=record_label,
    )
    try:
        source = _build_source(
            source_kind, camera, fps, landmark_map_path, seed or 0,
            paced=(source_kind == "synthetic"),
        )
    except RuntimeError as exc:
        raise click.ClickException(str(exc))

    on_tick = None
    shell = None
    if headless:
        last_print = [0.0]

        def on_tick(state):
            now = time.monotonic()
            if now - last_print[0] > 2.0:
                last_print[0] = now
                latency = (
                    f"{state.mean_latency_ms:.1f}ms"
                    if state.mean_latency_ms is not None
                    else "n/a"
                )
                click.echo(
                    f"method={state.method} sent={state.frames_sent} "
                    f"responses={state.chunks_received} latency={latency}"
                    + (" [no face]" if state.no_face else "")
                    + (f" [{state.banner}]" if state.banner else "")
                )
            return True
    session = LiveSession(cfg, source, on_tick=on_tick)
    if not headless:
        from .render_cv import CvShell

        try:
            shell = CvShell(session)
        except RuntimeError as exc:
            raise click.ClickException(f"{exc}; use --headless")
        session.on_tick = shell
    max_frames = int(duration * fps) if duration else None
    try:
        state = session.run(max_frames=max_frames)
    except (EngineError, EngineDisconnected, ConnectionError, OSError) as exc:
        raise click.ClickException(f"engine session failed: {exc}")
    except KeyboardInterrupt:
        click.echo("interrupted")
        return
    finally:
        if shell is not None:
            shell.close()
    click.echo(
        f"session over: {state.frames_sent} frames sent, "
        f"{state.chunks_received} responses"
        + (f", recorded {record_path}" if record_path else "")
    )


@main.command("record")
@click.option("--emotion", required=True, help="Label stored in the clip header and directory name.")
@click.option("--seconds", default=5.0, show_default=True, type=float)
@click.option("--clips", default=1, show_default=True, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--source", "source_kind", default="camera", show_default=True, type=click.Choice(["camera", "synthetic"]))
@click.option("--camera", default=0, show_default=True, type=int)
@click.option("--fps", default=30.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--landmark-map", "landmark_map_path", default=None, type=click.Path(exists=True))
@click.option("--no-countdown", is_flag=True)
def record_cmd(
    emotion, seconds, clips, out_dir, source_kind, camera, fps, seed,
    landmark_map_path, no_countdown,
):
    """Collect labeled clips into <out>/<emotion>/clip_*.kpjl (3-6 s each).

    Face the camera, centered in the frame; a short countdown precedes
    every take.
    """
    if not 3.0 <= seconds <= 6.0:
        click.echo("note: corpus clips are usually 3-6 s", err=True)
    emotion = emotion.strip().lower()
    target_dir = Path(out_dir) / emotion
    target_dir.mkdir(parents=True, exist_ok=True)
    existing = len(list(target_dir.glob("clip_*.kpjl")))
    paced = source_kind == "camera"
    for i in range(clips):
        try:
            source = _build_source(
                source_kind, camera, fps, landmark_map_path, seed + i, paced=False
            )
        except RuntimeError as exc:
            raise click.ClickException(str(exc))
        path = target_dir / f"clip_{existing + i:03d}.kpjl"
        countdown = None
        if not no_countdown:
            def countdown(remaining):
                click.echo(f"  stay centered and face the camera... {remaining}")
        written = record_clip(
            source,
            path,
            fps=fps,
            label=emotion,
            seconds=seconds,
            countdown=countdown,
            paced_countdown=paced,
        )
        if written == 0:
            raise click.ClickException("no face captured; nothing recorded")
        click.echo(f"{path}: {written} frames")


@main.command("check-map")
@click.argument("path", type=click.Path(exists=True, dir_okay=False), required=False)
def check_map_cmd(path):
    """Validate a landmark-map file (or print the default map's shape)."""
    try:
        indices = load_landmark_map(path) if path else default_landmark_map()
    except ValueError as exc:
        raise click.ClickException(str(exc))
    click.echo(
        f"{'default map' if path is None else path}: {len(indices)} unique indices, "
        f"range {min(indices)}..{max(indices)}"
    )


if __name__ == "__main__":
    main()
