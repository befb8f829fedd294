"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one pass/fail
line per criterion.  Everything is generated and seeded; no external data
or services are required.
"""

import json
import math
import time
from contextlib import contextmanager

import numpy as np

from facereact.core import flatten, subtract_mean_frame
from facereact.dataset import load_manifest, save_manifest, scan, split
from facereact.distill import (
    TrainConfig,
    build_targets,
    init_network,
    loss_and_gradients,
    train,
)
from facereact.evaluate import (
    EvalConfig,
    MockClassifier,
    evaluate_method,
    majority_label,
    sample_frames,
)
from facereact.pca import ExpressionSpacePCA, select_rank
from facereact.pipeline import (
    MirrorResponder,
    PCAResponder,
    RetrievalChunkResponder,
    StudentChunkResponder,
    respond_chunk,
)
from facereact.retrieval import NearestReactionIndex
from facereact.service import EngineServer, ModelRegistry
from facereact.synthetic import generate_corpus

from seqtools import make_sequence, random_sequence
from test_service import ScriptedClient


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name}")
        raise
    print(f"[PASS] {name}")


def toy_training_set(seed, m=20, n_frames=2, n_kp=2):
    gen = np.random.default_rng(seed)
    data = gen.normal(size=(m, n_frames * n_kp * 3))
    seqs = [make_sequence(row.reshape(n_frames, n_kp, 3)) for row in data]
    return data, seqs


def test_pca_snapshot_matches_dense_oracle():
    """Snapshot eigendecomposition equals the brute-force covariance one (D=12)."""
    with criterion("pca-snapshot-correctness"):
        started = time.perf_counter()
        data, seqs = toy_training_set(seed=101, m=20, n_frames=2, n_kp=2)
        model = ExpressionSpacePCA(variance_threshold=1.0).fit(seqs)

        mean = data.mean(axis=0)
        centered = data - mean
        cov = centered.T @ centered / data.shape[0]
        oracle_evals, oracle_vecs = np.linalg.eigh(cov)
        order = np.argsort(oracle_evals)[::-1]
        oracle_evals = oracle_evals[order]
        oracle_vecs = oracle_vecs[:, order]

        k = model.k_star_
        assert np.max(np.abs(model.eigenvalues_ - oracle_evals[:k])) < 1e-8
        svals = np.linalg.svd(
            model.components_ @ oracle_vecs[:, :k], compute_uv=False
        )
        angles = np.arccos(np.clip(svals, -1.0, 1.0))
        assert np.max(angles) < 1e-6
        assert time.perf_counter() - started < 1.0


def test_rank_selection_rule():
    """Cumulative-mass rank rule: worked spectrum and the exact-boundary case."""
    with criterion("rank-selection-rule"):
        assert select_rank(np.array([0.5, 0.3, 0.15, 0.05]), 1.0, 0.95) == 3
        assert select_rank(np.array([0.95, 0.05]), 1.0, 0.95) == 1
        assert select_rank(np.array([0.5, 0.45, 0.05]), 1.0, 0.95) == 2
        assert select_rank(np.array([0.5, 0.3, 0.15, 0.05]), 1.0, 1.0) == 4


def test_projection_idempotence_and_full_rank_fixed_point():
    with criterion("projection-idempotence"):
        data, seqs = toy_training_set(seed=7, m=12, n_frames=3, n_kp=2)
        model = ExpressionSpacePCA(variance_threshold=0.9).fit(seqs)
        gen = np.random.default_rng(5)
        for _ in range(10):
            probe = make_sequence(gen.normal(size=(3, 2, 3)))
            once = model.project(probe)
            twice = model.project(once)
            assert np.max(np.abs(flatten(twice) - flatten(once))) < 1e-9

        full = ExpressionSpacePCA(variance_threshold=1.0).fit(seqs)
        for seq, row in zip(seqs, data):
            back = full.project(seq)
            assert np.max(np.abs(flatten(back) - row)) < 1e-5


def test_noise_statistics():
    """Coefficient deviation variance is sigma^2 * eigenvalue, +-5% over 10k trials."""
    with criterion("noise-statistics"):
        started = time.perf_counter()
        _, seqs = toy_training_set(seed=23, m=12, n_frames=2, n_kp=2)
        model = ExpressionSpacePCA(variance_threshold=1.0).fit(seqs)
        probe = seqs[3]

        for s in seqs[:3]:
            assert np.array_equal(
                flatten(model.respond(s, sigma=0.0)), flatten(model.project(s))
            )

        sigma = 0.1
        trials = 10_000
        gen = np.random.default_rng(2024)
        devs = np.empty((trials, model.k_star_))
        for i in range(trials):
            clean, noisy = model.respond_coefficients(probe, sigma=sigma, rng=gen)
            devs[i] = noisy - clean
        msd = np.mean(devs**2, axis=0)
        expected = sigma**2 * model.eigenvalues_
        assert np.max(np.abs(msd / expected - 1.0)) < 0.05
        assert time.perf_counter() - started < 30.0


def test_distillation_convergence_and_gradients():
    """Student reaches 1e-3 x initial MSE on the linear-teacher benchmark."""
    with criterion("distillation-convergence"):
        started = time.perf_counter()
        gen = np.random.default_rng(42)
        n_kp, frames, k, m = 12, 60, 8, 200  # student input dim = 12*30*3 = 1080
        dim = n_kp * frames * 3
        basis = np.linalg.qr(gen.normal(size=(dim, k)))[0]
        rows = gen.normal(size=(m, k)) @ basis.T
        windows = [make_sequence(r.reshape(frames, n_kp, 3)) for r in rows]
        teacher = ExpressionSpacePCA(variance_threshold=0.95).fit(windows)
        assert teacher.k_star_ == k
        pairs = build_targets(
            teacher, windows, sigma=0.1, rng=np.random.default_rng(1), student_window=30
        )
        assert pairs[0].input.dim == 1080
        cfg = TrainConfig(
            learning_rate=2.0, epochs=200, batch_size=32, seed=1, momentum=0.99
        )
        net, history = train(pairs, cfg, teacher.eigenvalues_)
        assert history[-1] < 1e-3 * history[0]

        # Analytic gradients vs central differences on the tiny network.
        tiny_rng = np.random.default_rng(3)
        tiny = init_network(
            input_dim=12,
            k_star=2,
            teacher_eigenvalues=tiny_rng.uniform(0.5, 2.0, size=2),
            n_kp=2,
            window=2,
            rng=tiny_rng,
        )
        X = tiny_rng.normal(size=(4, 12))
        Eps = tiny_rng.normal(size=(4, 2))
        Targets = tiny_rng.normal(size=(4, 12))
        _, analytic = loss_and_gradients(tiny, X, Eps, Targets)
        h = 1e-6
        for name in ("W1", "b1", "W2", "b2", "W3", "b3"):
            param = getattr(tiny, name)
            flat = param.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp = float(np.mean((tiny.forward_batch(X, Eps) - Targets) ** 2))
                flat[i] = orig - h
                lm = float(np.mean((tiny.forward_batch(X, Eps) - Targets) ** 2))
                flat[i] = orig
                approx = (lp - lm) / (2 * h)
                rel = abs(analytic[name].reshape(-1)[i] - approx) / max(
                    abs(approx), 1e-8
                )
                assert rel < 1e-4, f"{name}[{i}]: rel {rel}"
        assert time.perf_counter() - started < 120.0


def test_retrieval_oracle_equivalence():
    with criterion("retrieval-oracle-equivalence"):
        gen = np.random.default_rng(55)
        streams = [
            (f"vid-{i:02d}", random_sequence(gen, n_frames=150, n_kp=4, label="happy"))
            for i in range(5)
        ]
        index = NearestReactionIndex(window=60, stride=30).fit(streams)
        assert len(index) == 20

        for _ in range(50):
            query = random_sequence(gen, n_frames=60, n_kp=4)
            match = index.query(query)
            centered, _ = subtract_mean_frame(query)
            q = centered.as_array().reshape(-1)
            best = None
            for entry in index.entries_:
                dist = math.sqrt(float(np.sum((q - entry.centered) ** 2)))
                key = (dist, entry.source_id, entry.offset)
                if best is None or key < best:
                    best = key
            assert (match.distance, *match.entry.sort_key()) == best

        # Translation invariance and exact self-match.
        source_id, stream = streams[2]
        win = make_sequence(stream.as_array()[30:90])
        assert index.query(win).distance == 0.0
        shifted = make_sequence(win.as_array() + np.array([4.0, -2.0, 0.5]))
        match = index.query(shifted)
        assert match.entry.source_id == source_id and match.entry.offset == 30
        for _ in range(10):
            query = random_sequence(gen, n_frames=60, n_kp=4)
            base_key = index.query(query).entry.sort_key()
            moved = make_sequence(query.as_array() + np.array([1.0, 2.0, 3.0]))
            assert index.query(moved).entry.sort_key() == base_key


def test_pipeline_conservation_and_latency():
    """Every method conserves the frame count; p95 latency < 100 ms at D=26,280."""
    with criterion("pipeline-conservation-latency"):
        gen = np.random.default_rng(99)
        n_kp = 146
        windows = [random_sequence(gen, n_frames=60, n_kp=n_kp) for _ in range(30)]
        teacher = ExpressionSpacePCA().fit(windows)
        assert teacher.dim_ == 26280
        student = init_network(
            input_dim=n_kp * 30 * 3,
            k_star=teacher.k_star_,
            teacher_eigenvalues=teacher.eigenvalues_,
            n_kp=n_kp,
            window=30,
            rng=np.random.default_rng(1),
        )
        streams = [
            (f"vid-{i}", random_sequence(gen, n_frames=150, n_kp=n_kp, label="happy"))
            for i in range(5)
        ]
        index = NearestReactionIndex(window=60, stride=30).fit(streams)

        responders = [
            MirrorResponder(window=60),
            PCAResponder(teacher, sigma=0.1),
            StudentChunkResponder(student, sigma=0.1),
            RetrievalChunkResponder(index),
        ]
        rng = np.random.default_rng(7)
        for responder in responders:
            latencies = []
            for _ in range(40):
                chunk = random_sequence(gen, n_frames=responder.window, n_kp=n_kp)
                t0 = time.perf_counter()
                out = respond_chunk(responder, chunk, rng=rng)
                latencies.append((time.perf_counter() - t0) * 1e3)
                assert len(out) == len(chunk)
                assert out.n_kp == chunk.n_kp
            latencies.sort()
            p95 = latencies[int(math.ceil(0.95 * len(latencies))) - 1]
            assert p95 < 100.0, f"{responder.method}: p95 {p95:.1f} ms"


def test_dataset_split_and_manifest_round_trip(tmp_path):
    with criterion("dataset-split"):
        root = tmp_path / "corpus"
        generate_corpus(
            root,
            emotions=("happy", "laughing", "surprised"),
            clips_per_emotion=30,
            seed=17,
            n_kp=6,
        )
        manifest_a = split(scan(root), ratio=0.8, seed=42)
        manifest_b = split(scan(root), ratio=0.8, seed=42)
        assert manifest_a == manifest_b
        for label, counts in manifest_a.counts().items():
            assert counts == {"train": 24, "test": 6}, label
        path = tmp_path / "corpus.manifest.json"
        save_manifest(path, manifest_a)
        assert load_manifest(path) == manifest_a


def test_eval_harness_oracle(tmp_path):
    with criterion("eval-harness-oracle"):
        # Frame sampling formula at the stated lengths.
        assert sample_frames(1, 10) == [0] * 10
        assert sample_frames(10, 10) == list(range(10))
        assert sample_frames(91, 10) == [0, 10, 20, 30, 40, 50, 60, 70, 80, 90]
        assert sample_frames(180, 10) == [0, 19, 39, 59, 79, 99, 119, 139, 159, 179]

        # Majority and tie-break rules on constructed multisets.
        order = ("happy", "surprised", "laughing")
        assert majority_label(["happy"] * 6 + ["laughing"] * 3 + ["surprised"], order) == "happy"
        assert majority_label(["happy"] * 5 + ["laughing"] * 5, order) == "happy"
        assert majority_label(["laughing"] * 5 + ["happy"] * 5, ("laughing",) + order[:2]) == "laughing"
        assert majority_label(["surprised"], order) == "surprised"

        # End-to-end with the ground-truth mock: perfect diagonal.
        root = tmp_path / "corpus"
        generate_corpus(root, emotions=order, clips_per_emotion=5, seed=29, n_kp=8)
        manifest = split(scan(root), ratio=0.8, seed=1)
        report = evaluate_method(
            manifest,
            MirrorResponder(window=60),
            EvalConfig(emotion_set=order, workers=2),
            MockClassifier(),
            split="test",
            seed=0,
        )
        assert report["accuracy"] == 1.0
        assert report["n_excluded"] == 0
        counts = np.array(report["confusion_matrix"]["counts"])
        assert np.trace(counts) == counts.sum() == report["n_valid"]
        assert json.dumps(report)


def test_protocol_conformance():
    """Scripted clients: handshake, mirror equality, order violation, overflow,
    and two concurrent sessions against one server instance."""
    with criterion("protocol-conformance"):
        gen = np.random.default_rng(31)
        windows = [make_sequence(gen.normal(size=(20, 4, 3))) for _ in range(10)]
        teacher = ExpressionSpacePCA().fit(windows)
        server = EngineServer(ModelRegistry(pca=teacher), port=0).start()
        try:
            # 1. Handshake + mirror round-trip equality.
            client = ScriptedClient(server.port)
            client.hello(n_kp=5)
            ack = client.config("mirror", window=60)
            assert ack["chunks"] == 0
            coords = gen.normal(size=(60, 5, 3))
            client.send_frames(coords)
            msg = client.recv_type("response")
            assert msg["chunk"] == 0
            assert np.array_equal(np.array([f["p"] for f in msg["frames"]]), coords)
            client.close()

            # 2. Order violation: frame before config.
            rogue = ScriptedClient(server.port)
            rogue.hello(n_kp=5)
            rogue.send({"type": "frame", "t": 0.0, "p": [[0, 0, 0]] * 5})
            err = rogue.recv_type("error", skip=())
            assert err["code"] == "protocol"
            assert rogue.closed()

            # 3. Overflow: a burst far beyond the 10-chunk budget.
            burst = ScriptedClient(server.port)
            burst.hello(n_kp=2, fps=30)
            burst.config("mirror", window=5)
            burst.send_frames(gen.normal(size=(56, 2, 3)))
            codes = []
            while True:
                msg = burst.recv()
                if msg is None:
                    break
                if msg["type"] == "error":
                    codes.append(msg["code"])
            assert codes == ["overflow"]

            # 4. Two concurrent sessions with different methods.
            a = ScriptedClient(server.port)
            b = ScriptedClient(server.port)
            a.hello(n_kp=4)
            b.hello(n_kp=4)
            a.config("mirror", window=20)
            b.config("pca", sigma=0.0)
            coords_a = gen.normal(size=(20, 4, 3))
            coords_b = gen.normal(size=(20, 4, 3))
            for i in range(20):
                a.send({"type": "frame", "t": i / 30.0, "p": coords_a[i].tolist()})
                b.send({"type": "frame", "t": i / 30.0, "p": coords_b[i].tolist()})
            resp_a = a.recv_type("response")
            resp_b = b.recv_type("response")
            assert resp_a["chunk"] == 0 and resp_b["chunk"] == 0
            assert np.array_equal(
                np.array([f["p"] for f in resp_a["frames"]]), coords_a
            )
            expected = teacher.project(make_sequence(coords_b)).as_array()
            assert np.allclose(
                np.array([f["p"] for f in resp_b["frames"]]), expected, atol=1e-12
            )
            a.close()
            b.close()
        finally:
            server.stop()
