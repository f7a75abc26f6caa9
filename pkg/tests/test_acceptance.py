import itertools
import json

import numpy as np
import pytest

from corpus.motion_data import load_motion_file
from models.style_encoder import StyleEncoder, cosine_sim
from scripts.cli import dispatch
from training.checkpoint import load_checkpoint

SEED = ["--seed", "0"]


def _read(path):
    return json.loads(path.read_text(encoding="utf-8"))


@pytest.fixture(scope="module")
def ablation(tmp_path_factory):
    """4 speakers × 2 sessions × 60 s; Base, SE-64 and SE-64 with the velocity term, all from one corpus."""
    root = tmp_path_factory.mktemp("ablation")
    corpus = root / "synth" / "corpus"
    manifest = corpus / "manifest.jsonl"
    common = ["--manifest", str(manifest), "--features", str(root / "features" / "features"), "--no-progress", *SEED]

    assert dispatch(["synth", "--run-dir", str(root / "synth"), "--speakers", "4", "--sessions", "2",
                     "--seconds", "60", *SEED]) == 0
    assert dispatch(["extract-features", "--run-dir", str(root / "features"), "--manifest", str(manifest)]) == 0
    assert dispatch(["pretrain-style", "--run-dir", str(root / "style"), *common, "--max-steps", "200"]) == 0
    style_ckpt = str(root / "style" / "style.ckpt")

    for name, style_dim, lam in [("Base", "0", "1.0"), ("SE-64", "64", "1.0"), ("SE-64-VEL", "64", "0.8")]:
        run = root / name
        style = ["--style-ckpt", style_ckpt] if style_dim != "0" else []
        assert dispatch(["train", "--run-dir", str(run / "train"), *common, *style, "--style-dim", style_dim,
                         "--lambda", lam, "--max-steps", "2000"]) == 0
        assert dispatch(["generate", "--run-dir", str(run / "generate"), *common,
                         "--ckpt", str(run / "train" / "generator.ckpt")]) == 0
        assert dispatch(["evaluate", "--run-dir", str(run / "evaluate"), *common,
                         "--pred-dir", str(run / "generate" / "generated"), "--style-ckpt", style_ckpt]) == 0

    assert dispatch(["embed", "--run-dir", str(root / "embed"), *common, "--ckpt", style_ckpt,
                     "--pred-dir", str(root / "SE-64-VEL" / "generate" / "generated")]) == 0
    return root, corpus, common


def _report(root, name):
    return _read(root / name / "evaluate" / "evaluation" / "report.json")


@pytest.mark.slow
class TestAblation:
    def test_style_conditioning_lowers_style_error(self, ablation):
        root, _, _ = ablation
        assert _report(root, "SE-64")["aggregate"]["ce"] < _report(root, "Base")["aggregate"]["ce"]

    def test_velocity_term_lowers_velocity_error(self, ablation):
        root, _, _ = ablation
        assert _report(root, "SE-64-VEL")["aggregate"]["vel"] < _report(root, "SE-64")["aggregate"]["vel"]

    def test_gaze_pattern_close_to_ground_truth(self, ablation):
        root, _, _ = ablation
        report = _report(root, "SE-64-VEL")
        assert abs(report["aggregate"]["fixation"] - report["ground_truth"]["fixation"]) <= 0.10
        assert report["aggregate"]["simScore"] >= 0.8

    def test_speakers_cluster_in_style_space(self, ablation):
        root, _, _ = ablation
        embed = _read(root / "embed" / "embeddings" / "embed_report.json")
        assert embed["silhouette_speaker"] > 0.2
        nc = embed["pred_nearest_centroid"]
        assert nc["accuracy"] >= 2 * nc["chance"]

    def test_transfer_follows_its_reference(self, ablation):
        root, corpus, common = ablation
        encoder = StyleEncoder.from_checkpoint(load_checkpoint(root / "style" / "style.ckpt"))
        refs = sorted((corpus / "motion").glob("spk*_ses01.csv"))
        emb = {p: encoder.window_embeddings(load_motion_file(p).values)[1].mean(axis=0) for p in refs}
        a, b = min(itertools.combinations(refs, 2), key=lambda ab: cosine_sim(emb[ab[0]], emb[ab[1]]))
        assert cosine_sim(emb[a], emb[b]) < 0.5

        gen_ckpt = str(root / "SE-64-VEL" / "train" / "generator.ckpt")
        for tag, ref, other in [("a", a, b), ("b", b, a)]:
            run_dir = root / "transfer" / tag
            assert dispatch(["transfer-style", "--run-dir", str(run_dir), *common, "--ckpt", gen_ckpt,
                             "--reference", str(ref), "--contrast-reference", str(other)]) == 0
            report = _read(run_dir / "transfer" / "transfer_report.json")
            closer = np.concatenate([
                np.asarray(s["cos_to_reference"]) > np.asarray(s["cos_to_contrast"])
                for s in report["sequences"] if s["cos_to_reference"]
            ])
            assert closer.size > 0
            assert closer.mean() >= 0.7
