"""Command-line entry point: ``python -m scripts.cli <subcommand> [flags]``."""
import argparse
import hashlib
import json
import logging
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from config import settings
from config.constants import FUTURE_WINDOW, IDT_MIN_FRAMES, PAST_WINDOW
from corpus.audio_features import MelConfig, load_wav, log_mel, save_features
from corpus.loader import features_path_for, load_corpus, read_manifest, split_corpus
from corpus.motion_data import load_motion_file, resample_to_25fps, save_motion_file
from corpus.synth_corpus import SynthConfig, generate_corpus
from evaluation.charts import create_embedding_scatter, create_trajectory_chart, write_chart
from evaluation.metrics import nearest_centroid_accuracy, silhouette
from evaluation.report import aggregate, evaluate_sequence, format_table, ground_truth_row, write_report
from models.generator import STYLE_MODES, GenerationConfig, MotionGenerator, rollout, style_transfer_rollout
from models.style_encoder import StyleEncoder, StyleEncoderConfig, cosine_sim, embeddings_frame, export_embeddings
from training.checkpoint import load_checkpoint, save_checkpoint
from training.gradcheck import SELECTORS, run_all
from training.trainer import TrainConfig, pretrain_style, train_generator

logger = logging.getLogger(__name__)

_HANDLERS = []


# ---------------------------
# Helpers
# ---------------------------
def banner(title: str):
    print(f"\n===== {title} =====")


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def config_hash(meta: dict) -> str:
    keys = ("gen_config", "style_config", "stats")
    blob = json.dumps({k: meta.get(k) for k in keys}, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def _configure_logging(run_dir: Path, level: str):
    _close_logging()
    root = logging.getLogger()
    root.setLevel(level.upper())
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s")
    for handler in (logging.StreamHandler(), logging.FileHandler(run_dir / "run.log", encoding="utf-8")):
        handler.setFormatter(fmt)
        root.addHandler(handler)
        _HANDLERS.append(handler)


def _close_logging():
    root = logging.getLogger()
    while _HANDLERS:
        handler = _HANDLERS.pop()
        root.removeHandler(handler)
        handler.close()


def _make_run_dir(args) -> Path:
    if args.run_dir is not None:
        run_dir = Path(args.run_dir)
    else:
        stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
        run_dir = Path(settings.RUNS_DIR) / f"{stamp}-{args.command}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _sessions(args):
    """Corpus sessions split into (train head, held-out tail) per --holdout-fraction."""
    sessions = load_corpus(args.manifest, args.features, threads=args.threads)
    if args.holdout_fraction == 0:
        return sessions, sessions
    return split_corpus(sessions, args.holdout_fraction)


def _output_dir(args, run_dir: Path, name: str) -> Path:
    out = Path(args.out) if getattr(args, "out", None) else run_dir / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pred_files(pred_dir) -> list[Path]:
    files = sorted(Path(pred_dir).glob("*.csv"))
    if not files:
        raise FileNotFoundError(f"no generated motion files in {pred_dir}")
    return files


# ---------------------------
# Subcommands
# ---------------------------
def cmd_synth(args, run_dir):
    banner("Synthesize Corpus")
    out = _output_dir(args, run_dir, "corpus")
    cfg = SynthConfig(n_speakers=args.speakers, sessions_per_speaker=args.sessions,
                      session_seconds=args.seconds, seed=args.seed)
    manifest = generate_corpus(cfg, out, threads=args.threads)
    print(f"{cfg.n_speakers * cfg.sessions_per_speaker} session(s) written, manifest: {manifest}")


def _extract_one(entry, out_dir, mel_cfg):
    feats = log_mel(load_wav(entry.audio_path), mel_cfg)
    path = features_path_for(out_dir, entry.session_id)
    save_features(path, feats)
    return entry.session_id, len(feats)


def cmd_extract_features(args, run_dir):
    banner("Extract Audio Features")
    out = _output_dir(args, run_dir, "features")
    mel_cfg = MelConfig(n_fft=args.n_fft, hop=args.hop, n_mels=args.n_mels, fmin=args.fmin, fmax=args.fmax,
                        sample_rate=args.sample_rate).validate()
    entries = read_manifest(args.manifest)
    done = Parallel(n_jobs=args.threads)(delayed(_extract_one)(e, out, mel_cfg) for e in entries)
    for session_id, n_frames in done:
        print(f"  {session_id}: {n_frames} frames")
    print(f"features written to {out}")


def cmd_pretrain_style(args, run_dir):
    banner("Style Pretraining")
    train, _ = _sessions(args)
    style_cfg = StyleEncoderConfig(window=args.window, style_dim=args.style_dim, n_layers=args.layers,
                                   n_heads=args.heads, ff_dim=args.ff_dim)
    train_cfg = TrainConfig(stage="style", epochs=args.epochs, batch_size=args.batch_pairs,
                            steps_per_epoch=args.steps_per_epoch, max_steps=args.max_steps, lr=args.lr,
                            seed=args.seed, precision=args.precision, tau=args.tau)
    ckpt = pretrain_style(train, style_cfg, train_cfg, log_path=run_dir / "train_log.jsonl",
                          progress=not args.no_progress)
    path = run_dir / "style.ckpt"
    save_checkpoint(path, ckpt)
    for epoch, loss in enumerate(ckpt.meta["epoch_losses"]):
        print(f"  epoch {epoch}: NT-Xent {loss:.4f}")
    print(f"style encoder checkpoint: {path}")


def cmd_train(args, run_dir):
    banner("Generator Training")
    train, _ = _sessions(args)
    style_ckpt = load_checkpoint(args.style_ckpt) if args.style_ckpt else None
    resume = load_checkpoint(args.resume) if args.resume else None
    gen_cfg = GenerationConfig(past=args.past, future=args.future, model_dim=args.model_dim,
                               style_dim=args.style_dim, lam=args.lam, lstm_layers=args.lstm_layers,
                               lstm_hidden=args.lstm_hidden, feature_dim=train[0].features.feature_dim)
    train_cfg = TrainConfig(stage="generator", epochs=args.epochs, batch_size=args.batch_size,
                            max_steps=args.max_steps, lr=args.lr, seed=args.seed, precision=args.precision,
                            lam=args.lam, stride=args.stride or args.future)
    ckpt = train_generator(train, style_ckpt, gen_cfg, train_cfg, resume=resume,
                           log_path=run_dir / "train_log.jsonl", progress=not args.no_progress)
    path = run_dir / "generator.ckpt"
    save_checkpoint(path, ckpt)
    for epoch, loss in enumerate(ckpt.meta["epoch_losses"]):
        print(f"  epoch {epoch}: loss {loss:.4f}")
    print(f"generator checkpoint: {path}")


def _seed_window(model: MotionGenerator, values: np.ndarray, args, index: int) -> np.ndarray:
    M = model.cfg.past
    if args.mean_seed:
        return np.zeros((M, values.shape[1]))
    seed = values[:M].copy()
    if args.seed_noise > 0:
        seed += np.random.default_rng([args.seed, index]).normal(scale=args.seed_noise, size=seed.shape)
    return model.stats.apply(seed)


def _generate_targets(args, sessions, M, N):
    """Runs long enough for at least one prediction step, with a stable output stem."""
    targets = []
    for session in sessions:
        if args.session and session.session_id not in args.session:
            continue
        runs = [r for r in session.runs() if len(r) >= M + N]
        for k, run in enumerate(runs):
            stem = session.session_id if len(runs) == 1 else f"{session.session_id}_r{k}"
            targets.append((stem, run))
    if not targets:
        raise ValueError(f"no held-out run is long enough for M+N={M + N} frames")
    return targets


def _write_generated(path: Path, seq, run, extra: dict):
    seq.speaker_id = run.speaker_id
    seq.session_id = run.session_id
    save_motion_file(path, seq, extra_meta={"start_frame": seq.start_frame, **extra})


def cmd_generate(args, run_dir):
    banner("Generate Motion")
    ckpt = load_checkpoint(args.ckpt)
    model = MotionGenerator.from_checkpoint(ckpt)
    _, test = _sessions(args)
    out = _output_dir(args, run_dir, "generated")
    M, N = model.cfg.past, model.cfg.future

    fixed_style = None
    if args.style_mode == "fixed" and args.style_ref:
        fixed_style = model.reference_style(resample_to_25fps(load_motion_file(args.style_ref)))

    header = {"config_hash": config_hash(ckpt.meta), "seed": args.seed, "style_mode": args.style_mode,
              "seed_noise": args.seed_noise, "mean_seed": int(args.mean_seed)}

    def one(index, stem, run):
        seed = _seed_window(model, run.motion.values, args, index)
        style = fixed_style
        if args.style_mode == "fixed" and style is None:
            style = model.style_of(seed)
        seq = rollout(model, seed, run.features, args.style_mode, style, start_frame=run.start_frame)
        _write_generated(out / f"{stem}.csv", seq, run, header)
        return stem, len(seq)

    targets = _generate_targets(args, test, M, N)
    done = Parallel(n_jobs=args.threads, prefer="threads")(
        delayed(one)(i, stem, run) for i, (stem, run) in enumerate(targets)
    )
    for stem, n_frames in done:
        print(f"  {stem}: {n_frames} frames")
    print(f"generated motion written to {out}")


def cmd_transfer_style(args, run_dir):
    banner("Style Transfer")
    ckpt = load_checkpoint(args.ckpt)
    model = MotionGenerator.from_checkpoint(ckpt)
    if model.style is None or not model.cfg.style_dim:
        raise ValueError("style transfer needs a generator trained with style conditioning (style_dim > 0)")
    _, test = _sessions(args)
    out = _output_dir(args, run_dir, "transfer")
    M, N = model.cfg.past, model.cfg.future

    reference = resample_to_25fps(load_motion_file(args.reference))
    ref_emb = model.reference_style(reference)
    contrast_emb = None
    if args.contrast_reference:
        contrast_emb = model.reference_style(resample_to_25fps(load_motion_file(args.contrast_reference)))

    header = {"config_hash": config_hash(ckpt.meta), "seed": args.seed, "style_mode": "fixed",
              "reference": Path(args.reference).name}
    report = {"reference": str(args.reference), "contrast_reference": _jsonable(args.contrast_reference),
              "sequences": []}

    for stem, run in _generate_targets(args, test, M, N):
        seed = model.stats.apply(run.motion.values[:M])
        seq = style_transfer_rollout(model, seed, run.features, reference, start_frame=run.start_frame)
        _write_generated(out / f"{stem}.csv", seq, run, header)

        entry = {"sequence": stem, "n_frames": len(seq), "cos_to_reference": []}
        report["sequences"].append(entry)
        if len(seq) < model.style.window:
            logger.warning("%s: %d frames is shorter than the style window, no similarity computed", stem, len(seq))
            continue

        _, E = model.style.window_embeddings(seq.values)
        to_ref = [cosine_sim(e, ref_emb) for e in E]
        entry["cos_to_reference"] = to_ref
        if contrast_emb is not None:
            to_contrast = [cosine_sim(e, contrast_emb) for e in E]
            entry["cos_to_contrast"] = to_contrast
            entry["closer_to_reference"] = float(np.mean(np.asarray(to_ref) > np.asarray(to_contrast)))
        print(f"  {stem}: mean cos to reference {np.mean(to_ref):.4f}")

    with open(out / "transfer_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    print(f"style transfer output written to {out}")


def cmd_evaluate(args, run_dir):
    banner("Evaluate")
    gt_sessions = {s.session_id: s for s in load_corpus(args.manifest, args.features, threads=args.threads)}
    encoder = StyleEncoder.from_checkpoint(load_checkpoint(args.style_ckpt)) if args.style_ckpt else None
    out = _output_dir(args, run_dir, "evaluation")

    pairs, warnings = [], []
    for path in _pred_files(args.pred_dir):
        pred = load_motion_file(path)
        gt = gt_sessions.get(pred.session_id)
        start = pred.start_frame
        if gt is None or start >= len(gt):
            warnings.append(f"{path.name}: no ground truth for session {pred.session_id!r} at frame {start}")
            logger.warning(warnings[-1])
            continue
        n = min(len(pred), len(gt) - start)
        if n < IDT_MIN_FRAMES:
            warnings.append(f"{path.name}: only {n} frame(s) overlap ground truth, need {IDT_MIN_FRAMES}")
            logger.warning(warnings[-1])
            continue
        pairs.append((path.stem, pred.values[:n], gt.motion.values[start:start + n], gt.features.frames[start:start + n]))

    if not pairs:
        raise ValueError("no generated sequence could be paired with ground truth")

    reports = Parallel(n_jobs=args.threads)(
        delayed(evaluate_sequence)(stem, p, g, f, encoder, args.normalize_head) for stem, p, g, f in pairs
    )
    reference = aggregate(
        [ground_truth_row(stem, g, f, args.normalize_head) for stem, _, g, f in pairs], name="GT"
    )
    agg = aggregate(reports)
    write_report(out, reports, agg, warnings, reference=reference)

    if args.plots:
        for stem, p, g, _ in pairs:
            write_chart(create_trajectory_chart(p, g, title=stem), out / "plots" / f"{stem}.html")

    print(format_table({"GT": reference, "aggregate": agg}))
    if warnings:
        print(f"{len(warnings)} sequence(s) skipped")
    print(f"report written to {out / 'report.json'}")


def cmd_embed(args, run_dir):
    banner("Style Embeddings")
    encoder = StyleEncoder.from_checkpoint(load_checkpoint(args.ckpt))
    train, test = _sessions(args)
    sessions = {"train": train, "test": test}[args.split]
    out = _output_dir(args, run_dir, "embeddings")
    stride = args.stride or encoder.window

    speakers, session_ids, t_index, blocks = [], [], [], []
    for session in sessions:
        for run in session.runs():
            if len(run) < encoder.window:
                continue
            starts, E = encoder.window_embeddings(run.motion.values, stride)
            speakers += [run.speaker_id] * len(E)
            session_ids += [run.session_id] * len(E)
            t_index += (run.start_frame + starts).tolist()
            blocks.append(E)
    E_gt = np.concatenate(blocks, axis=0)
    df = embeddings_frame(speakers, session_ids, t_index, E_gt)
    export_embeddings(out / "embeddings.csv", df)

    report = {
        "n_windows": len(E_gt),
        "silhouette_speaker": silhouette(E_gt, speakers),
        "silhouette_session": silhouette(E_gt, session_ids),
    }

    kinds = ["gt"] * len(E_gt)
    E_all, labels_all = E_gt, list(speakers)
    if args.pred_dir:
        p_speakers, p_sessions, p_t_index, p_blocks = [], [], [], []
        for path in _pred_files(args.pred_dir):
            pred = load_motion_file(path)
            if len(pred) < encoder.window:
                continue
            starts, E = encoder.window_embeddings(pred.values, stride)
            p_speakers += [pred.speaker_id] * len(E)
            p_sessions += [pred.session_id] * len(E)
            p_t_index += (pred.start_frame + starts).tolist()
            p_blocks.append(E)
        if p_blocks:
            E_pred = np.concatenate(p_blocks, axis=0)
            export_embeddings(out / "pred_embeddings.csv", embeddings_frame(p_speakers, p_sessions, p_t_index, E_pred))
            report["pred_nearest_centroid"] = nearest_centroid_accuracy(E_gt, speakers, E_pred, p_speakers)
            E_all = np.concatenate([E_gt, E_pred], axis=0)
            labels_all += p_speakers
            kinds += ["pred"] * len(E_pred)
        else:
            logger.warning("no generated sequence in %s covers a full style window", args.pred_dir)

    with open(out / "embed_report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    if args.plots:
        write_chart(create_embedding_scatter(E_all, labels_all, kinds), out / "embeddings.html")

    print(f"windows embedded: {report['n_windows']}")
    print(f"silhouette (speaker): {report['silhouette_speaker']:.4f}")
    print(f"silhouette (session): {report['silhouette_session']:.4f}")
    if "pred_nearest_centroid" in report:
        nc = report["pred_nearest_centroid"]
        print(f"predicted -> GT centroid accuracy: {nc['accuracy']:.4f} (chance {nc['chance']:.4f})")


def cmd_gradcheck(args, run_dir):
    banner("Gradient Check")
    results = run_all(args.seed, args.selectors)
    with open(run_dir / "gradcheck.json", "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in results], f, indent=2)

    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"  {r.selector:<18} max rel err {r.max_rel_error:.3e}  (< {r.threshold:.0e})  {status}")
    failed = [r.selector for r in results if not r.passed]
    if failed:
        raise RuntimeError(f"gradient check failed for {failed}")


COMMANDS = {
    "synth": cmd_synth,
    "extract-features": cmd_extract_features,
    "pretrain-style": cmd_pretrain_style,
    "train": cmd_train,
    "generate": cmd_generate,
    "transfer-style": cmd_transfer_style,
    "evaluate": cmd_evaluate,
    "embed": cmd_embed,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------
# Argument parsing
# ---------------------------
class CliParser(argparse.ArgumentParser):
    """Usage errors go to stderr as a single line and exit 2."""

    def error(self, message):
        self.exit(2, f"error: usage: {self.prog}: {message}\n")


def _add_corpus_args(p, holdout=True):
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--features", type=Path, default=None, help="directory of precomputed feature files")
    if holdout:
        p.add_argument("--holdout-fraction", type=float, default=0.2)


def build_parser():
    common = CliParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON file mirroring these flags")
    common.add_argument("--run-dir", type=Path, default=None)
    common.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    common.add_argument("--threads", type=int, default=settings.THREADS)
    common.add_argument("--log-level", default=settings.LOG_LEVEL)
    common.add_argument("--no-progress", action="store_true")

    parser = CliParser(prog="gazemotion", description="Speech-driven gaze and head motion")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    def add(name, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        subparsers[name] = p
        return p

    p = add("synth", "generate a synthetic corpus")
    p.add_argument("--speakers", type=int, default=4)
    p.add_argument("--sessions", type=int, default=2)
    p.add_argument("--seconds", type=float, default=60.0)
    p.add_argument("--out", type=Path, default=None)

    p = add("extract-features", "log-mel features for every session in a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--n-fft", type=int, default=400)
    p.add_argument("--hop", type=int, default=160)
    p.add_argument("--n-mels", type=int, default=26)
    p.add_argument("--fmin", type=float, default=50.0)
    p.add_argument("--fmax", type=float, default=7600.0)
    p.add_argument("--sample-rate", type=int, default=16000)

    p = add("pretrain-style", "contrastive style encoder pretraining")
    _add_corpus_args(p)
    p.add_argument("--style-dim", type=int, choices=[32, 64], default=64)
    p.add_argument("--window", type=int, default=PAST_WINDOW)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ff-dim", type=int, default=128)
    p.add_argument("--epochs", type=int, default=4)
    p.add_argument("--steps-per-epoch", type=int, default=25)
    p.add_argument("--batch-pairs", type=int, default=8)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")

    p = add("train", "generator training with a frozen style encoder")
    _add_corpus_args(p)
    p.add_argument("--style-ckpt", type=Path, default=None)
    p.add_argument("--style-dim", type=int, choices=[0, 32, 64], default=64)
    p.add_argument("--lambda", dest="lam", type=float, default=0.8)
    p.add_argument("--past", type=int, default=PAST_WINDOW)
    p.add_argument("--future", type=int, default=FUTURE_WINDOW)
    p.add_argument("--model-dim", type=int, default=64)
    p.add_argument("--lstm-layers", type=int, default=3)
    p.add_argument("--lstm-hidden", type=int, default=128)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--precision", choices=["f32", "f64"], default="f32")
    p.add_argument("--resume", type=Path, default=None)

    p = add("generate", "autoregressive rollout over held-out sessions")
    _add_corpus_args(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--style-mode", choices=list(STYLE_MODES), default="recompute")
    p.add_argument("--style-ref", type=Path, default=None, help="motion file whose style is used in fixed mode")
    p.add_argument("--seed-noise", type=float, default=0.0, help="Gaussian noise (deg) added to the seed window")
    p.add_argument("--mean-seed", action="store_true", help="seed with the corpus mean pose")
    p.add_argument("--session", nargs="*", default=None)
    p.add_argument("--out", type=Path, default=None)

    p = add("transfer-style", "rollout with the style of a reference motion")
    _add_corpus_args(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--contrast-reference", type=Path, default=None)
    p.add_argument("--session", nargs="*", default=None)
    p.add_argument("--out", type=Path, default=None)

    p = add("evaluate", "metrics of generated motion against ground truth")
    _add_corpus_args(p, holdout=False)
    p.add_argument("--pred-dir", type=Path, required=True)
    p.add_argument("--style-ckpt", type=Path, default=None)
    p.add_argument("--normalize-head", action="store_true")
    p.add_argument("--plots", action="store_true")
    p.add_argument("--out", type=Path, default=None)

    p = add("embed", "export style embeddings and clustering quality")
    _add_corpus_args(p)
    p.add_argument("--ckpt", type=Path, required=True)
    p.add_argument("--split", choices=["train", "test"], default="test")
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--pred-dir", type=Path, default=None)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--out", type=Path, default=None)

    p = add("gradcheck", "finite-difference gradient verification")
    p.add_argument("--selectors", nargs="*", choices=list(SELECTORS), default=list(SELECTORS))

    return parser, subparsers


def _config_overrides(path: Path, sp: argparse.ArgumentParser) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    if not isinstance(raw, dict):
        sp.error(f"--config {path}: expected a JSON object")

    names = {}
    for action in sp._actions:
        names[action.dest] = action.dest
        for opt in action.option_strings:
            names[opt.lstrip("-").replace("-", "_")] = action.dest

    unknown = [k for k in raw if k.replace("-", "_") not in names]
    if unknown:
        sp.error(f"unknown config key(s) in {path}: {unknown}")
    return {names[k.replace("-", "_")]: v for k, v in raw.items()}


def _release_required(subparsers) -> dict:
    # required flags may also come from --config, so they are checked after the merge
    released = {}
    for name, sp in subparsers.items():
        released[name] = [a for a in sp._actions if a.required]
        for action in released[name]:
            action.required = False
    return released


def _check_merged(sp, args, required):
    missing = [a.option_strings[0] for a in required if getattr(args, a.dest, None) is None]
    if missing:
        sp.error(f"the following arguments are required: {', '.join(missing)}")
    for action in sp._actions:
        if action.choices is None or not action.option_strings:
            continue
        value = getattr(args, action.dest, None)
        values = value if isinstance(value, list) else [value]
        bad = [v for v in values if v is not None and v not in action.choices]
        if bad:
            sp.error(f"argument {action.option_strings[0]}: invalid choice(s) {bad} (choose from {list(action.choices)})")


def parse_args(argv=None):
    parser, subparsers = build_parser()
    required = _release_required(subparsers)
    args = parser.parse_args(argv)
    sp = subparsers[args.command]
    if args.config is not None:
        sp.set_defaults(**_config_overrides(args.config, sp))
        args = parser.parse_args(argv)
    _check_merged(sp, args, required[args.command])
    return args


def dispatch(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else (0 if e.code is None else 2)

    try:
        run_dir = _make_run_dir(args)
        _configure_logging(run_dir, args.log_level)
        with open(run_dir / "resolved_config.json", "w", encoding="utf-8") as f:
            json.dump({k: _jsonable(v) for k, v in vars(args).items()}, f, indent=2, sort_keys=True)

        start = time.time()
        logger.info("running %s in %s", args.command, run_dir)
        COMMANDS[args.command](args, run_dir)
        print(f"\n{args.command} completed in {round(time.time() - start, 2)}s")
    except Exception as e:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    finally:
        _close_logging()
    return 0


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
