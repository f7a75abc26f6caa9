"""End-to-end run on a synthetic corpus: synth -> features -> style -> generator -> generate -> evaluate -> embed.

    python -m scripts.run_full_pipeline [--ablation] [--quick]
"""
import argparse
import json
import subprocess
import sys
import time
from datetime import datetime
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv

from config import settings
from evaluation.report import EvalReport, format_table, read_report

load_dotenv()

# name, style_dim, lambda
VARIANTS = [
    ("Base", 0, 1.0),
    ("SE-32", 32, 1.0),
    ("SE-64", 64, 1.0),
    ("SE-64-VEL", 64, 0.8),
]


def run_step(name, *cli_args):
    print(f"\n=== {name} ===")
    start = time.time()
    result = subprocess.run([sys.executable, "-m", "scripts.cli", *map(str, cli_args)], capture_output=True, text=True)
    if result.returncode != 0:
        print(result.stderr)
        raise RuntimeError(f"{name} failed.")
    print(result.stdout)
    print(f"{name} completed in {round(time.time() - start, 2)}s")


def print_summary(root: Path, names):
    print("\n=== FINAL SUMMARY ===")
    rows = {}
    for name in names:
        report = read_report(root / name / "evaluate" / "evaluation" / "report.json")
        if "GT" not in rows and "ground_truth" in report:
            rows["GT"] = EvalReport.from_dict(report["ground_truth"])
        rows[name] = EvalReport.from_dict(report["aggregate"])
    print(format_table(rows))

    embed = root / "embed" / "embeddings" / "embed_report.json"
    if embed.exists():
        with open(embed, "r", encoding="utf-8") as f:
            print(pd.Series(json.load(f)).to_string())


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--ablation", action="store_true", help="train and evaluate every style/loss variant")
    parser.add_argument("--quick", action="store_true", help="tiny corpus and few steps")
    parser.add_argument("--root", type=Path, default=None)
    parser.add_argument("--seed", type=int, default=settings.DEFAULT_SEED)
    args = parser.parse_args()

    root = args.root or Path(settings.RUNS_DIR) / f"{datetime.now():%Y%m%d-%H%M%S}-pipeline"
    seed = ["--seed", args.seed]
    seconds, style_steps, gen_steps = (8, 20, 30) if args.quick else (60, 200, 2000)

    print("\n🚀 Starting Full Pipeline Run")
    start_time = time.time()

    corpus = root / "synth" / "corpus"
    manifest = corpus / "manifest.jsonl"
    features = root / "features" / "features"
    corpus_args = ["--manifest", manifest, "--features", features]

    run_step("Synthesize Corpus", "synth", "--run-dir", root / "synth", "--seconds", seconds, *seed)
    run_step("Extract Features", "extract-features", "--run-dir", root / "features", "--manifest", manifest)
    run_step("Pretrain Style Encoder", "pretrain-style", "--run-dir", root / "style", *corpus_args,
             "--max-steps", style_steps, "--no-progress", *seed)
    style_ckpt = root / "style" / "style.ckpt"

    variants = VARIANTS if args.ablation else [VARIANTS[-1]]
    for name, style_dim, lam in variants:
        run = root / name
        style = ["--style-ckpt", style_ckpt] if style_dim else []
        if style_dim and style_dim != 64:
            run_step(f"Pretrain Style Encoder ({style_dim})", "pretrain-style", "--run-dir", run / "style",
                     *corpus_args, "--style-dim", style_dim, "--max-steps", style_steps, "--no-progress", *seed)
            style = ["--style-ckpt", run / "style" / "style.ckpt"]
        run_step(f"Train {name}", "train", "--run-dir", run / "train", *corpus_args, *style,
                 "--style-dim", style_dim, "--lambda", lam, "--max-steps", gen_steps, "--no-progress", *seed)
        run_step(f"Generate {name}", "generate", "--run-dir", run / "generate", *corpus_args,
                 "--ckpt", run / "train" / "generator.ckpt", *seed)
        run_step(f"Evaluate {name}", "evaluate", "--run-dir", run / "evaluate", *corpus_args,
                 "--pred-dir", run / "generate" / "generated", "--style-ckpt", style_ckpt)

    last = variants[-1][0]
    stride = ["--stride", 5] if args.quick else []
    run_step("Embed", "embed", "--run-dir", root / "embed", *corpus_args, "--ckpt", style_ckpt, *stride,
             "--pred-dir", root / last / "generate" / "generated")

    print_summary(root, [v[0] for v in variants])

    print(f"\n✅ Pipeline finished in {round(time.time() - start_time, 2)} seconds")


if __name__ == "__main__":
    main()
