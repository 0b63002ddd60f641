import argparse
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).parent / "src"))

from litho_sampler.bench import paired_wins, summarize_results
from litho_sampler.config import logger
from litho_sampler.errors import LithoSamplerError
from litho_sampler.repository import ArtifactRepository


def generate_results_report(results_csv: Path, reference: str = "ours") -> int:
    try:
        df = ArtifactRepository.read_csv(results_csv)
    except LithoSamplerError as e:
        print(f"Failed to generate report: {e.message}")
        return 1

    if df.empty:
        print("\n📊 NO RESULTS FOUND.")
        return 0

    summary = summarize_results(df, reference)
    seeds = df["seed"].nunique()

    print("\n" + "=" * 40)
    print("🚀 SAMPLING BENCHMARK REPORT")
    print("=" * 40)
    print(f"Runs            : {len(df)} ({seeds} seeds)")
    for _, row in summary.iterrows():
        line = (f"{row['method']:<12}: accuracy {row['accuracy']:.4f}  "
                f"litho {row['litho_clips']:.1f}  extras {row['extras']:.1f}")
        if "litho_ratio" in summary.columns:
            line += f"  (ratio acc {row['accuracy_ratio']:.3f}, litho {row['litho_ratio']:.3f})"
        print(line)

    others = [m for m in summary["method"] if m != reference]
    if reference in set(summary["method"]) and others:
        print(f"\n🏁 PAIRED WINS OF '{reference}' (accuracy):")
        for method in others:
            wins = paired_wins(df, reference, method)
            print(f"- vs {method:<12}: {len(wins)}/{seeds} seeds")

    print("=" * 40 + "\n")
    logger.debug(f"Report generated from {results_csv}")
    return 0


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Summarize a bench results CSV")
    parser.add_argument("results", help="results CSV written by `bench run`")
    parser.add_argument("--reference", default="ours", help="method the ratio row is relative to")
    args = parser.parse_args()

    sys.exit(generate_results_report(Path(args.results), args.reference))
