"""Compare acquisition strategies on the synthetic blob pool and print a table.

    python3 scripts/run_desk_experiment.py --config configs/desk.json
    python3 scripts/run_desk_experiment.py --config configs/desk_noisy.json --records out.jsonl
"""
import argparse
import json
import logging
import time
from pathlib import Path

from ncal.io import write_records
from ncal.loop import STRATEGIES, ProtocolConfig, run_experiment, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=Path(__file__).parents[1] / "configs" / "desk.json")
    ap.add_argument("--strategies", nargs="+", default=list(STRATEGIES), choices=STRATEGIES)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--records", type=Path, help="write per-cycle JSON lines here")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)

    config = ProtocolConfig.from_dict(json.loads(args.config.read_text()))
    start = time.perf_counter()
    results = run_experiment(config, args.strategies, threads=args.threads)
    elapsed = time.perf_counter() - start
    if args.records:
        write_records(args.records, results)

    summary = summarize(results)
    counts = next(iter(summary.values()))["labeled_counts"]
    print(f"{'strategy':<10}" + "".join(f"{n:>8}" for n in counts) + f"{'final':>16}")
    for s, row in summary.items():
        curve = "".join(f"{100 * a:8.2f}" for a in row["accuracy_curve"])
        final = f"{100 * row['final_accuracy_mean']:.2f} +- {100 * row['final_accuracy_std']:.2f}"
        print(f"{s:<10}{curve}{final:>16}")
    if config.noise_rate > 0:
        print("noisy labels acquired:",
              ", ".join(f"{s}={row['noisy_selected_total']}" for s, row in summary.items()))
    print(f"{len(config.seeds)} seeds, {elapsed:.0f}s")


if __name__ == "__main__":
    main()
