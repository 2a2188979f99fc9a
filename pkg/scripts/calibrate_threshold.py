#!/usr/bin/env python3
"""
Threshold oracle: draws genuine and impostor score distributions and reports
the midpoint operating point frozen in utils/constants.py.
"""

import argparse
import json
import os
import sys
from typing import List, Optional

import pandas as pd

# Add the project root to Python path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from utils.calibration import monte_carlo_scores, operating_point, rates  # noqa: E402
from utils.constants import CALIBRATION_SEED, CALIBRATION_TRIALS, DEFAULT_THRESHOLD  # noqa: E402


def summarize(genuine, impostor) -> pd.DataFrame:
    frame = pd.DataFrame({
        'genuine': pd.Series(genuine).describe(percentiles=[0.5, 0.999]),
        'impostor': pd.Series(impostor).describe(percentiles=[0.001, 0.5]),
    })
    return frame.round(1)


def plot_histogram(genuine, impostor, threshold: int, path: str) -> None:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(8, 4))
    ax.hist(genuine, bins=100, alpha=0.7, label='genuine')
    ax.hist(impostor, bins=100, alpha=0.7, label='impostor')
    ax.axvline(threshold, color='black', linestyle='--', label=f'threshold {threshold}')
    ax.set_xscale('symlog')
    ax.set_xlabel('squared distance (fixed-point units²)')
    ax.set_ylabel('pairs')
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Calibrate the biometric match threshold")
    parser.add_argument('--trials', type=int, default=CALIBRATION_TRIALS)
    parser.add_argument('--seed', type=int, default=CALIBRATION_SEED)
    parser.add_argument('--plot', help="write a score histogram to this PNG path")
    args = parser.parse_args(argv)

    print(f"🔬 Drawing {args.trials} genuine and {args.trials} impostor pairs (seed {args.seed})...",
          file=sys.stderr)
    genuine, impostor = monte_carlo_scores(args.trials, args.seed)
    result = operating_point(genuine, impostor, args.seed)
    print(summarize(genuine, impostor).to_string(), file=sys.stderr)

    fnmr, fmr = rates(genuine, impostor, DEFAULT_THRESHOLD)
    report = result.to_dict()
    report['frozen_threshold'] = DEFAULT_THRESHOLD
    report['frozen_fnmr'] = fnmr
    report['frozen_fmr'] = fmr
    print(json.dumps(report, indent=2, sort_keys=True))

    if args.plot:
        plot_histogram(genuine, impostor, result.threshold, args.plot)
        print(f"✅ Histogram written to {args.plot}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
