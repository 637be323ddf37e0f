"""Run the three sensor-robustness experiments end to end.

Camera dropout (zeroed images), calibration drift (rotational extrinsics
error swept over angles), and domain shift (histogram-matched night-style
views scored by a trained uncertainty head).  Reports land in a temp
directory as aggregate JSON plus per-class CSV.
"""

import tempfile
from pathlib import Path

from rangefuse.config import PipelineConfig
from rangefuse.harness import (
    run_domain_shift_eval,
    run_dropout_eval,
    run_drift_eval,
    write_drift_curve_csv,
    write_per_class_csv,
    write_report_json,
)
from rangefuse.synthetic import night_reference_pool


def show(report):
    for cond in report.conditions:
        extras = ""
        if "mean_displacement_px" in cond.details:
            extras = f"  shift {cond.details['mean_displacement_px']:.2f} px"
        if "mean_uncertainty_delta" in cond.details:
            extras = f"  dU {cond.details['mean_uncertainty_delta']:+.3f}"
        print(f"  {cond.name:14s} PQ {cond.metrics.pq:.4f} "
              f"dPQ {cond.delta_pq:+.4f}  U {cond.mean_uncertainty:.3f}{extras}")


def main():
    config = PipelineConfig()
    out = Path(tempfile.mkdtemp(prefix="rangefuse_robustness_"))

    print("camera dropout (U forced to 1):")
    dropout = run_dropout_eval(config, force_full_uncertainty=True)
    show(dropout)
    bit_equal = dropout.conditions[1].details["fused_bit_equals_lidar"]
    print(f"  dropout fusion bit-equals the LiDAR-only path: {bit_equal}")
    write_report_json(dropout, out / "dropout.json")
    write_per_class_csv(dropout, out / "dropout_per_class.csv")

    print("calibration drift:")
    drift = run_drift_eval(config, [0.0, 1.0, 2.0, 3.0, 4.0, 5.0])
    show(drift)
    write_report_json(drift, out / "drift.json")
    write_per_class_csv(drift, out / "drift_per_class.csv")
    write_drift_curve_csv(drift, out / "drift_curve.csv")

    print("domain shift (trains a scene head first, ~10 s):")
    shift = run_domain_shift_eval(config, night_reference_pool())
    show(shift)
    write_report_json(shift, out / "domain_shift.json")
    write_per_class_csv(shift, out / "domain_shift_per_class.csv")

    print(f"reports written to {out}")


if __name__ == "__main__":
    main()
