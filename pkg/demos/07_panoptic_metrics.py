"""Score panoptic predictions: PQ, SQ, RQ, and the stuff-IoU variant.

Starts from the classic worked fixture (one matched segment at IoU 0.75,
one miss, one spurious prediction), then scores a full synthetic scene.
"""

import numpy as np

from rangefuse.config import PipelineConfig
from rangefuse.panoptic import ClassSplit, PanopticLabel, pq_metrics
from rangefuse.pipeline import run_pipeline


def main():
    split = ClassSplit(things=frozenset({1}), stuff=frozenset())
    gt = PanopticLabel(
        np.ones(8, dtype=np.int64),
        np.array([1, 1, 1, 1, 2, 2, 2, 2]),
    )
    pred = PanopticLabel(
        np.array([1, 1, 1, 0, 1, 0, 0, 0]),
        np.array([7, 7, 7, 0, 9, 0, 0, 0]),
    )
    report = pq_metrics(pred, gt, split)
    s = report.per_class[1]
    print("fixture: 1 TP at IoU 0.75, 1 FN, 1 FP")
    print(f"  PQ = {s.pq}  SQ = {s.sq}  RQ = {s.rq}  (PQ == SQ*RQ: {s.pq == s.sq * s.rq})")

    config = PipelineConfig()
    result = run_pipeline(config, camera_mode="clean")
    print(f"\nsynthetic scene, clean condition ({len(result.gt)} points):")
    agg = result.report.as_dict()["aggregates"]
    for name, value in agg.items():
        print(f"  {name:10s} {value:.4f}")
    print("per class:")
    for c in result.report.present_classes:
        cs = result.report.per_class[c]
        role = "thing" if c in result.split.things else "stuff"
        print(f"  class {c} ({role}): PQ {cs.pq:.3f}  TP {cs.tp}  FP {cs.fp}  FN {cs.fn}")


if __name__ == "__main__":
    main()
