"""Walk the image degradation catalog and corrupt a rendered camera view.

Writes one corrupted PPM per selected kind into a temp directory so the
artifacts can be inspected with any image viewer.
"""

import tempfile
from pathlib import Path

import numpy as np

from rangefuse import degradations, tensorio
from rangefuse.synthetic import demo_rig, night_reference_pool, render_views, terrain_scene

SHOWCASE = {
    "brightness": {"factor": 0.75},
    "fog": {"alpha": 0.6},
    "gaussian_noise": {"sigma": 20.0},
    "motion_blur": {"length": 9, "angle": 30.0},
    "vignette": {"intensity": 0.7},
}


def main():
    print(f"catalog: {len(degradations.KINDS)} kinds")
    print("  " + ", ".join(degradations.KINDS))

    scene = terrain_scene(7)
    image = render_views(scene, demo_rig())[0]
    out = Path(tempfile.mkdtemp(prefix="rangefuse_degradations_"))
    tensorio.write_image(out / "clean.ppm", image)

    for kind, params in SHOWCASE.items():
        spec = degradations.DegradationSpec(kind, params, seed=3)
        corrupted = degradations.apply(image, spec)
        tensorio.write_image(out / f"{kind}.ppm", corrupted)
        delta = np.abs(corrupted.astype(float) - image.astype(float)).mean()
        print(f"{kind:16s} mean |delta| = {delta:6.2f}  params {params}")

    # histogram matching drags the view toward a reference distribution
    night = night_reference_pool()[0]
    spec = degradations.DegradationSpec("histogram_match", {"reference": night}, seed=3)
    matched = degradations.apply(image, spec)
    tensorio.write_image(out / "histogram_match.ppm", matched)
    print(f"histogram_match  mean brightness {image.mean():.1f} -> {matched.mean():.1f}")
    print(f"wrote {len(SHOWCASE) + 2} images to {out}")


if __name__ == "__main__":
    main()
