"""Build the dense camera-pixel -> range-view-pixel correspondence.

The mapping is constructed by projecting the sweep into each camera,
densifying the sparse depth, back-projecting every covered camera pixel to
a 3D pseudo-point, and rasterizing those into the range-view grid.
"""

import numpy as np

from rangefuse.config import PipelineConfig
from rangefuse.rangeview import FOV_PRESETS
from rangefuse.synthetic import demo_rig, render_views, terrain_scene
from rangefuse.viewtransform import build_cam_to_rv_map, warp_features


def main():
    config = PipelineConfig()
    scene = terrain_scene(config.seeds.scene)
    rig = demo_rig()
    fov = FOV_PRESETS[config.fov_preset]

    cam_map = build_cam_to_rv_map(rig, scene.cloud, fov, config.rv_height, config.rv_width)
    for i, (rows, cam) in enumerate(zip(cam_map.rv_rows, rig)):
        covered = int((rows >= 0).sum())
        h, w = cam.size
        print(f"camera {i}: {covered}/{h * w} pixels mapped "
              f"({100.0 * covered / (h * w):.1f}%)")

    # warp the camera views into range-view alignment at stride 1
    images = render_views(scene, rig)
    feats = [img.astype(np.float64) / 255.0 for img in images]
    warped, covered = warp_features(feats, cam_map, stride=1)
    print(f"warped grid: {warped.shape}, covered cells {int(covered.sum())}"
          f"/{covered.size}")

    # collisions (several camera pixels per cell) are averaged
    contributors = np.zeros(covered.shape, dtype=np.int64)
    for rows, cols in zip(cam_map.rv_rows, cam_map.rv_cols):
        ok = rows >= 0
        np.add.at(contributors, (rows[ok], cols[ok]), 1)
    print(f"cells averaging >=2 camera pixels: {int((contributors > 1).sum())}")


if __name__ == "__main__":
    main()
