"""
Synthetic moving shapes and clip triples
========================================

Render a few videos of a bouncing shape, cut one clip triple out of a video
and write a contact sheet showing the continuous clip, the discontinuous
clip and the removed missing section.
"""

# +
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from continuity_ssl.datakit import SyntheticWorldSpec, VideoRecord, synthesize_video
from continuity_ssl.sampler import SamplerConfig, sample_clip_triple

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
out.mkdir(parents=True, exist_ok=True)

# -
# One video per shape class. Frames are uint8 [T, H, W, 3]; boxes hold the
# ground-truth extent of the shape in every frame.
spec = SyntheticWorldSpec(num_videos=3, frames_per_video=40, resolution=(48, 48),
                          size_range=(0.2, 0.3), rng_seed=0)
videos = [synthesize_video(spec, i) for i in range(3)]
for frames, boxes, cls in videos:
    step = np.linalg.norm(np.diff((boxes[:, :2] + boxes[:, 2:]) / 2, axis=0), axis=1)
    print(f"class {cls}: {frames.shape}, median speed {np.median(step):.2f} px/frame")

# -
# A triple from the first video. The break index j decides where the
# l_m-frame missing section is cut out of the l_n + l_m window.
frames, _, _ = videos[0]
rec = VideoRecord("demo", "circle", len(frames), 25.0, 48, 48, frames)
cfg = SamplerConfig(l_n=16, l_m=8, crop_size=(48, 48))
tri = sample_clip_triple(rec, cfg, np.random.default_rng(3))
print("initial window", tri.initial_span, "break index", tri.break_index,
      "continuous clip", tri.continuous_span)

# -
# Rows: continuous clip, discontinuous clip (note the jump after column j),
# missing section.
def strip(clip, width=16):
    pad = np.zeros((width - len(clip),) + clip.shape[1:], np.uint8)
    return np.concatenate(list(np.concatenate([clip, pad])), axis=1)


sheet = np.concatenate([strip(tri.c_c), strip(tri.c_d), strip(tri.c_m)], axis=0)
Image.fromarray(sheet).resize((sheet.shape[1] * 2, sheet.shape[0] * 2), Image.NEAREST) \
    .save(out / "triple.png")
print("wrote", out / "triple.png")

# -
# The discontinuity is easy to see in the mean absolute frame difference:
# one step of c_d is several times larger than the rest.
def energy(clip):
    return np.abs(np.diff(clip.astype(float), axis=0)).mean(axis=(1, 2, 3))


print("c_c energy", np.round(energy(tri.c_c), 1))
print("c_d energy", np.round(energy(tri.c_d), 1))
print("largest step of c_d at", int(np.argmax(energy(tri.c_d))),
      "= localization class", tri.localization_class)
