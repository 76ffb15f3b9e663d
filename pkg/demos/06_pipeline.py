"""Detect-then-enhance with hand-written detections.

A real detector would produce the JSON; here two boxes are written by
hand, one of them hanging off the right edge so it gets clipped.
"""

import json
import tempfile
from pathlib import Path

from swinoir.data import synthetic_scene, write_image
from swinoir.model import ModelConfig, init_model, save_checkpoint
from swinoir.pipeline import run_pipeline

work = Path(tempfile.mkdtemp(prefix="swinoir-demo-"))
write_image(synthetic_scene(64), work / "scene.png")
(work / "detections.json").write_text(json.dumps({"detections": [
    {"label": "disk", "confidence": 0.92, "box": [6, 8, 30, 28]},
    {"label": "box", "confidence": 0.71, "box": [40, 30, 40, 28]},
    {"label": "noise", "confidence": 0.05, "box": [0, 0, 5, 5]},
]}))

# an untrained x4 model; swap in a checkpoint from `swinoir train` for real output
model = init_model(ModelConfig(blocks=2, stls_per_block=1, channels=8, window_size=4, heads=2, upscale=4))
ckpt = save_checkpoint(model, work / "model.npz")

report = run_pipeline(work / "scene.png", work / "detections.json", ckpt, work / "out")
for rec in report.records:
    note = " (clipped)" if rec.clipped else ""
    print(f"{rec.label:<5} {rec.crop_size} -> {rec.output_size}{note}  {rec.enhanced_file}")
print("timings:", {k: round(v, 3) for k, v in report.timings.items()})
print("outputs in", work / "out")
