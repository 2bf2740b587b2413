"""Train a universal patch on one detector and test it on another.

The patch is optimised over training scenes for toy-a, then pasted on
held-out scenes and scored on both toy-a and toy-b. Drops are reported
relative to a random patch of the same size, which separates the effect of
the adversarial pattern from plain occlusion.

    python3 demos/universal_transfer.py [outdir]
"""

import sys
from pathlib import Path

import numpy as np
from PIL import Image

from advbench3d.attacks import PatchArtifact, apply_universal, random_patch, train_universal_patch
from advbench3d.bench import evaluate_frames, generate_split
from advbench3d.detectors import make_detector
from advbench3d.metrics import relative_drop
from advbench3d.scene import dataset_stats


def main(outdir="demo_out/universal"):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    train = generate_split(0, "train", 10)
    test = generate_split(0, "test", 10)
    src, tgt = make_detector("toy-a"), make_detector("toy-b")
    stats = dataset_stats(train)

    art = train_universal_patch(train, src, epochs=2, seed=0, stats=stats)
    art.save(outdir / "patch.json")
    # the saved artifact reloads bit for bit
    assert np.array_equal(PatchArtifact.load(outdir / "patch.json").pixels, art.pixels)
    Image.fromarray(np.clip(art.array, 0, 255).astype(np.uint8)).save(outdir / "patch.png")
    print(f"trained on {len(train)} scenes, mean gain first/last epoch: "
          f"{np.mean(art.trace[:len(train)]):.3f} / {np.mean(art.trace[-len(train):]):.3f}")

    rnd = random_patch(stats, seed=1)
    for det in (src, tgt):
        frames = {name: [[apply_universal(f, p) for f in s.frames] for s in test]
                  for name, p in (("random", rnd), ("universal", art))}
        clean = evaluate_frames(det, [list(s.frames) for s in test])["mAP"]
        r = evaluate_frames(det, frames["random"])["mAP"]
        u = evaluate_frames(det, frames["universal"])["mAP"]
        print(f"{det.name}: clean {clean:.3f}  random patch {r:.3f}  universal {u:.3f}  "
              f"drop vs random {relative_drop(r, u):.3f}")


if __name__ == "__main__":
    main(*sys.argv[1:])
