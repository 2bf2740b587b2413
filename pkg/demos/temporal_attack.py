"""Compare continuous and single-frame attacks on a temporal detector.

toy-temporal carries a fused BEV state from frame to frame. Attacking only
the last frame leaves every earlier BEV state untouched, while attacking
every frame lets the damage build up through the fusion.

    python3 demos/temporal_attack.py
"""

from advbench3d.attacks import AttackBudget, attack_sequence, make_engine
from advbench3d.detectors import make_detector
from advbench3d.metrics import bev_feature_error
from advbench3d.synth import synth_generate


def main():
    det = make_detector("toy-temporal")
    seq = synth_generate(90_000, n_frames=6, n_objects=6)
    engine = make_engine("pgd", "cls", budget=AttackBudget(10))

    benign = attack_sequence(seq, det, engine, "benign")
    runs = {
        "continuous": attack_sequence(seq, det, engine, "continuous"),
        "last frame": attack_sequence(seq, det, engine, "single_frame", k=len(seq) - 1),
    }
    print("frame      " + " ".join(f"{t:>6}" for t in range(1, len(seq) + 1)))
    for name, run in runs.items():
        err = bev_feature_error(run.bev_trace, benign.bev_trace)
        print(f"{name:<10} " + " ".join(f"{e:6.3f}" for e in err))


if __name__ == "__main__":
    main()
