"""How much does compression hurt a seizure detector?

    python demos/downstream_degradation.py CHECKPOINT [--subjects 2]

Builds labelled synthetic subjects, trains the reference window classifier
on originals, and scores it on original and reconstructed held-out seizures
(leave-one-seizure-out). Writes ``degradation.csv`` next to the checkpoint.
Use a checkpoint trained at 256 Hz, e.g. from ``compress_roundtrip.py``.
"""

import argparse
from pathlib import Path

from eegcodec.checkpoint import load_checkpoint
from eegcodec.harness import ProtocolConfig, ReferenceCNNAdapter, Subject, run_protocol
from eegcodec.synthetic import seizure_subject


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("checkpoint")
    ap.add_argument("--subjects", type=int, default=2)
    args = ap.parse_args()

    ckpt = load_checkpoint(args.checkpoint)
    subjects = [Subject(f"S{i:02d}", seizure_subject(seed=i)) for i in range(args.subjects)]
    report = run_protocol(subjects, ReferenceCNNAdapter(), ProtocolConfig(), ckpt)

    for s in report.subjects:
        folds = ", ".join(f"{a:.2f}/{b:.2f}" for a, b in s.fold_scores)
        print(f"{s.subject}: F1 original/reconstructed per fold  {folds}")
    print(f"event-weighted F1 {report.score_original:.4f} -> {report.score_reconstructed:.4f} "
          f"(drop {report.degradation:+.4f}) at CR {report.nominal_cr:.0f}, median PRD {report.median_prd:.2f}")
    path = report.write_csv(Path(args.checkpoint).with_name("degradation.csv"))
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
