"""Train a small codec on synthetic EEG and push one recording through a container.

    python demos/compress_roundtrip.py [--epochs 60] [--out demo_out]

Takes about a minute on a laptop CPU. Training is short, so expect a PRD
well above what a long run reaches.
"""

import argparse
from pathlib import Path

import numpy as np

from eegcodec import CodecConfig, compression_ratio, load_recording, save_recording
from eegcodec.bitstream import ContainerHeader
from eegcodec.checkpoint import save_checkpoint
from eegcodec.metrics import prd, snr_db
from eegcodec.pipeline import compress_recording, decompress_bytes
from eegcodec.synthetic import BurstEvent, SyntheticSpec, generate
from eegcodec.trainer import TrainConfig, fit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(exist_ok=True)

    # Eight channels of 1/f background at 256 Hz, one minute long.
    train = generate(SyntheticSpec(num_channels=8, duration_s=60, seed=1))

    # Four encoder blocks halve the time axis four times: 1024-sample
    # patches become 64 latent frames, each coded with 4 x 8-bit indices.
    codec = CodecConfig(num_blocks=4)
    print(f"nominal CR {compression_ratio(codec):.0f}")

    ckpt = fit(train, codec, TrainConfig(epochs=args.epochs, batch_size=16, lr_generator=(1e-4, 1e-3)),
               log_path=out / "train.jsonl")
    save_checkpoint(ckpt, out / "model.ckpt")
    print(f"best validation PRD {ckpt.meta['val_prd']:.2f} at epoch {ckpt.meta['best_epoch']}")

    # A fresh recording the model has not seen, with a rhythmic burst in the middle.
    test = generate(SyntheticSpec(num_channels=4, duration_s=30, seed=7, burst_events=[BurstEvent(10, 8)]))
    save_recording(test, out / "test.bcraw")

    blob = compress_recording(load_recording(out / "test.bcraw"), ckpt)
    (out / "test.bcc").write_bytes(blob)
    header = ContainerHeader.unpack(blob)
    raw = test.n_channels * test.n_samples * 4
    print(f"{raw} raw bytes -> {len(blob)} container bytes ({raw / len(blob):.1f}x including header and CRC)")
    print(f"container: {header.C} channels, {header.T} samples, n_q={header.n_q}, K={header.K_cb}")

    recon = decompress_bytes(blob, ckpt)
    save_recording(recon, out / "recon.bcraw")
    print(f"PRD {prd(test.samples, recon.samples):.2f} %, SNR {snr_db(test.samples, recon.samples):.2f} dB")

    # Burst windows are where the downstream classifier looks, so check them separately.
    (on, off, _), = test.annotations
    burst = np.s_[:, on:off]
    print(f"PRD inside the burst {prd(test.samples[burst], recon.samples[burst]):.2f} %")


if __name__ == "__main__":
    main()
