#!/usr/bin/env python3
"""Build the fixtures the e2e suite needs: a model overfit on synthetic
data plus one PNG exemplar per class, written to the given directory."""

import argparse
import sys
from pathlib import Path

import numpy as np
from PIL import Image

import cxrtriage as cx


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("outdir")
    parser.add_argument("--per-class", type=int, default=20)
    parser.add_argument("--epochs", type=int, default=20)
    args = parser.parse_args()
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)

    archive = cx.synthesize_dataset(args.per_class, seed=0)
    plan = cx.split(archive, 0.2, seed=0)
    net = cx.initialize(cx.build("custom_cnn", 1, 1.0), seed=0)
    cfg = cx.TrainConfig(epochs=args.epochs, batch_size=20, seed=0)
    history = cx.train(net, archive, plan, cfg)
    model_path = out / "overfit.cxrm"
    cx.save_model(net, str(model_path))

    for label, name in enumerate(cx.CLASS_NAMES):
        idx = int(np.flatnonzero(archive.labels == label)[0])
        Image.fromarray(archive.pixels[idx, 0]).save(
            out / f"{name.lower()}.png")

    print(f"model: {model_path}")
    print(f"final train acc: {history.train_acc[-1]:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
