"""Train the tiny network on the default synthetic set and report per-epoch
validation mIoU for each loss.

    python scripts/train_tiny.py --epochs 200 --loss cross_entropy --loss focal
"""

import argparse
import json
import time

from woundfill.losses import LOSS_KINDS
from woundfill.synthgen import SynthConfig, generate_dataset
from woundfill.trainer import Sample, TrainConfig, select_best_model, training_report
from woundfill.tsgcnet import ModelConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--loss", action="append", choices=LOSS_KINDS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", help="directory for checkpoints and training_report.json")
    args = ap.parse_args()

    synth = SynthConfig(seed=args.seed, level=3, bases=4, wound_count=3)
    dataset = [Sample.from_mesh(s.sample_id, s.wounded) for s in generate_dataset(synth)]
    cfg = TrainConfig(epochs=args.epochs, model=ModelConfig.tiny(), seed=args.seed)
    start = time.perf_counter()

    def trainer(data, run_cfg):
        from woundfill.trainer import train_with_loss

        t0 = time.perf_counter()

        def show(rec):
            print(f"{run_cfg.loss.kind:>24} epoch {rec['epoch']:3d} loss {rec['train_loss']:.4f} "
                  f"val mIoU {rec['val_miou']:.4f} ({time.perf_counter() - t0:.0f}s)", flush=True)

        return train_with_loss(data, run_cfg, on_epoch=show)

    report, results = select_best_model(dataset, args.loss or LOSS_KINDS, cfg, out_dir=args.out, trainer=trainer)
    print(json.dumps(report.to_dict(), indent=2))
    print(f"total {time.perf_counter() - start:.0f}s")
    if args.out:
        with open(f"{args.out}/training_report.json", "w") as fh:
            json.dump(training_report(report, results, cfg), fh, indent=2)


if __name__ == "__main__":
    main()
