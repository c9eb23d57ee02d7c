"""Train a base model and compare guidance sweeps of the trained and untrained model.

Usage: python scripts/calibrate_base.py [--epochs N] [--optimizer adam|sgd] [--lr LR] [--decay cosine|none]
"""

import argparse
import dataclasses
import logging
import time

from cdk import recipes as R
from cdk.denoisers import UNetDenoiser, gen_blob_dataset, init_unet, train_denoiser
from cdk.evaluation import guidance_sweep, model_generator
from cdk.rng import RngStream

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--epochs", type=int, default=R.BASE_TRAIN.epochs)
parser.add_argument("--optimizer", default=R.BASE_TRAIN.optimizer)
parser.add_argument("--lr", type=float, default=R.BASE_TRAIN.lr)
parser.add_argument("--decay", default=R.BASE_TRAIN.decay)
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

tcfg = dataclasses.replace(R.BASE_TRAIN, epochs=args.epochs, optimizer=args.optimizer, lr=args.lr, decay=args.decay)
data = gen_blob_dataset(R.N_TRAIN, 16, RngStream(R.SEED_DATA)).at_resolution(8)
held = gen_blob_dataset(R.N_HELDOUT, 16, RngStream(R.SEED_HELDOUT)).at_resolution(8)
res = train_denoiser(data, R.BASE_MODEL, tcfg, RngStream(R.SEED_BASE))
print(f"trained {tcfg} in {res.seconds:.0f}s, loss {res.loss_trace[0]:.4f} -> {res.loss_trace[-1]:.4f}")
untrained = init_unet(R.BASE_MODEL, RngStream(R.SEED_BASE).spawn(0))
for name, params in (("trained", res.params), ("untrained", untrained)):
    t = time.time()
    gen = model_generator(UNetDenoiser(params, R.BASE_MODEL), 8, R.BASE_SAMPLER)
    rows = guidance_sweep(gen, held, RngStream(R.SEED_SAMPLE), weights=[1, 3, 8], n=R.N_EVAL)
    print(f"{name} ({time.time() - t:.0f}s)")
    for r in rows:
        print(f"  w={r.w:g} fid_toy={r.fid_toy:.4f} align_toy={r.align_toy:.4f}")
