"""Noise-conditioning augmentation experiment on the 8 -> 16 stage.

Trains the base model and two super-resolution models (aug ~ U(0,1) and aug
fixed at 0), then scores base -> SR cascades over inference aug levels,
next to a cascade of untrained models.

Usage: python scripts/calibrate_sr.py [--base-epochs N] [--sr-epochs N] [--sampler ancestral|ddim]
"""

import argparse
import dataclasses
import logging
import time

from cdk import recipes as R
from cdk.cascade import CascadeStage, run_cascade
from cdk.denoisers import UNetDenoiser, gen_blob_dataset, init_unet, train_denoiser
from cdk.evaluation import fid_toy, fit_gaussian, image_features
from cdk.rng import RngStream

parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
parser.add_argument("--base-epochs", type=int, default=R.BASE_TRAIN.epochs)
parser.add_argument("--sr-epochs", type=int, default=R.SR_TRAIN.epochs)
parser.add_argument("--sampler", default=R.SR_SAMPLER.kind, choices=("ancestral", "ddim"))
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

data = gen_blob_dataset(R.N_TRAIN, 16, RngStream(R.SEED_DATA))
held = gen_blob_dataset(R.N_HELDOUT, 16, RngStream(R.SEED_HELDOUT))
ref = fit_gaussian(image_features(held.images))
prompts = [" ".join(p) for p in held.prompts[:R.N_EVAL]]
sr_sampler = dataclasses.replace(R.SR_SAMPLER, kind=args.sampler)

base = train_denoiser(data.at_resolution(8), R.BASE_MODEL, dataclasses.replace(R.BASE_TRAIN, epochs=args.base_epochs),
                      RngStream(R.SEED_BASE)).params
models = {"untrained": (init_unet(R.BASE_MODEL, RngStream(R.SEED_BASE).spawn(0)),
                        init_unet(R.SR_MODEL, RngStream(R.SEED_SR).spawn(0)))}
for name, tcfg in (("aug", R.SR_TRAIN), ("no_aug", R.SR_TRAIN_NO_AUG)):
    res = train_denoiser(data, R.SR_MODEL, dataclasses.replace(tcfg, epochs=args.sr_epochs), RngStream(R.SEED_SR))
    print(f"{name}: trained in {res.seconds:.0f}s, final loss {res.loss_trace[-1]:.4f}")
    models[name] = (base, res.params)

for name, (base_params, sr_params) in models.items():
    for aug in R.SR_AUG_LEVELS:
        t = time.time()
        stages = [CascadeStage("base", 8, UNetDenoiser(base_params, R.BASE_MODEL), R.GUIDANCE, R.BASE_SAMPLER),
                  CascadeStage("super_res", 16, UNetDenoiser(sr_params, R.SR_MODEL), R.GUIDANCE, sr_sampler,
                               in_res=8, aug=aug)]
        out = run_cascade(stages, prompts, RngStream(R.SEED_SAMPLE))
        print(f"{name:9s} aug={aug:.1f} fid_toy16={fid_toy(out.final, ref):.4f} "
              f"fid_toy8={fid_toy(out.intermediates[0], ref):.4f} ({time.time() - t:.0f}s)")
