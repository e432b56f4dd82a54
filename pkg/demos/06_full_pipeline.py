"""Drive the whole pipeline twice through the command line interface.

Same commands a shell user would run: synthesize a city, split it,
build the neighbor matrix, fit the lag model, train the fused
regressor, evaluate, render reports. Then run the exact same chain
again and hash every artifact to show the pipeline is replay safe:
identical config in, identical bytes out.
"""

import hashlib
import os
import shutil
import time

from geoprice.cli import main as geoprice

HERE = os.path.dirname(__file__)
WORK = os.path.join(HERE, "out", "06_pipeline")

CONFIG = """\
listings = city/listings.csv
poi = city/poi.csv
tags = city/tags.txt
features_dir = city/features
out_dir = out
seed = 0
synth_n = 1200
synth_poi = 2500
zooms = 15,16,17,18,19,20
estimator = rf
w = delaunay
test_frac = 0.10
"""

CHAIN = ("synth", "split", "build-w", "fit-sar", "train", "evaluate", "report")


def run_chain(cfg):
    t0 = time.monotonic()
    for command in CHAIN:
        print(f"$ geoprice {command} --config run.cfg")
        code = geoprice([command, "--config", cfg])
        if code != 0:
            raise SystemExit(code)
    return time.monotonic() - t0


def hash_outputs():
    digests = {}
    for sub in ("city", "city/features", "out"):
        base = os.path.join(WORK, sub)
        for f in sorted(os.listdir(base)):
            p = os.path.join(base, f)
            if os.path.isfile(p):
                with open(p, "rb") as fh:
                    digests[os.path.relpath(p, WORK)] = hashlib.sha256(fh.read()).hexdigest()
    return digests


def main():
    shutil.rmtree(WORK, ignore_errors=True)
    os.makedirs(WORK)
    cfg = os.path.join(WORK, "run.cfg")
    with open(cfg, "w") as fh:
        fh.write(CONFIG)

    first = run_chain(cfg)
    d1 = hash_outputs()
    print(f"\nfirst pass: {len(d1)} artifacts in {first:.1f}s, rerunning...\n")
    second = run_chain(cfg)
    d2 = hash_outputs()

    changed = [k for k in d1 if d1[k] != d2.get(k)]
    print(f"\nsecond pass {second:.1f}s")
    if changed:
        print(f"NOT replay safe, {len(changed)} artifacts changed: {changed}")
        raise SystemExit(1)
    print(f"all {len(d1)} artifacts byte identical across reruns")
    print(f"workspace: {WORK}")


if __name__ == "__main__":
    main()
