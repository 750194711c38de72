"""Desk-scale experiment probe: phantom dataset -> extraction -> training.

Used to pick the acceptance-run hyperparameters (epochs, learning rate).
"""

import json
import os
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from cineavd.cli import parse_and_dispatch

root = sys.argv[1] if len(sys.argv) > 1 else "/tmp/accept_probe"
task = sys.argv[2] if len(sys.argv) > 2 else "two_class"
epochs = sys.argv[3] if len(sys.argv) > 3 else "8"
lr = sys.argv[4] if len(sys.argv) > 4 else "0.001"
depth = sys.argv[5] if len(sys.argv) > 5 else "16"
seed = sys.argv[6] if len(sys.argv) > 6 else "11"
hw = sys.argv[7] if len(sys.argv) > 7 else "48"

data = os.path.join(root, "data")
extracted = os.path.join(root, f"extracted{hw}")

t0 = time.time()
if not os.path.exists(os.path.join(data, "manifest.csv")):
    assert parse_and_dispatch(["gen-phantom", "--n", "200", "--out", data, "--seed", "11",
                               "--grid", "64", "64", "16"]) == 0
    print(f"[probe] gen {time.time()-t0:.0f}s", flush=True)
if not os.path.exists(os.path.join(extracted, "manifest.csv")):
    assert parse_and_dispatch(["extract", "--manifest", os.path.join(data, "manifest.csv"),
                               "--out", extracted, "--target_hw", hw, hw]) == 0
    print(f"[probe] extract {time.time()-t0:.0f}s", flush=True)

run = os.path.join(root, f"run_{task}_e{epochs}_lr{lr}_d{depth}_s{seed}_hw{hw}")
code = parse_and_dispatch([
    "train", "--manifest", os.path.join(extracted, "manifest.csv"), "--out", run,
    "--task", task, "--epochs", epochs, "--batch_size", "2",
    "--learning_rate", lr, "--growth_rate", "8", "--init_channels", "16",
    "--input_shape", hw, hw, depth, "--target_depth", depth,
    "--skip_extraction", "--seed", seed])
print(f"[probe] train exit {code} after {time.time()-t0:.0f}s", flush=True)

code = parse_and_dispatch([
    "evaluate", "--manifest", os.path.join(run, "split_manifest.csv"),
    "--checkpoint", os.path.join(run, "best.ckpt"), "--out", os.path.join(run, "eval"),
    "--bootstrap_n", "200", "--skip_extraction"])
print(f"[probe] evaluate exit {code} total {time.time()-t0:.0f}s", flush=True)
report = json.load(open(os.path.join(run, "eval", "report.json")))
print("[probe] TEST ACCURACY:", report["accuracy"]["mean"], flush=True)
