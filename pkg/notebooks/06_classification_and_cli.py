# %% [markdown]
# # Classification, and the same pipeline from the command line
#
# Two regimes that differ only in the sign of a causal edge, classified from
# short windows. Then the forecasting workflow driven through `timemkg`.

# %%
import json
import subprocess
import tempfile
from pathlib import Path

import numpy as np

from timemkg.kgstore import Mkg, Triplet
from timemkg.model import ModelConfig, TimeMKG
from timemkg.pipeline import prompt_bank_for
from timemkg.training import (SyntheticEdge, SyntheticSpec, SyntheticVariable, TrainConfig, evaluate,
                              gen_synthetic_classification, make_classification_set, train)

variables = [SyntheticVariable("A", period=10, amplitude=1.0), SyntheticVariable("B")]
specs = [SyntheticSpec(variables, [SyntheticEdge("A", "B", lag=1, coef=c)], length=16, noise=0.2) for c in (1.0, -1.0)]
names, samples, labels = gen_synthetic_classification(specs, per_class=40, seed=0)
ds = make_classification_set(samples, labels, names=names)

g = Mkg()
g.add_triplet(Triplet("A", "drives", "B"))
model = TimeMKG(ModelConfig(n_vars=2, history=16, task="classify", n_classes=2, d=8, depth=1, n_heads=2,
                            l_max=32, token_dim=8))
bank = prompt_bank_for(model, g, names)
train(model, ds, bank.tokens, TrainConfig(lr=1e-2, steps=200, batch_size=16, eval_every=20))
print("test accuracy", evaluate(model, ds, "test", bank.tokens).accuracy)

# %%
work = Path(tempfile.mkdtemp())
spec = {"variables": [{"name": "HULL", "tags": ["load"], "period": 24, "amplitude": 1.0},
                      {"name": "OT", "tags": ["temperature"]}],
        "edges": [{"head": "HULL", "tail": "OT", "lag": 3, "coef": 0.8, "relation": "heats"}],
        "length": 400, "noise": 0.2, "seed": 1}
(work / "spec.json").write_text(json.dumps(spec))
(work / "run.ini").write_text("[data]\npath = data.csv\nhistory = 24\nhorizon = 8\n[graph]\npath = graph.jsonl\n"
                              "[model]\nd = 16\ndepth = 1\nn_heads = 2\nl_max = 48\ntoken_dim = 16\n"
                              "[train]\nlr = 0.003\nsteps = 100\n")


def cli(*args):
    done = subprocess.run(["timemkg", *map(str, args)], capture_output=True, text=True, cwd=work)
    print(done.stdout or done.stderr)


cli("synth", "--spec", "spec.json", "--out-csv", "data.csv", "--out-triplets", "graph.jsonl")
cli("train", "--config", "run.ini", "--out", "model.ckpt", "--store", "prompts.store", "--loss-curve", "loss.csv")
cli("eval", "--checkpoint", "model.ckpt", "--split", "test", "--store", "prompts.store")
cli("export-attention", "--checkpoint", "model.ckpt", "--out-dir", "attention")
print((work / "attention" / "tse_layer0.csv").read_text())
