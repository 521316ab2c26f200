# %% [markdown]
# # Forecasting end to end
#
# Generate a series with a known causal structure, feed the true graph to the
# prompt branch, train, evaluate, and look at the attention scores.

# %%
import numpy as np

from timemkg.model import ModelConfig, TimeMKG
from timemkg.pipeline import prompt_bank_for
from timemkg.training import TrainConfig, default_spec, evaluate, gen_synthetic, make_windows, train

data = gen_synthetic(default_spec(seed=0))
print(data.names, data.series.shape)
print([t.render() for t in data.graph.edges])

# %%
ds = make_windows(data.series, history=24, horizon=8, splits=(0.6, 0.2, 0.2), names=data.names)
print({s: len(ds[s]) for s in ("train", "val", "test")})

cfg = ModelConfig(n_vars=5, history=24, horizon=8, d=16, depth=1, n_heads=2, l_max=64, token_dim=16)
model = TimeMKG(cfg)
bank = prompt_bank_for(model, data.graph, data.names)
print(bank.records[-1].text)

# %%
result = train(model, ds, bank.tokens, TrainConfig(lr=3e-3, steps=400, batch_size=32, eval_every=25, patience=4))
print("steps", result.steps_run, "best step", result.best_step, "best val", round(result.best_val, 4))
report = evaluate(model, ds, "test", bank.tokens, m=12)
print({k: round(v, 4) for k, v in report.to_dict().items() if isinstance(v, float)})

# %% [markdown]
# Scores are N x N with rows indexed by the query variable.

# %%
out = model(ds["test"].history[:1], bank.tokens)
for key, s in out.scores.items():
    s = s[-1] if isinstance(s, list) else s
    s = s[0] if s.ndim == 3 else s
    print(key)
    print(np.round(s, 2))
