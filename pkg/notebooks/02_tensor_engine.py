# %% [markdown]
# # The reverse-mode tensor engine
#
# A small numpy-backed autodiff: every op records its parents, the tape
# orders the graph, and gradients flow back with broadcasting undone.

# %%
import numpy as np

from timemkg import numkernel as nk

# %%
x = nk.Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True)
w = nk.Tensor(np.ones((3, 2)), requires_grad=True)
b = nk.Tensor(np.zeros(2), requires_grad=True)
loss = nk.mean(nk.gelu(nk.linear(x, w, b)))
loss.backward()
print("loss", loss.item())
print("dL/dw\n", w.grad)

# %% [markdown]
# RMS normalization divides by the root mean square; on [3, -3] it gives [1, -1].

# %%
print(nk.rms_norm([3.0, -3.0], np.ones(2), eps=0.0).data)

# %% [markdown]
# Every op is checked against centered finite differences.

# %%
rng = np.random.default_rng(1)
a = nk.Tensor(rng.normal(size=(4, 5)), requires_grad=True)
g = nk.Tensor(rng.normal(size=5), requires_grad=True)
proj = rng.normal(size=(4, 5))
errs = nk.check_gradients(lambda: nk.sum(nk.softmax_lastdim(nk.rms_norm(a, g)) * proj), {"a": a, "g": g})
print({k: f"{v:.1e}" for k, v in errs.items()})

# %% [markdown]
# Checkpoints are little-endian float64 with a manifest and a checksum.

# %%
import tempfile
from pathlib import Path

path = Path(tempfile.mkdtemp()) / "t.ckpt"
nk.save_checkpoint(path, {"a": a.data}, {"note": "demo"})
tensors, manifest = nk.load_checkpoint(path)
print(np.array_equal(tensors["a"], a.data), manifest)
