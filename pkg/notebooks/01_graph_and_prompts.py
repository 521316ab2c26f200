# %% [markdown]
# # Variable graphs and causal prompts
#
# Build a small graph of variables, pull out the edges that matter for one
# variable, turn them into prompt text, and cache the prompt vectors on disk.

# %%
import tempfile
from pathlib import Path

import numpy as np

from timemkg.kgstore import Mkg, Triplet, assemble_prompt, dumps_mkg, hybrid_retrieve, loads_mkg
from timemkg.promptembed import EmbedderSpec, Token2VectorParams, build_prompt_store, load_prompt_store
from timemkg.pipeline import build_prompts
from timemkg.errors import StaleCache

# %%
g = Mkg()
g.add_node("HULL", "high useful load", ["load"])
g.add_node("MULL", "middle useful load", ["load"])
g.add_node("AMB", "ambient temperature", ["weather"])
g.add_node("OT", "oil temperature", ["temperature"])
g.add_triplet(Triplet("HULL", "heats", "OT", "domain-knowledge"))
g.add_triplet(Triplet("AMB", "warms", "OT", "domain-knowledge"))
g.add_triplet(Triplet("MULL", "shares_feeder", "HULL"))
print(len(g.nodes), "nodes,", len(g), "edges, relations:", sorted(g.relation_vocab))

# %% [markdown]
# Local retrieval keeps the edges touching the variable. Global retrieval adds
# edges within reach of its k-1 hop neighbourhood and edges of variables that
# share a tag.

# %%
local, extra = hybrid_retrieve(g, "MULL", k=2)
print("local :", [t.render() for t in local.triplets])
print("global:", [t.render() for t in extra.triplets])

# %%
print(assemble_prompt(g, "MULL").text)

# %% [markdown]
# The JSONL form is sorted and byte-stable, so graphs diff cleanly.

# %%
text = dumps_mkg(g)
print(text)
assert dumps_mkg(loads_mkg(text)) == text

# %% [markdown]
# Prompt vectors are cached with a hash of each prompt. Editing the graph
# changes the prompt text, and loading the stale cache names the affected variables.

# %%
names = ["HULL", "MULL", "AMB", "OT"]
prompts = build_prompts(g, names)
params = Token2VectorParams.init(l_max=64, dim_in=32, dim_out=8, rng=np.random.default_rng(0))
path = Path(tempfile.mkdtemp()) / "prompts.store"
store = build_prompt_store(prompts, EmbedderSpec(dim=32), params, path)
print(store.matrix.shape, path.stat().st_size, "bytes")

g.add_triplet(Triplet("AMB", "cools", "MULL"))
try:
    load_prompt_store(path, build_prompts(g, names))
except StaleCache as exc:
    print("stale:", exc.variables)
