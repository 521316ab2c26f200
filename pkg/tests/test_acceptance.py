"""Release gate: one test per acceptance criterion, each reporting a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the verdicts are
printed in the "acceptance criteria" section at the end of the run.
"""
import json
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from timemkg import numkernel as nk
from timemkg.cli import main
from timemkg.encoders import EncoderStack, InvertedEmbeddingParams, PreLnBlockParams, inverted_embed, mhsa, preln_block
from timemkg.errors import StaleCache
from timemkg.fusion import ClassifyHead, CmaParams, ForecastHead, classify_head, cmd_decode, cross_modality_attention, forecast_head
from timemkg.kgstore import Mkg, Triplet, retrieve_global, retrieve_local, save_mkg
from timemkg.model import ModelConfig, TimeMKG
from timemkg.pipeline import AblationSetup, build_prompts, prompt_bank_for, run_ablation
from timemkg.promptembed import (
    EmbedderSpec,
    Token2VectorParams,
    build_prompt_store,
    load_prompt_store,
    prompt_records,
    token2vector,
)
from timemkg.training import (
    TrainConfig,
    default_spec,
    evaluate_forecast,
    gen_synthetic,
    make_windows,
    train,
    write_series_csv,
)


def report(n: int, ok: bool, detail: str):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _randomize(params: dict, rng):
    for p in params.values():
        if not p.data.any():
            p.data[...] = rng.normal(scale=0.1, size=p.shape)


# ---------------------------------------------------------------------------
# 1. gradient integrity


def _gradient_cases(rng):
    def leaf(*shape, positive=False):
        data = rng.uniform(0.5, 2.0, size=shape) if positive else rng.normal(size=shape)
        return nk.Tensor(data, requires_grad=True)

    def proj(out):  # fixed random projection -> scalar
        w = np.random.default_rng(99).normal(size=out.shape)
        return nk.sum(out * w)

    a, b, c = leaf(3, 4), leaf(4), leaf(3, 4, positive=True)
    yield "add", (lambda: proj(nk.add(a, b))), {"a": a, "b": b}
    yield "sub", (lambda: proj(nk.sub(a, b))), {"a": a, "b": b}
    yield "mul", (lambda: proj(nk.mul(a, b))), {"a": a, "b": b}
    yield "div", (lambda: proj(nk.div(a, c))), {"a": a, "c": c}
    yield "exp", (lambda: proj(nk.exp(a))), {"a": a}
    yield "log", (lambda: proj(nk.log(c))), {"c": c}
    yield "gelu", (lambda: proj(nk.gelu(a))), {"a": a}
    m1, m2 = leaf(2, 3, 4), leaf(4, 5)
    yield "matmul", (lambda: proj(nk.matmul(m1, m2))), {"m1": m1, "m2": m2}
    yield "transpose", (lambda: proj(nk.transpose(m1, (2, 0, 1)))), {"m1": m1}
    yield "reshape", (lambda: proj(nk.reshape(m1, (6, 4)))), {"m1": m1}
    yield "concat", (lambda: proj(nk.concat([a, c], axis=-1))), {"a": a, "c": c}
    yield "sum", (lambda: proj(nk.sum(m1, axis=1))), {"m1": m1}
    yield "mean", (lambda: proj(nk.mean(m1, axis=-1))), {"m1": m1}
    yield "softmax", (lambda: proj(nk.softmax_lastdim(a))), {"a": a}
    g = leaf(4)
    yield "rms_norm", (lambda: proj(nk.rms_norm(a, g))), {"a": a, "g": g}
    w, bias = leaf(4, 3), leaf(3)
    yield "linear", (lambda: proj(nk.linear(a, w, bias))), {"a": a, "w": w, "bias": bias}
    target = rng.normal(size=(3, 4))
    yield "mse_loss", (lambda: nk.mse_loss(a, target)), {"a": a}
    yield "cross_entropy", (lambda: nk.cross_entropy(a, np.array([0, 3, 1]))), {"a": a}

    t2v = Token2VectorParams.init(5, 3, 4, rng)
    _randomize(t2v.named(), rng)
    tokens = leaf(2, 5, 3)
    yield "token2vector", (lambda: proj(token2vector(tokens, t2v))), dict(t2v.named(), tokens=tokens)

    block = PreLnBlockParams.init(8, 2, 16, rng, bias=True)
    _randomize(block.named(), rng)
    x = leaf(2, 4, 8)
    yield "mhsa", (lambda: proj(mhsa(x, block)[0])), dict(block.named(), x=x)
    yield "preln_block", (lambda: proj(preln_block(x, block)[0])), dict(block.named(), x=x)

    emb = InvertedEmbeddingParams.init(6, 8, rng)
    _randomize(emb.named(), rng)
    hist = leaf(2, 6, 4)
    yield "inverted_embed", (lambda: proj(inverted_embed(hist, emb))), dict(emb.named(), hist=hist)

    cma = CmaParams.init(8, rng, bias=True)
    _randomize(cma.named(), rng)
    p = leaf(2, 4, 8)
    for conv in ("equation", "prose"):
        yield f"cma[{conv}]", (lambda conv=conv: proj(cross_modality_attention(x, p, cma, conv).h)), \
            dict(cma.named(), x=x, p=p)

    stack = EncoderStack.init(2, 8, 2, 16, rng, True)
    _randomize(stack.named(), rng)
    yield "cmd_decode", (lambda: proj(cmd_decode(x, stack)[0])), dict(stack.named(), x=x)

    shared, per_var = ForecastHead.init(8, 3, rng), ForecastHead.init(8, 3, rng, n_vars=4)
    _randomize(shared.named(), rng)
    _randomize(per_var.named(), rng)
    yield "forecast_head", (lambda: proj(forecast_head(x, shared))), dict(shared.named(), x=x)
    yield "forecast_head[per-variable]", (lambda: proj(forecast_head(x, per_var))), dict(per_var.named(), x=x)
    cls = ClassifyHead.init(8, 3, rng)
    _randomize(cls.named(), rng)
    yield "classify_head", (lambda: proj(classify_head(x, cls))), dict(cls.named(), x=x)

    for variant in ("full", "wo_cma", "wo_cpe", "wo_tse", "wo_cmd"):
        cfg = ModelConfig(n_vars=4, history=8, horizon=4, d=8, depth=1, n_heads=2, l_max=6, token_dim=5,
                          variant=variant, seed=1)
        model = TimeMKG(cfg)
        _randomize(model.named_parameters(), rng)
        xh, toks = rng.normal(size=(2, 8, 4)), rng.normal(size=(4, 6, 5))
        yield f"model[{variant}]", (lambda model=model, xh=xh, toks=toks: proj(model(xh, toks).output)), \
            model.named_parameters(active_only=True)
    cfg = ModelConfig(n_vars=4, history=8, task="classify", n_classes=3, d=8, depth=1, n_heads=2, l_max=6,
                      token_dim=5, seed=2)
    clf = TimeMKG(cfg)
    _randomize(clf.named_parameters(), rng)
    xh, toks = rng.normal(size=(2, 8, 4)), rng.normal(size=(4, 6, 5))
    yield "model[classify]", (lambda: nk.cross_entropy(clf(xh, toks).output, np.array([0, 2]))), \
        clf.named_parameters()


def test_criterion_1_gradient_integrity():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst, failures, count = 0.0, [], 0
    for name, fn, params in _gradient_cases(rng):
        errs = nk.check_gradients(fn, params)
        count += 1
        err = max(errs.values())
        worst = max(worst, err)
        if err > 1e-4:
            failures.append(f"{name}={err:.2e}")
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < 60.0
    report(1, ok, f"{count} cases, worst rel error {worst:.2e} (<= 1e-4), {elapsed:.1f}s (< 60s)"
           + (f"; failing: {', '.join(failures)}" if failures else ""))


# ---------------------------------------------------------------------------
# 2. closed-form hand cases


def test_criterion_2_equation_fidelity():
    errors = {}
    errors["rms_norm [3,-3]"] = np.max(np.abs(nk.rms_norm([3.0, -3.0], np.ones(2), eps=0.0).data - [1.0, -1.0]))
    x = np.array([0.5, -2.0, 4.0])
    g = np.array([1.0, 2.0, 0.5])
    closed = x / np.sqrt(np.mean(x * x) + 1e-8) * g
    errors["rms_norm closed form"] = np.max(np.abs(nk.rms_norm(x, g, eps=1e-8).data - closed))
    t2v = Token2VectorParams(nk.Tensor([[1.0], [1.0]]), nk.Tensor([0.0]), nk.Tensor([[2.0]]), nk.Tensor([0.0]))
    errors["token2vector 3+5 -> 16"] = abs(token2vector(np.array([[3.0], [5.0]]), t2v, "identity").data[0] - 16.0)
    rng = np.random.default_rng(3)
    cma = CmaParams.init(6, rng, bias=True)
    cma.wv.data[...] = 0.0
    cma.bv.data[...] = 0.0
    xs, ps = rng.normal(size=(5, 6)), rng.normal(size=(5, 6))
    out = cross_modality_attention(xs, ps, cma).h.data
    # with the value path off, only the output bias remains on top of the residual
    errors["cma zero value path"] = np.max(np.abs(out - (xs + cma.bo.data)))
    cma.bo.data[...] = 0.0
    errors["cma zero value path, no bias"] = np.max(np.abs(cross_modality_attention(xs, ps, cma).h.data - xs))
    worst = max(errors.values())
    report(2, worst <= 1e-12, ", ".join(f"{k}: {v:.1e}" for k, v in errors.items()))


# ---------------------------------------------------------------------------
# 3. structural invariants


def test_criterion_3_structural_invariants():
    rng = np.random.default_rng(11)
    stoch, equiv = 0.0, 0.0
    for trial in range(12):
        n = int(rng.integers(1, 9))
        cfg = ModelConfig(n_vars=n, history=10, horizon=3, d=8, depth=2, n_heads=2, cmd_depth=1, l_max=6,
                          token_dim=5, seed=trial, qkv_convention=("equation", "prose")[trial % 2])
        model = TimeMKG(cfg)
        _randomize(model.named_parameters(), rng)
        x, toks = rng.normal(size=(2, 10, n)), rng.normal(size=(n, 6, 5))
        base = model(x, toks)
        perm = rng.permutation(n)
        moved = model(x[..., perm], toks[perm])
        equiv = max(equiv, np.max(np.abs(moved.output.data - base.output.data[..., perm])))
        for key, scores in base.scores.items():
            layers = scores if isinstance(scores, list) else [scores]
            other = moved.scores[key] if isinstance(scores, list) else [moved.scores[key]]
            for s0, s1 in zip(layers, other):
                stoch = max(stoch, np.max(np.abs(s0.sum(axis=-1) - 1.0)))
                equiv = max(equiv, np.max(np.abs(s1 - s0[..., perm, :][..., :, perm])))
    block = PreLnBlockParams.init(8, 2, 16, rng, bias=True)
    for p in block.named().values():
        if p is not block.gamma1 and p is not block.gamma2:
            p.data[...] = 0.0
    xb = rng.normal(size=(3, 5, 8))
    identity = np.array_equal(preln_block(xb, block)[0].data, xb)
    ok = stoch <= 1e-12 and equiv <= 1e-9 and identity
    report(3, ok, f"row-sum error {stoch:.1e} (<= 1e-12), permutation error {equiv:.1e} (<= 1e-9), "
                  f"zero-weight block identity {'bitwise' if identity else 'VIOLATED'}")


# ---------------------------------------------------------------------------
# 4. retrieval, prompts and the embedding store


def _random_graph(rng, n_nodes):
    g = Mkg()
    names = [f"v{i}" for i in range(n_nodes)]
    tags = ["load", "weather", "grid", "temp"]
    for name in names:
        g.add_node(name, tags=list(rng.choice(tags, size=int(rng.integers(0, 3)), replace=False)))
    for _ in range(int(rng.integers(0, 3 * n_nodes))):
        h, t = rng.choice(names, size=2)
        g.add_triplet(Triplet(str(h), str(rng.choice(["drives", "cools", "feeds"])), str(t), reflexive=h == t))
    return g


def _oracle_local(g, v):
    return {t.key for t in g.edges if v in (t.head, t.tail)}


def _oracle_global(g, v, k):
    # distances by repeated relaxation over the undirected edge list
    dist = {v: 0}
    for _ in range(len(g.nodes)):
        for t in g.edges:
            for a, b in ((t.head, t.tail), (t.tail, t.head)):
                if a in dist and dist[a] + 1 < dist.get(b, 10 ** 9):
                    dist[b] = dist[a] + 1
    near = {u for u, dd in dist.items() if dd <= k - 1} if k >= 1 else set()
    tags = g.node(v).tags
    tagged = {u for u in g.nodes if u != v and tags & g.node(u).tags}
    return {t.key for t in g.edges
            if v in (t.head, t.tail) or t.head in near or t.tail in near or t.head in tagged or t.tail in tagged}


def test_criterion_4_retrieval_and_store(tmp_path):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(200):
        g = _random_graph(rng, int(rng.integers(1, 21)))
        for v in g.nodes:
            k = int(rng.integers(0, 4))
            mismatches += set(retrieve_local(g, v).keys()) != _oracle_local(g, v)
            mismatches += set(retrieve_global(g, v, k).keys()) != _oracle_global(g, v, k)

    g = gen_synthetic(default_spec(seed=0)).graph
    names = sorted(g.nodes)
    once = [p.text.encode() for p in build_prompts(g, names)]
    again = [p.text.encode() for p in build_prompts(g.copy(), names)]
    deterministic = once == again

    params = Token2VectorParams.init(64, 16, 8, rng)
    prompts = build_prompts(g, names)
    store = build_prompt_store(prompts, EmbedderSpec(dim=16), params, tmp_path / "s.bin")
    loaded = load_prompt_store(tmp_path / "s.bin", prompts)
    exact = np.array_equal(loaded.matrix, store.matrix) and loaded.hashes == store.hashes
    rewritten = tmp_path / "s2.bin"
    build_prompt_store(prompts, EmbedderSpec(dim=16), params, rewritten)
    exact = exact and rewritten.read_bytes() == (tmp_path / "s.bin").read_bytes()

    missed = 0
    texts = {p.variable_id: p.text for p in prompts}
    for vid, text in texts.items():
        for pos in rng.choice(len(text), size=min(5, len(text)), replace=False):
            edited = dict(texts)
            ch = "x" if text[pos] != "x" else "y"
            edited[vid] = text[:pos] + ch + text[pos + 1:]
            try:
                load_prompt_store(tmp_path / "s.bin", prompt_records(edited))
                missed += 1
            except StaleCache as exc:
                missed += exc.variables != [vid]
    ok = mismatches == 0 and deterministic and exact and missed == 0
    report(4, ok, f"oracle mismatches {mismatches} on 200 graphs, prompts byte-deterministic={deterministic}, "
                  f"store bit-exact={exact}, undetected single-byte edits {missed}")


# ---------------------------------------------------------------------------
# 5. learning sanity


def _overfit_run():
    data = gen_synthetic(default_spec(seed=0, length=64))
    ds = make_windows(data.series[:23], 12, 4, splits=(1.0,), names=data.names)
    cfg = ModelConfig(n_vars=5, history=12, horizon=4, d=16, depth=1, n_heads=2, l_max=64, token_dim=16)
    model = TimeMKG(cfg)
    bank = prompt_bank_for(model, data.graph, data.names)
    res = train(model, ds, bank.tokens, TrainConfig(lr=1e-2, steps=200, batch_size=8, patience=0))
    return len(ds["train"]), res, model.state_dict()


def test_criterion_5_learning_sanity():
    start = time.perf_counter()
    n_windows, res, state = _overfit_run()
    elapsed = time.perf_counter() - start
    _, res2, state2 = _overfit_run()
    bitwise = res.losses == res2.losses and all(np.array_equal(state[k], state2[k]) for k in state)
    final = res.losses[-1]
    ok = n_windows == 8 and res.steps_run <= 200 and final < 1e-2 and elapsed < 120 and bitwise
    report(5, ok, f"{n_windows} windows, train MSE {final:.2e} after {res.steps_run} steps (< 1e-2), "
                  f"{elapsed:.1f}s (< 120s), seeded rerun bitwise={bitwise}")


# ---------------------------------------------------------------------------
# 6. desk-scale ablation


def test_criterion_6_ablation_direction():
    start = time.perf_counter()
    setup = AblationSetup()
    mse = {k: np.array(v) for k, v in run_ablation(setup).items()}
    elapsed = time.perf_counter() - start
    med = {k: float(np.median(v)) for k, v in mse.items()}
    iqr = {k: tuple(np.percentile(v, [25, 75])) for k, v in mse.items()}
    worse = {k: float(np.mean(mse["full"] > mse[k])) for k in ("wo_cma", "wo_mkg")}
    ordering = {k: med["full"] <= med[k] for k in ("wo_cma", "wo_mkg")}
    summary = "; ".join(f"{k} median {med[k]:.4f} IQR [{iqr[k][0]:.4f}, {iqr[k][1]:.4f}]" for k in mse)
    detail = (f"{len(setup.seeds)} seeds, {elapsed:.0f}s (< 900s); {summary}; "
              f"median full<=wo_cma {ordering['wo_cma']}, full<=wo_mkg {ordering['wo_mkg']}; "
              f"full worse in {worse['wo_cma']:.0%} of seeds vs wo_cma, {worse['wo_mkg']:.0%} vs wo_mkg "
              f"(blocking above 70%)")
    blocking = max(worse.values()) > 0.7
    report(6, all(ordering.values()) and not blocking and elapsed < 900, detail)


# ---------------------------------------------------------------------------
# 7. metric oracle


def _straight_line_metrics(pred, truth, insample, m):
    """Loop-by-loop reimplementation, one (window, variable) series at a time."""
    W, L, N = pred.shape
    T = insample.shape[1]
    se = ae = sm = 0.0
    mase_terms, naive_sm, naive_mase_terms = [], 0.0, []
    for w in range(W):
        for j in range(N):
            scale = sum(abs(insample[w, t, j] - insample[w, t - m, j]) for t in range(m, T)) / (T - m)
            err_model = err_naive = 0.0
            for h in range(L):
                p, y = pred[w, h, j], truth[w, h, j]
                naive = insample[w, T - m + (h % m), j]
                se += (p - y) ** 2
                ae += abs(p - y)
                sm += 0.0 if abs(p) + abs(y) == 0 else abs(p - y) / (abs(p) + abs(y))
                naive_sm += 0.0 if abs(naive) + abs(y) == 0 else abs(naive - y) / (abs(naive) + abs(y))
                err_model += abs(p - y)
                err_naive += abs(naive - y)
            mase_terms.append(err_model / L / scale)
            naive_mase_terms.append(err_naive / L / scale)
    count = W * L * N
    smape = 200.0 * sm / count
    mase = sum(mase_terms) / len(mase_terms)
    owa = 0.5 * (smape / (200.0 * naive_sm / count) + mase / (sum(naive_mase_terms) / len(naive_mase_terms)))
    return {"mse": se / count, "mae": ae / count, "smape": smape, "mase": mase, "owa": owa}


def test_criterion_7_metric_oracle():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        W, L, N, T = (int(rng.integers(1, 4)), int(rng.integers(1, 7)), int(rng.integers(1, 4)),
                      int(rng.integers(6, 12)))
        m = int(rng.integers(1, 4))
        pred, truth = rng.normal(size=(W, L, N)), rng.normal(size=(W, L, N))
        insample = rng.normal(size=(W, T, N))
        if rng.random() < 0.2:
            pred[0, 0, 0] = truth[0, 0, 0] = 0.0  # exercise the 0/0 SMAPE convention
        got = evaluate_forecast(pred, truth, insample, m)
        want = _straight_line_metrics(pred, truth, insample, m)
        for key, value in want.items():
            worst = max(worst, abs(getattr(got, key) - value) / max(1.0, abs(value)))
    report(7, worst <= 1e-9, f"100 random pairs, worst deviation {worst:.1e} (<= 1e-9)")


# ---------------------------------------------------------------------------
# 8. attention export


def test_criterion_8_attention_export(tmp_path, capsys):
    data = gen_synthetic(default_spec(seed=1, length=300))
    write_series_csv(tmp_path / "data.csv", data.names, data.series)
    save_mkg(data.graph, tmp_path / "graph.jsonl")
    (tmp_path / "run.ini").write_text(
        "[data]\npath = data.csv\nhistory = 16\nhorizon = 4\n[graph]\npath = graph.jsonl\n"
        "[model]\nd = 8\ndepth = 2\nn_heads = 2\nl_max = 64\ntoken_dim = 8\n[train]\nsteps = 20\n")
    assert main(["train", "--config", str(tmp_path / "run.ini"), "--out", str(tmp_path / "ck.bin")]) == 0
    capsys.readouterr()
    code = main(["export-attention", "--checkpoint", str(tmp_path / "ck.bin"), "--sample", "3",
                 "--out-dir", str(tmp_path / "att")])
    summary = json.loads(capsys.readouterr().out)
    files = summary["files"] if code == 0 else []
    n = len(data.names)
    worst, shapes_ok = 0.0, True
    for name in files:
        lines = (tmp_path / "att" / name).read_text().splitlines()
        header = lines[0].split(",")
        mat = np.array([row.split(",")[1:] for row in lines[1:]], dtype=float)
        shapes_ok &= header[1:] == data.names and mat.shape == (n, n)
        worst = max(worst, np.max(np.abs(mat.sum(axis=1) - 1.0)))
    needed = {"tse_layer0.csv", "tse_layer1.csv", "cpe_layer0.csv", "cpe_layer1.csv", "cma.csv"}
    ok = code == 0 and needed <= set(files) and shapes_ok and worst <= 1e-9
    report(8, ok, f"files {sorted(files)}, {n}x{n} named matrices={shapes_ok}, worst row-sum error {worst:.1e}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
