"""Acceptance criteria, one test each; every test prints a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``.  Criterion 6 trains
ten desk-scale models and takes several minutes.
"""

import statistics
import time
import warnings

import numpy as np
import pytest
from conftest import EXAMPLE_SENTENCES, goal_note
from oracles import brute_status, central_difference, lesa_reference, naive_f1, plain_attention, raw_tables, relative_error

from clinnum.blinding import PLACEHOLDER, blind
from clinnum.criticality import PatientContext, RangePolicy, Status, ThresholdTables, assess, heart_rate_range
from clinnum.criticality import pulmonary_diameter_nominal
from clinnum.errors import DegenerateClassWarning
from clinnum.labels import ClassLabel
from clinnum.lesa import LesaParams, lesa_backward, lesa_forward
from clinnum.metrics import ConfusionCounts, f1_per_class, macro_f1
from clinnum.model import ModelConfig, TokenClassifier, Vocab
from clinnum.pipeline import assess_values, gold_values
from clinnum.tokenizer import NumericLexeme, Range, Scalar, Sequence, TokenKind, tokenize
from clinnum.config import DEFAULTS, train_config
from clinnum.training import run_experiment


def verdict(capsys, n, name, ok, elapsed, limit, detail=""):
    ok = ok and elapsed < limit
    line = f"CRITERION {n} [{name}]: {'PASS' if ok else 'FAIL'} ({elapsed:.1f}s, limit {limit:g}s) {detail}"
    with capsys.disabled():
        print("\n" + line)
    return ok


def test_criterion_1_lesa_math(capsys):
    t0 = time.perf_counter()
    worst = {"rowsum": 0.0, "sym": 0.0, "eig": np.inf, "additive": 0.0, "ablated": 0.0, "reference": 0.0}
    for seed in range(24):
        rng = np.random.default_rng(seed)
        L = int(rng.integers(1, 17))
        H = [1, 2, 4][seed % 3]
        D = H * int(rng.choice([2, 4, 8]))
        X, X_l = rng.normal(size=(L + 1, D)), rng.normal(size=(8, D))
        p = LesaParams.random(D, H, rng, std=0.5)
        out, acts = lesa_forward(X, X_l, p)
        S, C = acts.self_attn[0], acts.cosim[0]
        worst["rowsum"] = max(worst["rowsum"], float(np.abs(S.sum(-1) - 1).max()))
        worst["sym"] = max(worst["sym"], float(np.abs(C - C.transpose(0, 2, 1)).max()))
        worst["eig"] = min(worst["eig"], min(float(np.linalg.eigvalsh(c).min()) for c in C))
        if not np.array_equal(acts.new_attn, acts.self_attn + acts.cosim):
            worst["additive"] = 1.0
        ref_out, _, _ = lesa_reference(X, X_l, p.W_Q, p.W_K, p.W_V, H)
        worst["reference"] = max(worst["reference"], float(np.abs(out - ref_out).max()))
        ablated, _ = lesa_forward(X, X_l, p, use_cosim=False)
        plain = plain_attention(X, p.W_Q, p.W_K, p.W_V, H)
        worst["ablated"] = max(worst["ablated"], float(np.abs(ablated - plain).max()))
    elapsed = time.perf_counter() - t0
    ok = (worst["rowsum"] <= 1e-9 and worst["sym"] <= 1e-12 and worst["eig"] >= -1e-10
          and worst["additive"] == 0 and worst["ablated"] <= 1e-12)
    assert verdict(capsys, 1, "LESA math", ok, elapsed, 10, str({k: f"{v:.2e}" for k, v in worst.items()}))


def _micro(seed):
    words = "fc nombre bpm sat % gradient mmhg apgar civ mm".split()
    vocab = Vocab(words)
    cfg = ModelConfig(vocab_size=len(vocab), dim=8, heads=2, layers=2, dropout=0.0, max_len=6, init_std=0.3, seed=seed)
    return TokenClassifier(cfg, vocab)


def test_criterion_2_gradients(capsys):
    t0 = time.perf_counter()
    layer_worst = model_worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(500 + seed)
        L, H = int(rng.integers(1, 9)), [1, 2, 4][seed % 3]
        D = H * 4
        X, X_l = rng.normal(size=(L + 1, D)), rng.normal(size=(8, D))
        p = LesaParams.random(D, H, rng, std=0.5)
        R = rng.normal(size=X.shape)
        _, acts = lesa_forward(X, X_l, p)
        g = lesa_backward(acts, R)

        def layer_loss():
            return float(np.sum(lesa_forward(X, X_l, p)[0] * R))

        for name, arr in (("X", X), ("X_l", X_l), ("W_K", p.W_K), ("W_Q", p.W_Q), ("W_V", p.W_V)):
            layer_worst = max(layer_worst, relative_error(getattr(g, name), central_difference(layer_loss, arr, 1e-5)))

        m = _micro(seed)
        ids = rng.integers(0, len(m.vocab), size=(2, 5))
        labels = rng.integers(0, 8, size=(2, 5))
        mask = np.ones((2, 5), dtype=bool)
        mask[1, 3:] = False
        _, grads = m.loss_and_grads(ids, labels, mask)

        def model_loss():
            return m.loss(ids, labels, mask)

        for name, arr in m.params.items():
            num = central_difference(model_loss, arr, 1e-5)
            if np.linalg.norm(num) + np.linalg.norm(grads[name]) < 1e-11:
                continue
            model_worst = max(model_worst, relative_error(grads[name], num))
    elapsed = time.perf_counter() - t0
    ok = layer_worst <= 1e-4 and model_worst <= 1e-3
    assert verdict(capsys, 2, "gradient check", ok, elapsed, 60,
                   f"layer rel err {layer_worst:.2e}, full model rel err {model_worst:.2e}")


def test_criterion_3_blinding(capsys, default_corpus):
    t0 = time.perf_counter()
    texts = [n.text for n in default_corpus] + EXAMPLE_SENTENCES
    failures = []
    for text in texts:
        toks = tokenize(text)
        b = blind(toks)
        if blind(b.tokens).tokens != b.tokens:
            failures.append(("idempotence", text))
        if b.restore() != toks:
            failures.append(("reversibility", text))
        if len(b.tokens) != len(toks):
            failures.append(("length", text))
        for orig, new in zip(toks, b.tokens):
            if orig.kind is not TokenKind.QUANT and new.text != orig.text:
                failures.append(("non-numeric altered", orig.text))
            if orig.kind is TokenKind.QUANT and new.text != PLACEHOLDER:
                failures.append(("number kept", orig.text))
    codes = tokenize(EXAMPLE_SENTENCES[4])
    kept = blind(codes).tokens
    for word in ("B1B2", "G1P3", "22q11", "mm2", "cm3"):
        if word not in [t.text for t in kept]:
            failures.append(("exemption", word))
    elapsed = time.perf_counter() - t0
    assert verdict(capsys, 3, "blinding", not failures, elapsed, 5,
                   f"{len(texts)} texts, {len(failures)} failures {failures[:3]}")


def test_criterion_4_criticality(capsys):
    t0 = time.perf_counter()
    tables, raw = ThresholdTables.load(), raw_tables()
    rng = np.random.default_rng(11)
    mismatches = 0
    for _ in range(10_000):
        label = ClassLabel(int(rng.integers(0, 8)))
        a = float(np.round(rng.uniform(0, 220), 1))
        form = [Scalar(a), Range(a, a + float(rng.integers(0, 40))), Sequence((a, a + 1, a + 2))][int(rng.integers(0, 3))]
        age = None if rng.random() < 0.1 else float(rng.integers(0, 240))
        weight = None if rng.random() < 0.1 else float(np.round(rng.uniform(1, 40), 1))
        hint = [None, "ejection", "shortening"][int(rng.integers(0, 3))]
        words = {None: [], "ejection": ["Simpson"], "shortening": ["raccourcissement"]}[hint]
        policy = ["any", "all", "midpoint"][int(rng.integers(0, 3))]
        lex = NumericLexeme("x", form)
        got = assess(lex, label, PatientContext(age, weight), tables, RangePolicy(policy), words).status.value
        mismatches += got != brute_status(lex.components, label.name, age, weight, raw, policy, hint)
    hr = [(0, 70, 190), (1, 80, 160), (12, 80, 130), (36, 80, 120), (60, 75, 115), (84, 70, 110), (120, 60, 100)]
    hr_ok = all(heart_rate_range(age, tables) == (lo, hi) for age, lo, hi in hr)
    diam = dict([(3, 4.2), (4, 5.3), (5, 6.0), (6, 6.7), (7, 7.0), (8, 7.8), (9, 8.2), (10, 8.5), (12, 9.2),
                 (14, 9.5), (16, 10.2), (18, 10.6), (20, 11.0), (25, 11.7), (30, 12.4), (35, 12.8)])
    d_ok = all(pulmonary_diameter_nominal(w, tables) == d for w, d in diam.items())
    interp = abs(pulmonary_diameter_nominal(11, tables) - 8.85)
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and hr_ok and d_ok and interp <= 1e-9
    assert verdict(capsys, 4, "criticality oracle", ok, elapsed, 5,
                   f"mismatches {mismatches}/10000, heart-rate table {hr_ok}, diameter table {d_ok}, 11 kg err {interp:.1e}")


def test_criterion_5_metrics(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 80))
        gold = rng.integers(0, 8, n)
        pred = np.where(rng.random(n) < 0.5, gold, rng.integers(0, 8, n))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateClassWarning)
            got = f1_per_class(ConfusionCounts.from_labels(gold, pred))
        want = naive_f1(gold.tolist(), pred.tolist())
        worst = max(worst, float(np.abs(got - want).max()), abs(macro_f1(got) - sum(want) / 8))
    row = [0.99, 0.56, 0.84, 0.92, 0.85, 0.97, 0.98, 0.99]
    mean = macro_f1(row)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and abs(mean - 0.8875) <= 1e-12 and round(mean, 2) == 0.89
    assert verdict(capsys, 5, "metric oracle", ok, elapsed, 5, f"max deviation {worst:.1e}, reference row mean {mean:.4f}")


@pytest.mark.slow
def test_criterion_6_training(capsys, default_corpus):
    t0 = time.perf_counter()
    cfg = train_config(DEFAULTS)  # desk-scale training settings used by the CLI
    scores: dict[str, list[float]] = {}
    for variant in ("lesa-blinded", "plain-unblinded"):
        for seed in range(5):
            res = run_experiment(default_corpus, variant, seed, cfg, DEFAULTS["model"], DEFAULTS["train"]["split_seed"])
            scores.setdefault(variant, []).append(res.test_macro_f1)
            with capsys.disabled():
                print(f"\n  {variant} seed {seed}: test macro F1 {res.test_macro_f1:.4f} "
                      f"(best epoch {res.train.best_epoch}, {time.perf_counter() - t0:.0f}s)")
    elapsed = time.perf_counter() - t0
    lesa, plain = scores["lesa-blinded"], scores["plain-unblinded"]
    ok = min(lesa) >= 0.80 and statistics.median(lesa) >= statistics.median(plain)
    assert verdict(capsys, 6, "desk-scale training", ok, elapsed, 1800,
                   f"LESA+blinded min {min(lesa):.3f} median {statistics.median(lesa):.3f}; "
                   f"plain+unblinded median {statistics.median(plain):.3f}")


def test_criterion_7_goal_note(capsys):
    t0 = time.perf_counter()
    tokens, values = gold_values(goal_note())
    rows = assess_values(tokens, values, PatientContext(), ThresholdTables.load(), RangePolicy.ANY)
    got = [(r.value.lexeme.raw, r.value.label.name, r.attribute, r.verdict.status) for r in rows]
    want = [("14/08", "O", "Divers (date)", Status.UNKNOWN),
            ("50-60", "G", rows[1].attribute, Status.EXPERT_REVIEW),
            ("80-85", "SO2", rows[2].attribute, Status.CRITICAL)]
    documented = "habitual" in rows[2].verdict.note
    elapsed = time.perf_counter() - t0
    ok = got == want and documented and "Gradient" in rows[1].attribute and "oxyg" in rows[2].attribute
    assert verdict(capsys, 7, "goal-note pipeline", ok, elapsed, 5,
                   "; ".join(f"{v} -> {a} [{s.value}]" for v, _, a, s in got))
