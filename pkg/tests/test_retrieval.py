import math
import random
import re
from datetime import timedelta

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alignbot.domain import TaskDescription
from alignbot.retrieval import (
    EXPLOIT,
    EXPLORE,
    CaseEntry,
    CaseOutcome,
    CaseStore,
    EmptyCandidates,
    GradientKind,
    RetrievalConfig,
    RetrievalError,
    UnknownCase,
    apply_outcome,
    build_tfidf,
    candidate_set,
    gradient,
    select_cases,
    select_cases_with_trace,
    similarity,
    softmax_weights,
    tokenize,
)

from conftest import EPOCH, make_plan


# --------------------------------------------------------------------------
# Independent brute-force oracle: dense vectors over a sorted vocabulary,
# recomputing everything from scratch. Kept deliberately different in
# structure from the package implementation.

def _toks(s):
    return re.findall(r"[a-z0-9]+", s.lower())


def oracle_vectors(corpus_texts):
    docs = [_toks(t) for t in corpus_texts]
    vocab = sorted({t for d in docs for t in d})
    n_docs = len(docs)
    df = {t: sum(1 for d in docs if t in d) for t in vocab}

    def idf(tok):
        return math.log((1 + n_docs) / (1 + df.get(tok, 0))) + 1.0

    def build(tokens):
        vec = [0.0] * len(vocab)
        if tokens:
            for i, tok in enumerate(vocab):
                c = tokens.count(tok)
                if c:
                    vec[i] = (c / len(tokens)) * idf(tok)
        norm = math.sqrt(sum(x * x for x in vec))
        return [x / norm for x in vec] if norm else vec

    return vocab, [build(d) for d in docs], build


def oracle_scores(corpus_texts, query):
    vocab, doc_vecs, build = oracle_vectors(corpus_texts)
    known = [t for t in _toks(query) if any(t in _toks(c) for c in corpus_texts)]
    qv = build(known)
    return [sum(a * b for a, b in zip(qv, dv)) for dv in doc_vecs]


def case(case_id, task, priority=0.5, usage=0, age=0):
    return CaseEntry(
        case_id=case_id,
        plan=make_plan(["grasp(cup)", "place(cup, shelf)"], plan_id=f"plan-{case_id}"),
        task=TaskDescription(task),
        priority=priority,
        usage_count=usage,
        created_at=EPOCH + timedelta(seconds=age),
    )


THREE_DOCS = ["put apple in bowl", "put cup on shelf", "open fridge door"]


class TestTokenize:
    def test_lowercase_split_drop_empty(self):
        assert tokenize("Open the DRAWER, now!") == ["open", "the", "drawer", "now"]
        assert tokenize("  --  ") == []
        assert tokenize("turn_on(lamp)") == ["turn", "on", "lamp"]


class TestBuildTfIdf:
    def test_empty_corpus(self):
        model = build_tfidf([])
        assert model.document_count == 0
        assert model.vocabulary == {}

    def test_single_document_mass_and_norm(self):
        model = build_tfidf([("c1", TaskDescription("open the drawer"))])
        vec = model.document_vectors["c1"]
        assert set(vec) == {"open", "the", "drawer"}
        assert math.isclose(math.sqrt(sum(w * w for w in vec.values())), 1.0, abs_tol=1e-12)

    def test_three_document_weights_match_oracle(self):
        corpus = [(f"c{i+1}", TaskDescription(t)) for i, t in enumerate(THREE_DOCS)]
        model = build_tfidf(corpus)
        vocab, doc_vecs, _ = oracle_vectors(THREE_DOCS)
        for i, (cid, _task) in enumerate(corpus):
            got = model.document_vectors[cid]
            for j, tok in enumerate(vocab):
                assert abs(got.get(tok, 0.0) - doc_vecs[i][j]) < 1e-9


class TestSimilarity:
    def test_identical_text_is_one(self):
        corpus = [(f"c{i+1}", TaskDescription(t)) for i, t in enumerate(THREE_DOCS)]
        model = build_tfidf(corpus)
        assert abs(similarity(model, TaskDescription("put apple in bowl"), "c1") - 1.0) < 1e-9

    def test_disjoint_tokens_zero(self):
        corpus = [("c1", TaskDescription("open the drawer"))]
        model = build_tfidf(corpus)
        assert similarity(model, TaskDescription("wipe kitchen counter"), "c1") == 0.0

    def test_ranking_and_scores_match_oracle(self):
        corpus = [(f"c{i+1}", TaskDescription(t)) for i, t in enumerate(THREE_DOCS)]
        model = build_tfidf(corpus)
        query = TaskDescription("put the apple in the bowl")
        got = [similarity(model, query, f"c{i+1}") for i in range(3)]
        expected = oracle_scores(THREE_DOCS, query.text)
        for g, e in zip(got, expected):
            assert abs(g - e) < 1e-9
        assert got[0] > got[1] > got[2]

    def test_unknown_case(self):
        model = build_tfidf([("c1", TaskDescription("open the drawer"))])
        with pytest.raises(UnknownCase):
            similarity(model, TaskDescription("open"), "nope")

    def test_random_corpora_match_oracle(self):
        rng = random.Random(13)
        words = ["apple", "bowl", "cup", "drawer", "open", "put", "shelf", "wipe", "pour", "glass"]
        for _ in range(25):
            texts = [
                " ".join(rng.choices(words, k=rng.randint(1, 8)))
                for _ in range(rng.randint(1, 12))
            ]
            corpus = [(f"c{i}", TaskDescription(t)) for i, t in enumerate(texts)]
            model = build_tfidf(corpus)
            query = " ".join(rng.choices(words, k=rng.randint(1, 6)))
            got = [similarity(model, TaskDescription(query), f"c{i}") for i in range(len(texts))]
            expected = oracle_scores(texts, query)
            for g, e in zip(got, expected):
                assert abs(g - e) < 1e-9


class TestCandidateSet:
    def test_tau_one_empty_unless_identical(self):
        cases = [case("a", "open the drawer"), case("b", "wipe the table")]
        cfg = RetrievalConfig(tau=1.0)
        assert candidate_set(cases, TaskDescription("open the drawer please"), cfg) == []

    def test_tau_zero_all_sorted_by_priority(self):
        cases = [
            case("a", "open the drawer", priority=0.3),
            case("b", "open the fridge", priority=0.9),
            case("c", "open the cabinet", priority=0.6),
        ]
        cfg = RetrievalConfig(tau=0.0)
        got = candidate_set(cases, TaskDescription("open the door"), cfg)
        assert [c.case_id for c in got] == ["b", "c", "a"]

    def test_priority_tie_breaks_newest_then_id(self):
        cases = [
            case("b", "open the drawer", priority=0.5, age=0),
            case("a", "open the drawer", priority=0.5, age=0),
            case("z", "open the drawer", priority=0.5, age=10),
        ]
        cfg = RetrievalConfig(tau=0.0)
        got = candidate_set(cases, TaskDescription("open the drawer"), cfg)
        assert [c.case_id for c in got] == ["z", "a", "b"]

    def test_membership_matches_oracle_filter(self):
        rng = random.Random(21)
        words = ["apple", "bowl", "cup", "drawer", "open", "put", "shelf", "close"]
        cases = [
            case(f"c{i:02d}", " ".join(rng.choices(words, k=rng.randint(2, 6))), priority=rng.uniform(0.1, 1.0))
            for i in range(20)
        ]
        query = TaskDescription("put the cup in the drawer")
        cfg = RetrievalConfig(tau=0.2)
        got = {c.case_id for c in candidate_set(cases, query, cfg)}
        scores = oracle_scores([c.task.text for c in cases], query.text)
        expected = {c.case_id for c, s in zip(cases, scores) if s > cfg.tau}
        assert got == expected


class TestSoftmax:
    def test_single_element(self):
        assert softmax_weights([case("a", "t", priority=0.5)]) == [1.0]

    def test_symmetry(self):
        weights = softmax_weights([case(c, "t", priority=0.5) for c in "abc"])
        for w in weights:
            assert abs(w - 1 / 3) < 1e-12

    def test_two_values_direct_evaluation(self):
        weights = softmax_weights([case("a", "t", priority=1.0), case("b", "t", priority=0.1)])
        denom = math.exp(1.0) + math.exp(0.1)
        assert abs(weights[0] - math.exp(1.0) / denom) < 1e-12
        assert abs(weights[1] - math.exp(0.1) / denom) < 1e-12
        assert abs(weights[0] - 0.71095) < 5e-6
        assert abs(weights[1] - 0.28905) < 5e-6

    def test_empty_candidates(self):
        with pytest.raises(EmptyCandidates):
            softmax_weights([])

    @given(st.lists(st.floats(min_value=0.1, max_value=1.0), min_size=1, max_size=20))
    def test_normalized_and_order_preserving(self, priorities):
        cases = [case(f"c{i}", "t", priority=p) for i, p in enumerate(priorities)]
        weights = softmax_weights(cases)
        assert abs(sum(weights) - 1.0) < 1e-9
        ranked = sorted(zip(priorities, weights))
        for (pa, wa), (pb, wb) in zip(ranked, ranked[1:]):
            if pa <= pb:
                assert wa <= wb + 1e-12
        # argmax stability: the max-priority candidate's weight tops the list
        # (ties at float resolution allowed, hence >= with a one-ulp slack)
        top = priorities.index(max(priorities))
        assert all(weights[top] >= w - 1e-15 for w in weights)


class TestSelection:
    def _distinct(self):
        return [
            case("a", "t", priority=0.9),
            case("b", "t", priority=0.6),
            case("c", "t", priority=0.4),
            case("d", "t", priority=0.2),
        ]

    def test_epsilon_zero_pure_exploitation(self):
        cfg = RetrievalConfig(epsilon=0.0, k=1)
        rng = random.Random(0)
        for _ in range(200):
            got = select_cases(self._distinct(), cfg, rng)
            assert [c.case_id for c in got] == ["a"]

    def test_epsilon_one_uniform(self):
        cfg = RetrievalConfig(epsilon=1.0, k=1)
        rng = random.Random(42)
        cases = [case(c, "t", priority=0.5) for c in "abcd"]
        counts = {c: 0 for c in "abcd"}
        for _ in range(10_000):
            picked = select_cases(cases, cfg, rng)[0]
            counts[picked.case_id] += 1
        for c in "abcd":
            assert abs(counts[c] / 10_000 - 0.25) < 0.02

    def test_epsilon_mixture_frequency(self):
        cfg = RetrievalConfig(epsilon=0.2, k=1)
        rng = random.Random(7)
        cases = self._distinct()
        hits = 0
        for _ in range(10_000):
            if select_cases(cases, cfg, rng)[0].case_id == "a":
                hits += 1
        expected = (1 - cfg.epsilon) + cfg.epsilon / len(cases)
        assert abs(hits / 10_000 - expected) < 0.02

    def test_trace_branches(self):
        cfg = RetrievalConfig(epsilon=0.2, k=1)
        rng = random.Random(11)
        branches = []
        for _ in range(10_000):
            _, b = select_cases_with_trace(self._distinct(), cfg, rng)
            branches.extend(b)
        freq = branches.count(EXPLOIT) / len(branches)
        assert abs(freq - 0.8) < 0.02

    def test_without_replacement(self):
        cfg = RetrievalConfig(epsilon=0.5, k=4)
        rng = random.Random(5)
        got = select_cases(self._distinct(), cfg, rng)
        assert len({c.case_id for c in got}) == 4

    def test_k_caps_at_candidates(self):
        cfg = RetrievalConfig(epsilon=0.0, k=10)
        got = select_cases(self._distinct(), cfg, random.Random(0))
        assert [c.case_id for c in got] == ["a", "b", "c", "d"]

    def test_empty_candidates_empty_result(self):
        assert select_cases([], RetrievalConfig(), random.Random(0)) == []

    def test_deterministic_across_runs(self):
        cfg = RetrievalConfig(epsilon=0.3, k=2, rng_seed=99)
        seq1 = [select_cases(self._distinct(), cfg, random.Random(cfg.rng_seed)) for _ in range(5)]
        seq2 = [select_cases(self._distinct(), cfg, random.Random(cfg.rng_seed)) for _ in range(5)]
        assert seq1 == seq2


class TestGradient:
    def test_zero_usage_full_amplitude(self):
        cfg = RetrievalConfig(delta_pos0=0.2)
        assert gradient(GradientKind.POSITIVE, 0, cfg) == pytest.approx(0.2, abs=1e-15)

    def test_positive_decay_direct(self):
        cfg = RetrievalConfig(delta_pos0=0.2, alpha=0.1)
        assert abs(gradient(GradientKind.POSITIVE, 5, cfg) - 0.2 * math.exp(-0.5)) < 1e-12
        assert gradient(GradientKind.POSITIVE, 5, cfg) == pytest.approx(0.121306, abs=5e-7)

    def test_negative_decay_direct(self):
        cfg = RetrievalConfig(delta_neg0=0.2, beta=0.3)
        assert abs(gradient(GradientKind.NEGATIVE, 3, cfg) - 0.2 * math.exp(-0.9)) < 1e-12
        assert gradient(GradientKind.NEGATIVE, 3, cfg) == pytest.approx(0.081314, abs=5e-7)

    @given(n=st.integers(min_value=0, max_value=500))
    def test_monotone_decay(self, n):
        cfg = RetrievalConfig(delta_pos0=0.3, delta_neg0=0.25, alpha=0.17, beta=0.05)
        for kind in GradientKind:
            assert gradient(kind, n + 1, cfg) < gradient(kind, n, cfg)


class TestApplyOutcome:
    def test_upper_clamp(self):
        cfg = RetrievalConfig(delta_pos0=0.2)
        updated = apply_outcome(case("a", "t", priority=0.95), CaseOutcome.USED_IN_SUCCESS, cfg)
        assert updated.priority == 1.0
        assert updated.usage_count == 1

    def test_lower_clamp(self):
        cfg = RetrievalConfig(delta_neg0=0.2)
        updated = apply_outcome(case("a", "t", priority=0.15), CaseOutcome.USED_IN_FAILURE, cfg)
        assert updated.priority == 0.1

    def test_pre_update_usage_count_used(self):
        cfg = RetrievalConfig(delta_pos0=0.2, alpha=0.1)
        updated = apply_outcome(
            case("a", "t", priority=0.5, usage=2), CaseOutcome.USED_IN_SUCCESS, cfg
        )
        assert abs(updated.priority - (0.5 + 0.2 * math.exp(-0.2))) < 1e-12
        assert updated.priority == pytest.approx(0.663746, abs=5e-7)
        assert updated.usage_count == 3

    @settings(max_examples=50)
    @given(
        start=st.floats(min_value=0.1, max_value=1.0),
        outcomes=st.lists(st.sampled_from(list(CaseOutcome)), min_size=1, max_size=60),
    )
    def test_boundedness(self, start, outcomes):
        cfg = RetrievalConfig()
        current = case("a", "t", priority=start)
        for outcome in outcomes:
            current = apply_outcome(current, outcome, cfg)
            assert 0.1 <= current.priority <= 1.0

    def test_usage_count_never_decreases(self):
        cfg = RetrievalConfig()
        current = case("a", "t")
        for outcome in [CaseOutcome.USED_IN_SUCCESS, CaseOutcome.USED_IN_FAILURE] * 5:
            nxt = apply_outcome(current, outcome, cfg)
            assert nxt.usage_count == current.usage_count + 1
            current = nxt


class TestConvergence:
    def test_winner_becomes_unique_max_within_three_settlements(self):
        cfg = RetrievalConfig(f0=0.5, delta_pos0=0.2, delta_neg0=0.2, alpha=0.1, beta=0.1)
        pool = {c: case(c, "t", priority=cfg.f0) for c in "abcd"}
        for settlement in range(1, 4):
            pool["a"] = apply_outcome(pool["a"], CaseOutcome.USED_IN_SUCCESS, cfg)
            for other in "bcd":
                pool[other] = apply_outcome(pool[other], CaseOutcome.USED_IN_FAILURE, cfg)
            top = sorted(pool.values(), key=lambda c: -c.priority)
            if top[0].case_id == "a" and top[0].priority > top[1].priority:
                break
        assert settlement <= 3
        assert pool["a"].priority > max(pool[c].priority for c in "bcd")


class TestRetrievalConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"tau": -0.1},
            {"tau": 1.5},
            {"f0": 0.05},
            {"delta_pos0": 0.0},
            {"alpha": 0.0},
            {"epsilon": 1.2},
            {"k": 0},
        ],
    )
    def test_rejects_bad_ranges(self, kwargs):
        with pytest.raises(RetrievalError):
            RetrievalConfig(**kwargs)


class TestCaseStore:
    def test_add_persist_reload(self, tmp_path):
        path = tmp_path / "cases.jsonl"
        store = CaseStore(path, seed=1)
        cfg = RetrievalConfig()
        entry = store.add_case(
            make_plan(["open(drawer)", "grasp(cup)", "place(cup, drawer)"]),
            TaskDescription("put cups in the drawer"),
            cfg,
            created_at=EPOCH,
        )
        assert entry.priority == cfg.f0
        reloaded = CaseStore(path, seed=1)
        assert reloaded.cases() == store.cases()

    def test_settle_updates_and_rewrites(self, tmp_path):
        path = tmp_path / "cases.jsonl"
        store = CaseStore(path, seed=1)
        cfg = RetrievalConfig(delta_pos0=0.2)
        entry = store.add_case(
            make_plan(["grasp(cup)", "place(cup, shelf)"]),
            TaskDescription("shelve the cup"),
            cfg,
            created_at=EPOCH,
        )
        store.settle([entry.case_id], CaseOutcome.USED_IN_SUCCESS, cfg)
        updated = store.get(entry.case_id)
        assert updated.usage_count == 1
        assert updated.priority == pytest.approx(0.7)
        reloaded = CaseStore(path, seed=1)
        assert reloaded.get(entry.case_id) == updated

    def test_settle_unknown_case(self, tmp_path):
        store = CaseStore(tmp_path / "cases.jsonl")
        with pytest.raises(UnknownCase):
            store.settle(["ghost"], CaseOutcome.USED_IN_SUCCESS, RetrievalConfig())

    def test_retrieve_deterministic_given_seed(self, tmp_path):
        cfg = RetrievalConfig(epsilon=0.5, k=2, tau=0.0)

        def build(path, seed):
            store = CaseStore(path, seed=seed)
            for i, task in enumerate(
                ["open the drawer", "open the fridge", "open the cabinet", "open the box"]
            ):
                store.add_case(
                    make_plan(["open(drawer)"]),
                    TaskDescription(task),
                    cfg,
                    created_at=EPOCH + timedelta(seconds=i),
                    case_id=f"c{i}",
                )
            return store

        s1 = build(tmp_path / "a.jsonl", seed=77)
        s2 = build(tmp_path / "b.jsonl", seed=77)
        q = TaskDescription("open something")
        seq1 = [[c.case_id for c in s1.retrieve(q, cfg)] for _ in range(10)]
        seq2 = [[c.case_id for c in s2.retrieve(q, cfg)] for _ in range(10)]
        assert seq1 == seq2

    def test_rerank_hook_can_rescore_and_filter(self, tmp_path):
        from dataclasses import replace

        # Hook inverts the scores of its ephemeral copies; stored entries
        # must stay untouched.
        def invert(cands, query):
            return [replace(c, priority=1.1 - c.priority) for c in cands]

        cfg = RetrievalConfig(epsilon=0.0, k=1, tau=0.0)
        store = CaseStore(tmp_path / "c.jsonl", seed=0, rerank_hook=invert)
        store.add_case(make_plan(["open(drawer)"]), TaskDescription("open the drawer"), cfg,
                       created_at=EPOCH, case_id="low")
        store.add_case(make_plan(["open(fridge)"]), TaskDescription("open the fridge"), cfg,
                       created_at=EPOCH, case_id="high")
        store.settle(["high"], CaseOutcome.USED_IN_SUCCESS, cfg)
        got = store.retrieve(TaskDescription("open it"), cfg)
        assert got[0].case_id == "low"
        assert store.get("high").priority == pytest.approx(0.7)
