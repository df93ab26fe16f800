from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import ce_problem
from oracles import best_index, majority_answer
from treevolve.backend import MockGenerator, MockScorer, MockScript
from treevolve.backend.base import ScoreRequest
from treevolve.decoder import (
    DEFAULT_BON_N,
    Candidate,
    DecodeConfig,
    NoAnswer,
    best_of_n,
    decode_problem,
    has_reflective_token,
    reflective_ratio,
    sample_candidates,
    score_candidate,
    self_consistency,
    vote_sum,
)
from treevolve.prompts import join_steps
from treevolve.tree import ROOT_STEP


def cand(i, scores=None, answer=None):
    agg = min(scores) if scores else None
    return Candidate(index=i, text="", steps=["s"], extracted_answer=answer, step_scores=scores, aggregate=agg)


class ListScorer:
    def __init__(self, scores):
        self.scores = scores
        self.seen: list[ScoreRequest] = []

    def score_steps(self, reqs):
        self.seen.extend(reqs)
        return self.scores[: len(reqs)]


def test_score_candidate_min_and_prefixes(mc):
    c = Candidate(0, "t", ["a", "b", "c"])
    scorer = ListScorer([0.9, 0.4, 0.8])
    out = score_candidate(c, scorer, mc)
    assert out.step_scores == [0.9, 0.4, 0.8] and out.aggregate == 0.4
    assert [r.prefix for r in scorer.seen] == [
        join_steps([ROOT_STEP, "a"]),
        join_steps([ROOT_STEP, "a", "b"]),
        join_steps([ROOT_STEP, "a", "b", "c"]),
    ]
    assert [r.step_index for r in scorer.seen] == [1, 2, 3]
    assert score_candidate(Candidate(0, "t", ["a"]), ListScorer([0.7]), mc).aggregate == 0.7


def test_score_candidate_needs_steps(mc):
    with pytest.raises(ValueError):
        score_candidate(Candidate(0, "", []), ListScorer([]), mc)


def test_bon_examples():
    cs = [cand(0, [0.4]), cand(1, [0.9]), cand(2, [0.6])]
    assert best_of_n(cs).index == 1
    assert best_of_n([cand(0, [0.2])]).index == 0
    assert best_of_n([cand(0, [0.5]), cand(1, [0.5])]).index == 0
    with pytest.raises(ValueError):
        best_of_n([])


def test_sc_examples():
    assert self_consistency([cand(0, answer="C"), cand(1, answer="C"), cand(2, answer="B")]) == "c"
    assert self_consistency([cand(0, answer="A")]) == "a"
    assert self_consistency([cand(0, answer="A"), cand(1, answer="B")]) == "a"
    with pytest.raises(NoAnswer):
        self_consistency([cand(0), cand(1, answer="  ")])


def test_sc_groups_choice_answers_by_letter():
    cs = [cand(0, answer="B) rash"), cand(1, answer="C"), cand(2, answer="b")]
    assert self_consistency(cs, "multiple_choice") == "b"


def test_vote_sum_examples():
    cs = [cand(0, [0.4], "C"), cand(1, [0.5], "C"), cand(2, [0.8], "B")]
    assert vote_sum(cs) == "c"
    assert vote_sum([cand(0, [0.1], "A"), cand(1, [0.2], "A")]) == "a"
    assert vote_sum([cand(0, [0.5], "A"), cand(1, [0.5], "B")]) == "a"


def test_single_candidate_all_methods_agree():
    c = cand(0, [0.3], "D")
    assert best_of_n([c]).extracted_answer.lower() == self_consistency([c]) == vote_sum([c])


def test_reflective_examples():
    responses = [("however we", True), ("plain", True), ("However, x", True), ("so", True), ("but", False)]
    r = reflective_ratio(responses)
    assert r.ratio == 0.5 and r.correct == 4 and r.reflective == 2
    empty = reflective_ratio([("wait", False)])
    assert empty.ratio == 0 and empty.empty
    assert not has_reflective_token("butter and waiting")
    assert has_reflective_token("Let me RECHECK.")


def test_decode_config_defaults_and_validation():
    cfg = DecodeConfig()
    assert (cfg.n, cfg.temperature, cfg.top_p, cfg.max_new_tokens) == (DEFAULT_BON_N, 1.0, 0.9, 8192)
    with pytest.raises(ValueError):
        DecodeConfig(n=0)
    with pytest.raises(ValueError):
        DecodeConfig(method="beam")


def test_cot_is_single_greedy_sample(mc):
    gen = MockGenerator([mc], MockScript(seed=1))
    cands = sample_candidates(mc, gen, DecodeConfig(method="cot", n=32))
    assert len(cands) == 1
    first = gen.requests[0]
    assert first.n == 1 and first.temperature == 0.0
    assert gen.log.calls == {"cot": 1, "force": 1}


def test_sampling_uses_nucleus_defaults(mc):
    gen = MockGenerator([mc], MockScript(seed=1))
    cands = sample_candidates(mc, gen, DecodeConfig(n=4))
    assert len(cands) == 4
    req = gen.requests[0]
    assert (req.n, req.temperature, req.top_p, req.max_new_tokens) == (4, 1.0, 0.9, 8192)
    assert all(len(c.steps) >= 2 for c in cands)


def test_candidate_prefix_is_stable_across_n(mc):
    gen = MockGenerator([mc], MockScript(seed=1))
    small = sample_candidates(mc, gen, DecodeConfig(n=4))
    big = sample_candidates(mc, gen, DecodeConfig(n=16))
    assert [c.text for c in small] == [c.text for c in big[:4]]


def test_decode_bon_picks_argmin_max(mc):
    gen = MockGenerator([mc], MockScript(seed=2))
    res = decode_problem(mc, gen, DecodeConfig(method="bon", n=8), MockScorer())
    aggs = [c.aggregate for c in res.candidates]
    assert res.chosen_index == aggs.index(max(aggs))
    assert res.answer == res.candidates[res.chosen_index].extracted_answer


def test_decode_requires_scorer_for_prm_methods(mc):
    gen = MockGenerator([mc])
    with pytest.raises(ValueError):
        decode_problem(mc, gen, DecodeConfig(method="pvs"))


def test_decode_no_answer_is_incorrect():
    p = ce_problem()

    class Mute:
        def generate(self, req):
            return [" nothing to say"] * req.n

    res = decode_problem(p, Mute(), DecodeConfig(method="sc", n=3, force_answer=False))
    assert res.answer is None and not res.correct


scores = st.lists(st.integers(0, 20).map(lambda k: k / 20), min_size=1, max_size=6)


@given(st.lists(scores, min_size=1, max_size=12), st.floats(0.2, 5.0))
def test_bon_invariant_under_monotone_map(score_lists, power):
    cs = [cand(i, s) for i, s in enumerate(score_lists)]
    mapped = [cand(i, [x**power for x in s]) for i, s in enumerate(score_lists)]
    assert best_of_n(cs).index == best_index(score_lists) == best_of_n(mapped).index


@given(st.lists(st.sampled_from(["A", "B", "C", None]), min_size=1, max_size=12), st.randoms())
def test_sc_permutation_invariant_up_to_ties(answers, rnd):
    if all(a is None for a in answers):
        return
    base = self_consistency([cand(i, answer=a) for i, a in enumerate(answers)])
    assert base == majority_answer(answers).lower()
    shuffled = answers[:]
    rnd.shuffle(shuffled)
    counts = {a: answers.count(a) for a in set(answers) if a}
    if list(counts.values()).count(max(counts.values())) == 1:
        assert self_consistency([cand(i, answer=a) for i, a in enumerate(shuffled)]) == base
