import math

import pytest
from hypothesis import given, settings, strategies as st

import workers
from conftest import brute_force_best, make_tiny_space
from tsnas import documents
from tsnas.evaluators import (
    ProtocolEvaluator,
    ScoreRangeError,
    SyntheticEvaluator,
    SyntheticObjective,
    TableEvaluator,
    TableLookupError,
    WorkerError,
    WorkerExited,
    WorkerProtocolError,
    WorkerTimeout,
    separable_objective,
    stepwise_objective,
)


def doc_of(space, arch, **kw):
    return documents.arch_to_document(space, arch, **kw)


class TestSynthetic:
    def test_zero_utilities_give_half(self, tiny_space):
        ev = SyntheticEvaluator(tiny_space, SyntheticObjective(seed=0, utilities=()))
        for seed in range(5):
            assert ev.evaluate(doc_of(tiny_space, tiny_space.sample_uniform(seed)), "one_step") == 0.5

    def test_separable_argmax_is_per_variable_argmax(self, tiny_space):
        obj = separable_objective(tiny_space, 5)
        ev = SyntheticEvaluator(tiny_space, obj)
        _, best = brute_force_best(tiny_space, ev)
        utilities = obj.utility_map()
        for var in tiny_space.free_variables():
            row = utilities[var.vid]
            if len(row) < 2:
                continue
            want = tiny_space.effective_choices(var)[max(range(len(row)), key=row.__getitem__)]
            assert best[var.vid] == want

    def test_brute_force_dominance(self, tiny_space):
        obj = stepwise_objective(tiny_space, 9)
        ev = SyntheticEvaluator(tiny_space, obj)
        best_score, _ = brute_force_best(tiny_space, ev)
        for seed in range(40):
            arch = tiny_space.sample_uniform(seed)
            assert ev.evaluate(doc_of(tiny_space, arch), "one_step") <= best_score + 1e-12

    def test_scores_in_unit_interval(self, tiny_space):
        ev = SyntheticEvaluator(tiny_space, separable_objective(tiny_space, 1))
        for seed in range(30):
            s = ev.evaluate(doc_of(tiny_space, tiny_space.sample_uniform(seed)), "one_step")
            assert 0.0 <= s <= 1.0

    @given(seed=st.integers(0, 500))
    @settings(max_examples=30, deadline=None)
    def test_referential_transparency(self, seed):
        space = make_tiny_space()
        ev = SyntheticEvaluator(space, separable_objective(space, 3))
        doc = doc_of(space, space.sample_uniform(seed))
        assert ev.evaluate(doc, "one_step") == ev.evaluate(doc, "one_step")

    def test_noise_is_deterministic_per_arch(self, tiny_space):
        obj = SyntheticObjective(
            seed=4,
            utilities=separable_objective(tiny_space, 4).utilities,
            noise_std=0.01,
        )
        ev = SyntheticEvaluator(tiny_space, obj)
        a = doc_of(tiny_space, tiny_space.sample_uniform(0))
        b = doc_of(tiny_space, tiny_space.sample_uniform(1))
        assert ev.evaluate(a, "one_step") == ev.evaluate(a, "one_step")
        assert ev.evaluate(a, "one_step") != ev.evaluate(b, "one_step")

    def test_single_stream_doc_scores_only_present_variables(self, tiny_space):
        obj = separable_objective(tiny_space, 8)
        ev = SyntheticEvaluator(tiny_space, obj)
        arch = tiny_space.sample_uniform(3)
        solo = doc_of(tiny_space, arch, streams=("sparse",))
        both = doc_of(tiny_space, arch)
        utilities = obj.utility_map()
        sparse_part = obj.bias
        for var in tiny_space.free_variables():
            if var.vid.startswith(("sparse.", "attn.sparse.")):
                idx = tiny_space.effective_choices(var).index(arch[var.vid])
                sparse_part += utilities[var.vid][idx]
        assert ev.evaluate(solo, "sparse") == pytest.approx(1 / (1 + math.exp(-sparse_part)))
        assert ev.evaluate(solo, "sparse") != ev.evaluate(both, "one_step")


class TestTable:
    def test_lookup_roundtrip(self, tiny_space):
        arch = tiny_space.sample_uniform(0)
        doc = doc_of(tiny_space, arch)
        key = documents.arch_table_key(doc)
        ev = TableEvaluator({key: 0.731})
        assert ev.evaluate(doc, "one_step") == 0.731

    def test_missing_arch_names_hash(self, tiny_space):
        doc = doc_of(tiny_space, tiny_space.sample_uniform(1))
        ev = TableEvaluator({})
        with pytest.raises(TableLookupError) as err:
            ev.evaluate(doc, "one_step")
        assert documents.arch_table_key(doc) in str(err.value)

    def test_attention_bit_distinguishes_entries(self, tiny_space):
        base = tiny_space.sample_uniform(2).as_dict()
        a = tiny_space.architecture(base | {"attn.sparse.g01": 0})
        b = tiny_space.architecture(base | {"attn.sparse.g01": 1})
        da, db = doc_of(tiny_space, a), doc_of(tiny_space, b)
        ka, kb = documents.arch_table_key(da), documents.arch_table_key(db)
        assert ka != kb
        ev = TableEvaluator({ka: 0.3, kb: 0.9})
        assert ev.evaluate(da, "one_step") == 0.3
        assert ev.evaluate(db, "one_step") == 0.9

    def test_out_of_range_table_score(self, tiny_space):
        doc = doc_of(tiny_space, tiny_space.sample_uniform(0))
        ev = TableEvaluator({documents.arch_table_key(doc): 7.0})
        with pytest.raises(ScoreRangeError):
            ev.evaluate(doc, "one_step")


class TestProtocol:
    def make_doc(self, tiny_space, seed=0):
        return doc_of(tiny_space, tiny_space.sample_uniform(seed))

    def test_echo_worker(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.ECHO), timeout=10) as ev:
            assert ev.evaluate(self.make_doc(tiny_space), "one_step") == 0.5

    def test_freeze_acknowledged(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.ECHO), timeout=10) as ev:
            ev.on_step_boundary(self.make_doc(tiny_space))
            assert ev.evaluate(self.make_doc(tiny_space), "one_step") == 0.5

    def test_out_of_order_ids_assigned_correctly(self, tiny_space):
        docs = [self.make_doc(tiny_space, s) for s in range(3)]
        with ProtocolEvaluator(workers.cmd(workers.OUT_OF_ORDER), timeout=10) as ev:
            scores = ev.evaluate_batch(docs, "one_step")
            # request ids are 1,2,3; score encodes the id
            assert scores == [(1 % 7) / 10, (2 % 7) / 10, (3 % 7) / 10]
            scores = ev.evaluate_batch(docs, "one_step")
            assert scores == [(4 % 7) / 10, (5 % 7) / 10, (6 % 7) / 10]

    def test_out_of_range_score(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.BAD_SCORE), timeout=10) as ev:
            with pytest.raises(ScoreRangeError):
                ev.evaluate(self.make_doc(tiny_space), "one_step")

    def test_mismatched_id_is_protocol_error(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.WRONG_ID), timeout=10) as ev:
            with pytest.raises(WorkerProtocolError):
                ev.evaluate(self.make_doc(tiny_space), "one_step")

    def test_malformed_line_is_protocol_error(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.GARBAGE), timeout=10) as ev:
            with pytest.raises(WorkerProtocolError):
                ev.evaluate(self.make_doc(tiny_space), "one_step")

    def test_worker_exit_detected(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.EARLY_EXIT), timeout=10) as ev:
            with pytest.raises(WorkerExited):
                ev.evaluate(self.make_doc(tiny_space), "one_step")

    def test_timeout(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.SLEEPY), timeout=0.3) as ev:
            with pytest.raises(WorkerTimeout):
                ev.evaluate(self.make_doc(tiny_space), "one_step")

    def test_freeze_without_ack_is_protocol_error(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.NO_ACK_FREEZE), timeout=10) as ev:
            with pytest.raises(WorkerProtocolError):
                ev.on_step_boundary(self.make_doc(tiny_space))

    def test_worker_error_reply_surfaces(self, tiny_space):
        with ProtocolEvaluator(workers.cmd(workers.ERROR_REPLY), timeout=10) as ev:
            with pytest.raises(WorkerError) as err:
                ev.evaluate(self.make_doc(tiny_space), "one_step")
            assert "no gpu" in str(err.value)
