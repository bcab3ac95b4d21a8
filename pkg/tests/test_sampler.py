import math

import pytest
from hypothesis import given, settings, strategies as st

from tsnas.sampler import (
    AdamState,
    ArchParams,
    SearchConfig,
    argmax_architecture,
    compute_weights,
    entropy,
    hinge_penalty,
    init_uniform,
    sample_batch,
    update,
)
from tsnas.space import build_default_space, step_variable_ids


def attention_only(space):
    keep = set(step_variable_ids(space, "attention"))
    frozen = {v.vid: v.choices[0] for v in space.variables() if v.vid not in keep}
    return space.restrict(frozen)


@pytest.fixture(scope="module")
def attn_space():
    return attention_only(build_default_space())


def batch_log_likelihood(params, space, batch, weights):
    probs = dict(zip(params.var_ids, params.probs()))
    total = 0.0
    for arch, w in zip(batch, weights):
        values = arch.as_dict()
        ll = 0.0
        for vid, rows in probs.items():
            var = space.variable(vid)
            ll += math.log(rows[space.effective_choices(var).index(values[vid])])
        total += w * ll
    return total


class TestInitAndEntropy:
    def test_attention_only_entropy(self, attn_space):
        params = init_uniform(attn_space)
        assert entropy(params) == pytest.approx(12 * math.log(2), abs=1e-12)
        assert entropy(params) == pytest.approx(8.3178, abs=5e-5)

    def test_singleton_space_entropy_zero(self, tiny_space):
        frozen = {v.vid: v.choices[0] for v in tiny_space.variables()}
        params = init_uniform(tiny_space.restrict(frozen))
        assert entropy(params) == 0.0

    def test_uniform_probabilities(self, tiny_space):
        params = init_uniform(tiny_space)
        fusion_row = dict(zip(params.var_ids, params.probs()))["fusion.g01"]
        assert fusion_row == pytest.approx((1 / 3, 1 / 3, 1 / 3))

    def test_uniform_init_entropy_is_log_cardinality(self, tiny_space):
        params = init_uniform(tiny_space)
        assert entropy(params) == pytest.approx(math.log(tiny_space.cardinality()), rel=1e-12)

    def test_one_hot_entropy_zero(self):
        params = ArchParams(var_ids=("x",), logits=((60.0, -60.0, -60.0),))
        assert entropy(params) == pytest.approx(0.0, abs=1e-20)


class TestSampleBatch:
    def test_one_hot_params_give_unique_arch(self, tiny_space):
        free = tiny_space.free_variables()
        logits = tuple(
            tuple(60.0 if i == 0 else -60.0 for i in range(len(v.choices)))
            for v in free
        )
        params = ArchParams(var_ids=tuple(v.vid for v in free), logits=logits)
        batch = sample_batch(params, tiny_space, 5, 99)
        assert len({a.key() for a in batch}) == 1
        assert all(a[v.vid] == v.choices[0] for a in batch for v in free)

    def test_seeded_reproducibility(self, tiny_space):
        params = init_uniform(tiny_space)
        b1 = sample_batch(params, tiny_space, 8, 4)
        b2 = sample_batch(params, tiny_space, 8, 4)
        assert [a.key() for a in b1] == [a.key() for a in b2]

    def test_uniform_frequencies_within_3_sigma(self, tiny_space):
        params = init_uniform(tiny_space)
        n = 12_500  # 8 samples per draw -> 1e5 architectures total
        hits = 0
        for seed in range(n):
            for arch in sample_batch(params, tiny_space, 8, seed):
                hits += arch["dense.g01.c"] == 8
        total = 8 * n
        sigma = 0.5 / math.sqrt(total)
        assert abs(hits / total - 0.5) <= 3 * sigma

    def test_samples_are_valid(self, tiny_space):
        params = init_uniform(tiny_space)
        for arch in sample_batch(params, tiny_space, 16, 0):
            assert tiny_space.validate(arch) == []


class TestHinge:
    CONFIG = SearchConfig(rounds=1, flops_target=2_000_000_000)

    def test_at_target_zero(self):
        assert hinge_penalty(2_000_000_000, self.CONFIG) == 0.0

    def test_below_target_zero(self):
        assert hinge_penalty(1, self.CONFIG) == 0.0
        assert hinge_penalty(0, self.CONFIG) == 0.0

    def test_ten_percent_over(self):
        assert hinge_penalty(2_200_000_000, self.CONFIG) == pytest.approx(0.1)

    def test_exact_linear_excess_grid(self):
        target = 1_000_000
        cfg = SearchConfig(rounds=1, flops_target=target)
        for k in range(0, 31):
            flops = target + k * 50_000
            assert hinge_penalty(flops, cfg) == pytest.approx(k * 0.05, abs=1e-12)

    def test_range_target_uses_high_end(self):
        cfg = SearchConfig(rounds=1, flops_target_range=(1_000, 2_000))
        assert hinge_penalty(1_500, cfg) == 0.0
        assert hinge_penalty(2_000, cfg) == 0.0
        assert hinge_penalty(3_000, cfg) == pytest.approx(0.5)

    def test_no_target_no_penalty(self):
        assert hinge_penalty(10**15, SearchConfig(rounds=1)) == 0.0

    def test_negative_flops_rejected(self):
        with pytest.raises(ValueError):
            hinge_penalty(-1, self.CONFIG)


class TestWeights:
    def test_equal_scores_uniform(self):
        w = compute_weights([0.4] * 8, [0.0] * 8, 0.05, 0.5)
        assert w == pytest.approx([1 / 8] * 8)

    def test_closed_form_two_sample(self):
        w = compute_weights([0.7, 0.6], [0.0, 0.0], 0.05, 0.5)
        assert w[0] == pytest.approx(1 / (1 + math.exp(-2)), rel=1e-12)
        assert sum(w) == pytest.approx(1.0, abs=1e-12)

    def test_low_temperature_limit(self):
        w = compute_weights([0.9, 0.5, 0.1], [0.0] * 3, 1e-4, 0.0)
        assert w[0] > 0.9999

    def test_penalty_shifts_weights(self):
        plain = compute_weights([0.5, 0.5], [0.0, 0.0], 0.05, 0.5)
        penal = compute_weights([0.5, 0.5], [0.0, 0.4], 0.05, 0.5)
        assert plain[0] == pytest.approx(0.5)
        assert penal[0] > 0.9

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            compute_weights([0.5], [0.0], 0.05, 0.5)
        with pytest.raises(ValueError):
            compute_weights([float("nan"), 0.5], [0.0, 0.0], 0.05, 0.5)
        with pytest.raises(ValueError):
            compute_weights([0.5, 0.5], [0.0], 0.05, 0.5)

    @given(
        scores=st.lists(st.floats(0, 1), min_size=2, max_size=10),
        lam=st.floats(0, 2),
    )
    @settings(max_examples=60, deadline=None)
    def test_weights_sum_to_one(self, scores, lam):
        pens = [0.1 * i for i in range(len(scores))]
        w = compute_weights(scores, pens, 0.05, lam)
        assert sum(w) == pytest.approx(1.0, abs=1e-9)
        assert all(x > 0 for x in w)


class TestUpdate:
    def test_full_weight_increases_chosen_probs(self, tiny_space):
        params = init_uniform(tiny_space)
        state = AdamState.zeros_like(params)
        batch = sample_batch(params, tiny_space, 2, 5)
        before = dict(zip(params.var_ids, params.probs()))
        new_params, new_state = update(params, tiny_space, batch, [1.0, 0.0], state)
        after = dict(zip(new_params.var_ids, new_params.probs()))
        chosen = batch[0].as_dict()
        for vid in params.var_ids:
            var = tiny_space.variable(vid)
            choices = tiny_space.effective_choices(var)
            if len(choices) == 1:
                continue
            idx = choices.index(chosen[vid])
            assert after[vid][idx] > before[vid][idx], vid
        assert new_state.t == 1

    def test_balanced_coverage_leaves_variable_unchanged(self, tiny_space):
        params = init_uniform(tiny_space)
        state = AdamState.zeros_like(params)
        base = tiny_space.sample_uniform(3).as_dict()
        a = dict(base) | {"sparse.g00.t": 1}
        b = dict(base) | {"sparse.g00.t": 3}
        batch = [tiny_space.architecture(a), tiny_space.architecture(b)]
        new_params, _ = update(params, tiny_space, batch, [0.5, 0.5], state)
        vi = params.var_ids.index("sparse.g00.t")
        assert new_params.probs()[vi] == params.probs()[vi]

    def test_normalization_preserved_over_random_updates(self, tiny_space):
        params = init_uniform(tiny_space)
        state = AdamState.zeros_like(params)
        for seed in range(30):
            batch = sample_batch(params, tiny_space, 4, seed)
            weights = compute_weights(
                [0.1 * (seed % 10), 0.5, 0.9, 0.3], [0.0] * 4, 0.05, 0.5
            )
            params, state = update(params, tiny_space, batch, weights, state)
        for row in params.probs():
            assert sum(row) == pytest.approx(1.0, abs=1e-9)
            assert all(p > 0 for p in row)

    def test_likelihood_ascent_with_small_lr(self, tiny_space):
        params = init_uniform(tiny_space)
        for seed in range(10):
            batch = sample_batch(params, tiny_space, 4, 100 + seed)
            weights = [0.4, 0.3, 0.2, 0.1]
            before = batch_log_likelihood(params, tiny_space, batch, weights)
            stepped, _ = update(
                params, tiny_space, batch, weights, AdamState.zeros_like(params), lr=1e-4
            )
            after = batch_log_likelihood(stepped, tiny_space, batch, weights)
            assert after >= before - 1e-12

    def test_weight_sum_validated(self, tiny_space):
        params = init_uniform(tiny_space)
        batch = sample_batch(params, tiny_space, 2, 0)
        with pytest.raises(ValueError):
            update(params, tiny_space, batch, [0.9, 0.3], AdamState.zeros_like(params))


class TestArgmax:
    def test_uniform_ties_break_to_first_choice(self, tiny_space):
        params = init_uniform(tiny_space)
        arch = argmax_architecture(params, tiny_space)
        for var in tiny_space.variables():
            assert arch[var.vid] == tiny_space.effective_choices(var)[0]

    def test_one_hot_recovers_architecture(self, tiny_space):
        target = tiny_space.sample_uniform(17)
        free = tiny_space.free_variables()
        logits = []
        for v in free:
            idx = tiny_space.effective_choices(v).index(target[v.vid])
            logits.append(tuple(8.0 if i == idx else -8.0 for i in range(len(v.choices))))
        params = ArchParams(var_ids=tuple(v.vid for v in free), logits=tuple(logits))
        assert argmax_architecture(params, tiny_space).key() == target.key()

    def test_frozen_values_pass_through(self, tiny_space):
        var = tiny_space.variables()[0]
        restricted = tiny_space.restrict({var.vid: var.choices[-1]})
        params = init_uniform(restricted)
        arch = argmax_architecture(params, restricted)
        assert arch[var.vid] == var.choices[-1]


class TestSearchConfig:
    def test_warmup_defaults_to_five_percent(self):
        assert SearchConfig(rounds=800).resolved_warmup == 40
        assert SearchConfig(rounds=800, warmup_rounds=3).resolved_warmup == 3

    def test_validation(self):
        with pytest.raises(ValueError):
            SearchConfig(rounds=-1)
        with pytest.raises(ValueError):
            SearchConfig(rounds=1, samples_per_round=1)
        with pytest.raises(ValueError):
            SearchConfig(rounds=1, weight_temperature=0.0)
        with pytest.raises(ValueError):
            SearchConfig(rounds=1, penalty_weight=-0.1)
        with pytest.raises(ValueError):
            SearchConfig(rounds=1, flops_target_range=(5, 1))
