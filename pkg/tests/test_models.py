"""Model semantics: set invariances, reductions, oracles, accounting, IO."""

import numpy as np
import pytest

from riskset.corpus import RISK, UserRecord
from riskset.mlstm import encode_sequence
from riskset.models import (
    KINDS,
    ModelBundle,
    ModelConfig,
    build_model,
    canonical_writing_order,
    count_parameters,
    load_model,
    save_model,
)
from riskset.tensor import Tensor

from conftest import make_embedding, make_vocab, random_user
from reference import predict_ref


def tiny_model(kind, seed=0, **overrides) -> ModelBundle:
    rng = np.random.default_rng(seed)
    vocab = make_vocab(9)
    emb = make_embedding(vocab, overrides.pop("embed_dim", 4), rng)
    settings = dict(kind=kind, embed_dim=emb.dim, hidden_dim=6, dtype="float64")
    settings.update(overrides)
    return build_model(ModelConfig(**settings), emb, vocab, rng)


def copy_shared_blocks(src: ModelBundle, dst: ModelBundle) -> None:
    for name, tensor in dst.params.items():
        if name in src.params:
            tensor.data[...] = src.params[name].data


class TestCanonicalOrder:
    def test_sorted_by_content(self):
        writings = [[3, 1], [2], [3, 0]]
        assert canonical_writing_order(writings) == [[2], [3, 0], [3, 1]]

    def test_permutation_invariant(self, rng):
        writings = [[int(x) for x in rng.integers(2, 9, size=rng.integers(1, 5))] for _ in range(6)]
        perm = [writings[i] for i in rng.permutation(6)]
        assert canonical_writing_order(writings) == canonical_writing_order(perm)


class TestLida:
    def test_single_writing_equals_final_state(self, rng):
        model = tiny_model("lida")
        user = random_user(rng, model.vocab, 1)
        xs = model.embedding.values[user.writings[0]]
        final = encode_sequence(model.post_cell, list(xs)).final
        agg = model.aggregate(user)
        np.testing.assert_allclose(agg.data, final.hidden.data, atol=1e-14)

    def test_mean_of_independent_encodings(self, rng):
        model = tiny_model("lida")
        user = random_user(rng, model.vocab, 3)
        finals = []
        for w in canonical_writing_order(user.writings):
            xs = model.embedding.values[w]
            finals.append(encode_sequence(model.post_cell, list(xs)).final.hidden.data)
        np.testing.assert_allclose(model.aggregate(user).data, np.mean(finals, axis=0), atol=1e-12)

    def test_duplicated_writings_same_aggregate(self, rng):
        model = tiny_model("lida")
        user = random_user(rng, model.vocab, 4)
        doubled = UserRecord("u", RISK, user.writings * 2)
        np.testing.assert_allclose(
            model.aggregate(user).data, model.aggregate(doubled).data, atol=1e-12
        )


class TestCida:
    def test_single_writing_matches_stacked_encoders(self, rng):
        model = tiny_model("cida")
        user = random_user(rng, model.vocab, 1)
        xs = model.embedding.values[user.writings[0]]
        post_states = encode_sequence(model.post_cell, list(xs)).states
        user_final = encode_sequence(
            model.user_cell, [st.hidden for st in post_states]
        ).final
        np.testing.assert_allclose(model.aggregate(user).data, user_final.hidden.data, atol=1e-12)

    def test_identical_writings_equal_single(self, rng):
        model = tiny_model("cida")
        writing = [2, 5, 3, 7]
        one = UserRecord("u", RISK, [writing])
        many = UserRecord("u", RISK, [list(writing) for _ in range(5)])
        np.testing.assert_allclose(
            model.forward_user(one).item(), model.forward_user(many).item(), atol=1e-10
        )

    def test_freezing_matches_reference_loop(self, rng):
        model = tiny_model("cida")
        user = UserRecord("u", RISK, [[2, 3, 4], [5, 6, 7, 8, 2]])
        assert model.predict_proba(user) == pytest.approx(predict_ref(model, user), abs=1e-12)


class TestIda:
    def test_single_writing_equals_cida(self, rng):
        ida = tiny_model("ida")
        cida = tiny_model("cida")
        copy_shared_blocks(ida, cida)
        user = random_user(rng, ida.vocab, 1)
        assert ida.predict_proba(user) == pytest.approx(cida.predict_proba(user), abs=1e-10)

    def test_identical_writings_equal_cida(self, rng):
        ida = tiny_model("ida")
        cida = tiny_model("cida")
        copy_shared_blocks(ida, cida)
        writing = [4, 2, 8]
        user = UserRecord("u", RISK, [list(writing) for _ in range(4)])
        assert ida.predict_proba(user) == pytest.approx(cida.predict_proba(user), abs=1e-10)

    def test_zero_attention_matrix_reduces_to_cida(self, rng):
        ida = tiny_model("ida")
        ida.params["attention.weight"].data[...] = 0.0
        cida = tiny_model("cida")
        copy_shared_blocks(ida, cida)
        for _ in range(5):
            user = random_user(rng, ida.vocab, int(rng.integers(2, 5)))
            assert ida.predict_proba(user) == pytest.approx(cida.predict_proba(user), abs=1e-10)

    def test_location_scorer_reduces_to_cida(self, rng):
        ida = tiny_model("ida", attention="location")
        cida = tiny_model("cida")
        copy_shared_blocks(ida, cida)
        user = random_user(rng, ida.vocab, 4)
        assert ida.predict_proba(user) == pytest.approx(cida.predict_proba(user), abs=1e-10)

    def test_matches_reference_loop(self, rng):
        model = tiny_model("ida", hidden_post=5, hidden_user=6, hidden_dim=5)
        for _ in range(3):
            user = random_user(rng, model.vocab, int(rng.integers(2, 5)))
            assert model.predict_proba(user) == pytest.approx(predict_ref(model, user), abs=1e-12)


class TestIida:
    def test_length_one_writings_equal_ida_with_padded_inputs(self, rng):
        iida = tiny_model("iida")
        # an inter-attention model over doubled inputs [x; 0] with the same
        # parameters must coincide when every context is the zero vector
        wide_vocab = iida.vocab
        padded = make_embedding(wide_vocab, 8, np.random.default_rng(3))
        padded.values[:, :4] = iida.embedding.values
        padded.values[:, 4:] = 0.0
        ida = build_model(
            ModelConfig(kind="ida", embed_dim=8, hidden_dim=6, dtype="float64"),
            padded,
            wide_vocab,
            np.random.default_rng(4),
        )
        copy_shared_blocks(iida, ida)
        user = UserRecord("u", RISK, [[2], [5], [7]])
        assert iida.predict_proba(user) == pytest.approx(ida.predict_proba(user), abs=1e-12)

    def test_matches_reference_loop(self, rng):
        model = tiny_model("iida")
        for _ in range(3):
            user = random_user(rng, model.vocab, int(rng.integers(2, 4)), max_tokens=4)
            assert model.predict_proba(user) == pytest.approx(predict_ref(model, user), abs=1e-12)

    def test_two_pass_query_mode_runs_and_differs(self, rng):
        base = tiny_model("iida")
        two_pass = tiny_model("iida", intra_query="two_pass")
        copy_shared_blocks(base, two_pass)
        user = random_user(rng, base.vocab, 3, max_tokens=4)
        p1, p2 = base.predict_proba(user), two_pass.predict_proba(user)
        assert 0.0 < p2 < 1.0
        assert p1 != p2


class TestPredictHead:
    def test_zero_head_gives_half(self, rng):
        model = tiny_model("lida")
        model.params["head.weight"].data[...] = 0.0
        user = random_user(rng, model.vocab, 2)
        assert model.predict_proba(user) == 0.5

    def test_zero_aggregate_gives_sigmoid_bias(self):
        from riskset.models import PredictionHead
        from riskset.tensor import sigmoid

        head = PredictionHead(4, np.random.default_rng(0))
        head.weight.data[...] = [0.1, -0.2, 0.3, 0.4, -1.3]
        p = head.probability(Tensor(np.zeros(4)))
        assert p.item() == pytest.approx(sigmoid(-1.3), abs=1e-15)

    def test_hand_computed_affine(self):
        from riskset.models import PredictionHead
        from riskset.tensor import sigmoid

        head = PredictionHead(2, np.random.default_rng(0))
        head.weight.data[...] = [2.0, -1.0, 0.5]
        p = head.probability(Tensor(np.array([0.3, 0.8])))
        assert p.item() == pytest.approx(sigmoid(2.0 * 0.3 - 0.8 + 0.5), abs=1e-15)

    def test_width_mismatch_rejected(self, rng):
        model = tiny_model("lida")
        with pytest.raises(ValueError):
            model.head.probability(Tensor(np.zeros(7)))


class TestSetSemantics:
    @pytest.mark.parametrize("kind", KINDS)
    def test_permutation_bit_exact(self, kind, rng):
        model = tiny_model(kind)
        for _ in range(5):
            user = random_user(rng, model.vocab, int(rng.integers(2, 6)))
            base = model.predict_proba(user)
            perm = rng.permutation(len(user.writings))
            shuffled = UserRecord("u", RISK, [user.writings[i] for i in perm])
            assert model.predict_proba(shuffled) == base

    @pytest.mark.parametrize("kind", KINDS)
    def test_replication_invariance(self, kind, rng):
        model = tiny_model(kind)
        user = random_user(rng, model.vocab, 3)
        base = model.predict_proba(user)
        for copies in (2, 3):
            replicated = UserRecord("u", RISK, user.writings * copies)
            assert model.predict_proba(replicated) == pytest.approx(base, abs=1e-10)


class TestAccounting:
    def test_head_alone_at_hidden_80(self):
        from riskset.models import PredictionHead

        assert PredictionHead(80, np.random.default_rng(0)).parameter_count() == 81

    @staticmethod
    def closed_form(kind, d, hp, hu, attn_dim=None):
        def cell(i, h):
            return 5 * h * i + 5 * h * h + 4 * h

        total = cell(d * (2 if kind == "iida" else 1), hp)
        if kind != "lida":
            total += cell(hp, hu)
        if kind in ("ida", "iida"):
            total += hu * hp  # general scorer
        if kind == "iida":
            total += hp * d
        total += (hp if kind == "lida" else hu) + 1
        return total

    def test_ten_randomized_configurations(self):
        rng = np.random.default_rng(42)
        for _ in range(10):
            kind = KINDS[int(rng.integers(4))]
            d, hp, hu = (int(rng.integers(2, 12)) for _ in range(3))
            model = tiny_model(kind, embed_dim=d, hidden_dim=hp, hidden_post=hp, hidden_user=hu)
            assert count_parameters(model) == self.closed_form(kind, d, hp, hu)

    def test_counts_exclude_frozen_embeddings(self):
        frozen = tiny_model("lida")
        tuned = tiny_model("lida", fine_tune_embeddings=True)
        assert frozen.parameter_counts()["embeddings"] == 0
        assert tuned.parameter_counts()["embeddings"] == tuned.embedding.rows * tuned.embedding.dim
        assert count_parameters(tuned) == count_parameters(frozen) + tuned.parameter_counts()["embeddings"]


class TestValidation:
    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            tiny_model("gru")

    def test_dot_scorer_needs_matching_widths(self):
        with pytest.raises(ValueError):
            tiny_model("ida", attention="dot", hidden_post=4, hidden_user=6)

    def test_degenerate_user_rejected(self):
        model = tiny_model("lida")
        with pytest.raises(ValueError):
            model.aggregate(UserRecord("u", RISK, []))

    def test_empty_writing_rejected(self):
        model = tiny_model("lida")
        with pytest.raises(ValueError):
            model.aggregate(UserRecord("u", RISK, [[2], []]))

    def test_embedding_width_must_match(self):
        rng = np.random.default_rng(0)
        vocab = make_vocab(5)
        emb = make_embedding(vocab, 3, rng)
        with pytest.raises(ValueError):
            build_model(ModelConfig(kind="lida", embed_dim=4, hidden_dim=6), emb, vocab, rng)


class TestSerialization:
    @pytest.mark.parametrize("kind", KINDS)
    def test_roundtrip_bit_exact(self, kind, tmp_path, rng):
        model = tiny_model(kind)
        user = random_user(rng, model.vocab, 3)
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.predict_proba(user) == model.predict_proba(user)
        for name, tensor in model.params.items():
            np.testing.assert_array_equal(loaded.params[name].data, tensor.data)

    def test_fine_tuned_roundtrip(self, tmp_path, rng):
        model = tiny_model("ida", fine_tune_embeddings=True)
        model._emb_param.data[3] += 0.25
        user = random_user(rng, model.vocab, 2)
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.predict_proba(user) == model.predict_proba(user)

    def test_save_is_deterministic(self, tmp_path):
        model = tiny_model("cida")
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(model, a)
        save_model(model, b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"definitely not a checkpoint")
        with pytest.raises(ValueError):
            load_model(path)
