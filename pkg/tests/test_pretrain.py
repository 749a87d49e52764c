import numpy as np
import pytest

from whin_pjf import autodiff as ad
from whin_pjf import pretrain
from whin_pjf.errors import ConfigError, FormatError
from whin_pjf.graph import RELATIONS, VIEWS, EntityKind
from whin_pjf.pretrain import (
    EmbeddingTable,
    PretrainConfig,
    PretrainParams,
    export_embeddings,
    full_batch,
    link_logits,
    load_embeddings,
    pretrain_loss,
    rgcn_layer,
    save_pretrain,
    score_link,
    train_pretrain,
)
from whin_pjf.seeding import substream
from datagen import build_store, clustered_store, entity_rows, random_store
from oracles import dense_rgcn_layer, fd_gradient, rel_error


@pytest.fixture(scope="module")
def cluster_run(tmp_path_factory):
    store = clustered_store(tmp_path_factory.mktemp("clusters"), np.random.default_rng(1))
    cfg = PretrainConfig(epochs=15, batch_pairs=64, learning_rate=3e-3, seed=3)
    params, table, history = train_pretrain(store, cfg)
    return store, cfg, params, table, history


def identity_params(dim, layers, dtype=np.float32):
    params = PretrainParams(dim, layers, substream(0, "test"), dtype=dtype)
    for name, tensor in params.tensors.items():
        if name.startswith("enc_"):
            tensor.value = np.eye(dim, dtype=dtype)
    return params


def test_config_validation():
    with pytest.raises(ConfigError):
        PretrainConfig(dim=0)
    with pytest.raises(ConfigError):
        PretrainConfig(init_mode="bert")
    with pytest.raises(ConfigError):
        PretrainConfig(holdout_fraction=1.0)


def test_rgcn_layer_isolated_node_self_loop_only(tmp_path):
    store = build_store(tmp_path, entity_rows(members=1), [], [], materialize=False)
    batch = full_batch(store)
    params = identity_params(4, 1)
    z = ad.constant(np.array([[1.0, -1.0, 2.0, -2.0]]))
    out = rgcn_layer(batch, z, params, 0)
    np.testing.assert_allclose(out.value, [[1.0, 0.0, 2.0, 0.0]])


def test_rgcn_layer_single_neighbor_identity_weights(tmp_path):
    store = build_store(tmp_path, entity_rows(members=2), [("connect", 0, 1)], [],
                        materialize=False)
    batch = full_batch(store)
    params = identity_params(3, 1)
    z = ad.constant(np.array([[1.0, 2.0, 3.0], [10.0, 20.0, 30.0]]))
    out = rgcn_layer(batch, ad.constant(z.value), params, 0)
    np.testing.assert_allclose(out.value[0], [11.0, 22.0, 33.0])  # relu(z1 + z0)


def test_rgcn_layer_aggregates_arithmetic_mean(tmp_path):
    # three neighbors, identity weights: pre-activation is mean(z_j) + z_i
    entities = entity_rows(members=4)
    rels = [("connect", 0, 1), ("connect", 0, 2), ("connect", 0, 3)]
    store = build_store(tmp_path, entities, rels, [], materialize=False)
    batch = full_batch(store)
    params = identity_params(2, 1)
    z_val = np.array([[0.0, 0.0], [3.0, 1.0], [6.0, 2.0], [0.0, 3.0]], dtype=np.float32)
    out = rgcn_layer(batch, ad.constant(z_val), params, 0)
    np.testing.assert_allclose(out.value[0], [3.0, 2.0])


def test_rgcn_layer_matches_dense_oracle(tmp_path):
    rng = np.random.default_rng(21)
    store, _, _ = random_store(tmp_path, rng, members=10, jobs=5, skills=6)
    batch = full_batch(store)
    n = batch.num_nodes
    params = PretrainParams(8, 1, substream(9, "oracle-test"))
    z_val = rng.uniform(-1, 1, (n, 8)).astype(np.float32)

    out = rgcn_layer(batch, ad.constant(z_val), params, 0)

    edges_by_view = {}
    weights_by_view = {}
    for view in VIEWS:
        src, dst = batch.view_edges(view.name)
        if len(src) == 0:
            continue
        edges_by_view[view.name] = list(zip(src.tolist(), dst.tolist()))
        weights_by_view[view.name] = params.view_weight(view.name, 0).value.T
    expected = dense_rgcn_layer(n, z_val, edges_by_view, weights_by_view,
                                params.self_weight(0).value.T)
    assert rel_error(out.value, expected) < 1e-5


def test_rgcn_layer_state_count_mismatch(tmp_path):
    store = build_store(tmp_path, entity_rows(members=2), [], [], materialize=False)
    params = identity_params(2, 1)
    with pytest.raises(ValueError, match="states cover"):
        rgcn_layer(full_batch(store), ad.constant(np.zeros((5, 2))), params, 0)


def test_score_link_zero_decoder_gives_half():
    params = PretrainParams(4, 1, substream(0, "x"))
    for name in ("dec_w1", "dec_b1", "dec_w2", "dec_b2"):
        params.tensors[name].value = np.zeros_like(params.tensors[name].value)
    p = score_link(np.ones(4, dtype=np.float32), "apply", np.ones(4, dtype=np.float32), params)
    assert p == pytest.approx(0.5)


def test_score_link_in_unit_interval():
    rng = np.random.default_rng(2)
    params = PretrainParams(6, 1, substream(1, "y"))
    for _ in range(50):
        p = score_link(rng.normal(size=6).astype(np.float32), "require",
                       rng.normal(size=6).astype(np.float32), params)
        assert 0.0 < p < 1.0


def test_score_link_hand_computed():
    dim = 2
    params = PretrainParams(dim, 1, substream(0, "z"))
    params.tensors["rel_embed"].value = np.zeros((len(RELATIONS), dim), dtype=np.float32)
    params.tensors["rel_embed"].value[1] = [0.5, -0.5]  # "apply" row
    w1 = np.arange(1, 3 * dim * dim + 1, dtype=np.float32).reshape(3 * dim, dim) / 10
    params.tensors["dec_w1"].value = w1
    params.tensors["dec_b1"].value = np.array([[0.1, -0.1]], dtype=np.float32)
    params.tensors["dec_w2"].value = np.array([[0.3], [-0.2]], dtype=np.float32)
    params.tensors["dec_b2"].value = np.array([[0.05]], dtype=np.float32)

    zs = np.array([0.2, -0.4], dtype=np.float32)
    zd = np.array([-0.3, 0.6], dtype=np.float32)
    x = np.concatenate([zs, [0.5, -0.5], zd])[None, :]
    hidden = np.maximum(x @ w1 + [[0.1, -0.1]], 0)
    logit = hidden @ [[0.3], [-0.2]] + 0.05
    expected = 1 / (1 + np.exp(-logit[0, 0]))
    assert score_link(zs, "apply", zd, params) == pytest.approx(expected, abs=1e-6)


def test_pretrain_loss_values():
    assert pretrain_loss([0.5], [1]) == pytest.approx(np.log(2), abs=1e-9)
    assert pretrain_loss([0.5], [0]) == pytest.approx(np.log(2), abs=1e-9)
    assert pretrain_loss([1 - 1e-12], [1]) == pytest.approx(0.0, abs=1e-9)
    preds = [0.9, 0.2, 0.7, 0.4]
    labels = [1, 0, 0, 1]
    expected = np.mean([-np.log(0.9), -np.log(0.8), -np.log(0.3), -np.log(0.4)])
    assert pretrain_loss(preds, labels) == pytest.approx(expected, abs=1e-9)


def test_full_model_gradient_check(tmp_path):
    # dim 4, two layers, six nodes: every parameter against central differences
    entities = entity_rows(members=3, jobs=2, skills=1)
    rels = [("connect", 0, 1), ("apply", 0, 0), ("apply", 1, 1),
            ("master", 2, 0), ("require", 0, 0)]
    store = build_store(tmp_path, entities, rels, [(0, 0, 1)], materialize=False)
    batch = full_batch(store)
    assert batch.num_nodes == 6

    rng = np.random.default_rng(33)
    params = PretrainParams(4, 2, substream(4, "gradcheck"), dtype=np.float64)
    init = rng.uniform(-1, 1, (6, 4))
    triples = np.array([
        [0, 1, 0],  # apply member0 -> job0 (positive)
        [2, 2, 0],  # master member2 -> skill0 (positive)
        [1, 1, 0],  # apply member1 -> job0 (negative)
    ])
    labels = np.array([[1.0], [1.0], [0.0]])

    def forward():
        z = pretrain.encode(batch, ad.Tensor(init.copy()), params)
        logits = pretrain._score_triples(store, batch, z, params, triples)
        return ad.bce_with_logits(logits, labels.astype(np.float64))

    grads = ad.backward(forward(), params.all())
    for name, tensor in params.tensors.items():
        def loss_with(perturbed, tensor=tensor):
            saved = tensor.value
            tensor.value = perturbed[0]
            try:
                return float(forward().value[0, 0])
            finally:
                tensor.value = saved

        ref = fd_gradient(lambda arrs: loss_with(arrs), [tensor.value], 0)
        if np.abs(ref).max() < 1e-12 and np.abs(grads[tensor]).max() < 1e-12:
            continue
        assert rel_error(grads[tensor], ref) < 1e-4, name


def test_planted_clusters_reach_high_link_auc(cluster_run):
    _, _, _, _, history = cluster_run
    assert len(history) <= 20
    assert history[-1]["link_auc"] >= 0.85


def test_training_loss_decreases_over_first_epochs(cluster_run):
    _, _, _, _, history = cluster_run
    losses = [h["loss"] for h in history[:5]]
    non_improvements = sum(1 for a, b in zip(losses, losses[1:]) if b >= a)
    assert non_improvements <= 1


def test_random_embedding_baseline_near_chance(cluster_run):
    store, cfg, _, _, _ = cluster_run
    base_cfg = PretrainConfig(epochs=0, init_mode="random", seed=cfg.seed)
    eval_pos, eval_neg, _ = pretrain.holdout_links(store, base_cfg)
    init = pretrain.initial_embeddings(store, base_cfg)
    params = PretrainParams(base_cfg.dim, base_cfg.layers,
                            substream(base_cfg.seed, "pretrain:init"))
    baseline = pretrain.evaluate_link_auc(store, params, init, eval_pos, eval_neg)
    assert abs(baseline - 0.5) <= 0.05


def test_zero_epochs_is_deterministic_export(tmp_path):
    rng = np.random.default_rng(5)
    store, _, _ = random_store(tmp_path, rng)
    cfg = PretrainConfig(dim=8, layers=2, epochs=0, seed=11)
    _, table_a, hist = train_pretrain(store, cfg)
    _, table_b, _ = train_pretrain(store, cfg)
    assert hist == []
    for kind in EntityKind:
        assert table_a.tables[kind].tobytes() == table_b.tables[kind].tobytes()


def test_same_seed_bit_identical_tables(tmp_path):
    rng = np.random.default_rng(6)
    store, _, _ = random_store(tmp_path, rng)
    cfg = PretrainConfig(dim=8, layers=2, epochs=3, batch_pairs=8, seed=7)
    _, table_a, hist_a = train_pretrain(store, cfg)
    _, table_b, hist_b = train_pretrain(store, cfg)
    assert repr(hist_a) == repr(hist_b)  # repr compares equal even on nan entries
    assert all(np.isfinite(h["loss"]) for h in hist_a)
    for kind in EntityKind:
        assert table_a.tables[kind].tobytes() == table_b.tables[kind].tobytes()


def test_checkpoint_roundtrip(tmp_path, cluster_run):
    store, cfg, params, table, _ = cluster_run
    out = tmp_path / "ckpt"
    save_pretrain(out, cfg, store, params, table)
    loaded, manifest = load_embeddings(out)
    assert int(manifest["dim"]) == cfg.dim
    for kind in EntityKind:
        assert loaded.tables[kind].tobytes() == table.tables[kind].tobytes()
        assert loaded.tables[kind].shape[0] == store.num(kind)


def test_table_only_export_roundtrip(tmp_path, cluster_run):
    store, cfg, _, table, _ = cluster_run
    out = tmp_path / "tables"
    export_embeddings(table, out, cfg=cfg, store=store)
    loaded, manifest = load_embeddings(out)
    assert int(manifest["has_params"]) == 0
    for kind in EntityKind:
        assert loaded.tables[kind].tobytes() == table.tables[kind].tobytes()


def test_truncated_checkpoint_rejected(tmp_path, cluster_run):
    store, cfg, params, table, _ = cluster_run
    out = tmp_path / "ckpt"
    save_pretrain(out, cfg, store, params, table)
    victim = out / "embed_member.f32"
    victim.write_bytes(victim.read_bytes()[:-8])
    with pytest.raises(FormatError):
        load_embeddings(out)


def test_count_mismatch_rejected(tmp_path, cluster_run):
    store, cfg, params, table, _ = cluster_run
    out = tmp_path / "ckpt"
    save_pretrain(out, cfg, store, params, table)
    manifest_path = out / "manifest.txt"
    text = manifest_path.read_text().replace(f"count_member={store.num(EntityKind.MEMBER)}",
                                             "count_member=1")
    manifest_path.write_text(text)
    with pytest.raises(FormatError, match="manifest says"):
        load_embeddings(out)
