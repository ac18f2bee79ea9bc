import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tiny_config
from tempograph.corpus import generate_synthetic
from tempograph.model import BiaffineScorer, Vocabulary
from tempograph.objective import (
    Adam,
    OptimizerState,
    arc_loss,
    joint_loss,
    rel_loss,
    train,
    write_loss_curve,
)
from tempograph.preprocess import build_gold, corpus_windows
from tempograph.schema import TBDENSE
from tempograph.tensor import NonFiniteError, Tensor

B = TBDENSE.id_of("BEFORE")
L = TBDENSE.n_relations


def test_uniform_logits():
    n = 5
    arc, rel = build_gold(n, [(0, 2, B), (1, 4, TBDENSE.id_of("VAGUE"))], TBDENSE)
    mask = ~np.eye(n, dtype=bool)
    assert abs(arc_loss(np.zeros((n, n)), arc, mask).item() - math.log(2)) <= 1e-6
    assert abs(rel_loss(np.zeros((n, n, L)), rel).item() - math.log(L)) <= 1e-6


def test_perfect_predictions():
    n = 4
    arc, rel = build_gold(n, [(0, 3, B), (1, 2, TBDENSE.id_of("SIMULTANEOUS"))], TBDENSE)
    s_arc = np.where(arc, 50.0, -50.0)
    assert arc_loss(s_arc, arc, ~np.eye(n, dtype=bool)).item() < 1e-6
    s_rel = np.zeros((n, n, L))
    for i, j in zip(*np.nonzero(rel)):
        s_rel[i, j, rel[i, j] - 1] = 50.0
    assert rel_loss(s_rel, rel).item() < 1e-6


def test_arc_loss_hand_value():
    s = np.array([[0.0, 1.0], [-1.0, 0.0]])
    gold = np.array([[False, True], [False, False]])
    # -log sigmoid(1) for the positive cell, -log(1 - sigmoid(-1)) for the negative one
    expected = (-math.log(1 / (1 + math.exp(-1.0))) - math.log(1 - 1 / (1 + math.exp(1.0)))) / 2
    assert arc_loss(s, gold, np.ones((2, 2), dtype=bool)).item() == pytest.approx(expected, abs=1e-12)
    with pytest.raises(ValueError):
        arc_loss(s, gold, np.zeros((2, 2), dtype=bool))


def test_rel_loss_hand_value():
    arc, rel = build_gold(3, [(0, 1, B), (1, 2, TBDENSE.id_of("AFTER"))], TBDENSE)
    s = np.zeros((3, 3, L))
    s[0, 1, 0] = 1.0  # BEFORE logit for the (0, 1) pair
    expected = ((math.log(math.e + L - 1) - 1.0) + math.log(L)) / 2
    assert rel_loss(s, rel).item() == pytest.approx(expected, abs=1e-12)


def test_rel_loss_ignores_lower_triangle():
    arc, rel = build_gold(4, [(0, 3, B), (2, 1, TBDENSE.id_of("INCLUDES"))], TBDENSE)
    rng = np.random.default_rng(0)
    s = rng.normal(size=(4, 4, L))
    base = rel_loss(s, rel).item()
    s[np.tril_indices(4)] = rng.normal(size=(10, L)) * 100
    assert rel_loss(s, rel).item() == base


def test_rel_loss_swap_invariance():
    rng = np.random.default_rng(1)
    s = rng.normal(size=(5, 5, L))
    tuples = [(0, 3, B), (4, 1, TBDENSE.id_of("INCLUDES")), (2, 1, TBDENSE.id_of("VAGUE"))]
    base = rel_loss(s, build_gold(5, tuples, TBDENSE)[1]).item()
    for k in range(len(tuples)):
        i, j, r = tuples[k]
        swapped = list(tuples)
        swapped[k] = (j, i, int(TBDENSE.inverse_ids[r]))
        assert rel_loss(s, build_gold(5, swapped, TBDENSE)[1]).item() == base


def test_rel_loss_without_arc_module():
    arc, rel = build_gold(3, [(0, 1, B)], TBDENSE)
    mask = ~np.eye(3, dtype=bool)
    val = rel_loss(np.zeros((3, 3, L + 1)), rel, use_arc_module=False, loss_mask=mask).item()
    assert abs(val - math.log(L + 1)) <= 1e-9


def test_joint_loss():
    assert joint_loss(Tensor(0.7), Tensor(1.2)).item() == pytest.approx(1.9)
    with pytest.raises(NonFiniteError):
        joint_loss(Tensor(0.7), np.nan)


def adam_reference(theta, grads, lr, mu, nu, eps):
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t, g in enumerate(grads, 1):
        m = mu * m + (1 - mu) * g
        v = nu * v + (1 - nu) * g * g
        theta = theta - lr * (m / (1 - mu**t)) / (np.sqrt(v / (1 - nu**t)) + eps)
    return theta


def test_adam_matches_hand_formula():
    p = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = Adam({"p": p}, lr=0.1, mu=0.9, nu=0.9, epsilon=1e-12, clip_norm=1e9)
    grads = [np.array([0.3, -0.1, 0.2]), np.array([0.1, 0.2, -0.4]), np.array([-0.5, 0.0, 0.1])]
    for g in grads:
        p.grad = g.copy()
        opt.step()
    ref = adam_reference(np.array([1.0, -2.0, 0.5]), grads, 0.1, 0.9, 0.9, 1e-12)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)


def test_adam_single_scalar_step():
    p = Tensor(np.array([0.5]), requires_grad=True)
    p.grad = np.array([1.0])
    Adam({"p": p}, lr=0.01, mu=0.9, nu=0.9, epsilon=1e-12).step()
    # m = 0.1, v = 0.1; bias-corrected both become 1, so the step is lr * 1 / (1 + eps)
    assert p.data[0] == pytest.approx(0.5 - 0.01 / (1 + 1e-12), abs=1e-15)


def test_adam_zero_gradient_is_noop():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    opt = Adam({"p": p})
    opt.step()
    assert p.data.tolist() == [1.0, 2.0] and opt.state.step_count == 1


def test_adam_clips_global_norm():
    p = Tensor(np.zeros(2), requires_grad=True)
    q = Tensor(np.zeros(1), requires_grad=True)
    opt = Adam({"p": p, "q": q}, lr=1.0, clip_norm=5.0)
    p.grad, q.grad = np.array([30.0, 0.0]), np.array([40.0])
    assert opt.step() == pytest.approx(50.0)
    np.testing.assert_allclose(opt.state.m["p"], 0.1 * np.array([3.0, 0.0]))
    np.testing.assert_allclose(opt.state.m["q"], 0.1 * np.array([4.0]))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6))
def test_clipped_norm_bounded(values):
    # With mu = 0 the first moment is exactly the post-clip gradient.
    p = Tensor(np.zeros(len(values)), requires_grad=True)
    p.grad = np.array(values)
    opt = Adam({"p": p}, mu=0.0, clip_norm=5.0)
    opt.step()
    assert np.linalg.norm(opt.state.m["p"]) <= 5.0 + 1e-6


def test_learning_rate_decay():
    st = OptimizerState(lr=1.0, decay=0.75, decay_interval=5000)
    assert st.current_lr(1) == 1.0 and st.current_lr(5000) == 1.0
    assert st.current_lr(5001) == 0.75 and st.current_lr(10001) == 0.75**2


def small_setup(seed=0, n_docs=6, dim=8, **kw):
    docs = generate_synthetic(seed, n_docs, "tbdense")
    wins, _ = corpus_windows(docs, "tbdense", seed=seed)
    vocab = Vocabulary.build(w.tokens for w in wins)
    model = BiaffineScorer(tiny_config(embed_dim=dim, lstm_hidden=dim, mlp_dim=dim, **kw), "tbdense",
                           vocab, seed=seed)
    return model, wins


def test_training_reduces_loss():
    model, wins = small_setup()
    res = train(model, wins, epochs=6, batch_size=4, optimizer=OptimizerState(lr=1e-2))
    assert res.epoch_losses[-1] < res.epoch_losses[0]
    assert res.epochs_run == 6 and res.curve[-1]["epoch"] == 6


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_epoch_loss_decreases_first_five_epochs(seed):
    # Dropout makes the epoch mean a noisy estimate, so it is off here.
    model, wins = small_setup(seed, n_docs=20, dim=16, dropout=0.0)
    res = train(model, wins, epochs=5, seed=seed, batch_size=4, optimizer=OptimizerState(lr=3e-3))
    assert all(b < a for a, b in zip(res.epoch_losses, res.epoch_losses[1:])), res.epoch_losses


def test_training_deterministic(tmp_path):
    paths = []
    for k in range(2):
        model, wins = small_setup(seed=3)
        res = train(model, wins, epochs=2, seed=3, batch_size=2, optimizer=OptimizerState(lr=1e-2))
        paths.append(tmp_path / f"m{k}.ckpt")
        model.save(paths[-1])
        write_loss_curve(tmp_path / f"c{k}.tsv", res.curve)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    assert (tmp_path / "c0.tsv").read_bytes() == (tmp_path / "c1.tsv").read_bytes()


def test_training_without_gold_fails():
    model, wins = small_setup()
    for w in wins:
        w.rel_gold = np.zeros_like(w.rel_gold)
    with pytest.raises(ValueError, match="gold"):
        train(model, wins, epochs=1)
    with pytest.raises(ValueError):
        train(model, [], epochs=1)


def test_dev_tracking_and_target():
    model, wins = small_setup()
    scores = iter([0.2, 0.6, 0.5, 0.95, 0.1])
    res = train(model, wins, epochs=5, dev_fn=lambda m: next(scores), target_score=0.9)
    assert res.dev_scores == [0.2, 0.6, 0.5, 0.95] and res.best_epoch == 4
    assert res.best_params is not None


def test_no_arc_training_runs():
    model, wins = small_setup(use_arc_module=False)
    res = train(model, wins, epochs=2, batch_size=4, optimizer=OptimizerState(lr=1e-2))
    assert all(c["arc_loss"] == 0.0 for c in res.curve)
