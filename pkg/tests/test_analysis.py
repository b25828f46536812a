import json

import numpy as np
import pytest

from deepthink.analysis import (
    NOT_RECOVERED,
    SweepResult,
    delta_phi,
    delta_phi_on_noise,
    delta_phi_run,
    intervene,
    iteration_sweep,
    max_confidence_exit,
    perturb_features_noise,
    perturb_features_zero,
    perturb_input_bitflip,
    perturb_maze_endpoint,
    read_curve_csv,
    read_summary,
    swap_features,
    write_curve_csv,
    write_summary,
)
from deepthink.models import IterationTrace, ModelSpec, ModelState, decode, forward
from deepthink.problems import gen_maze, gen_prefix_sum_dataset, maze_oracle_path
from deepthink.problems.prefix import encode_bits, prefix_sum_target
from deepthink.training import exact_match_accuracy


def state_for(recall=True, task="prefix", width=6, seed=0):
    head = (4, 4, 2)
    return ModelState.create(ModelSpec(task, width, recall=recall, max_iters=4, head_channels=head), seed)


@pytest.fixture
def data():
    d = gen_prefix_sum_dataset(10, 12, 0)
    return d.bits, d.inputs(), d.targets()


def clean_logits(state, x, iters):
    return forward(state, x, iters, record=True).logits


def test_sweep_result_peak_consistency():
    r = SweepResult("m", 8, [0.1, 0.5, 0.5, 0.2])
    assert r.peak_acc == 0.5 and r.peak_iter == 2
    assert r.at(4) == pytest.approx(0.2)
    with pytest.raises(ValueError):
        SweepResult("m", 8, [])


def test_sweep_single_iteration_matches_accuracy(data):
    _, x, y = data
    state = state_for()
    assert iteration_sweep(state, x, y, 1).curve[0] == exact_match_accuracy(state, x, y, 1)


def test_sweep_untrained_is_zero_on_long_strings():
    d = gen_prefix_sum_dataset(32, 1000, 1)
    r = iteration_sweep(state_for(), d.inputs(), d.targets(), 5)
    assert np.all(r.curve == 0.0)


def test_sweep_batching_is_invisible(data):
    _, x, y = data
    state = state_for()
    a = iteration_sweep(state, x, y, 6, batch_size=5)
    b = iteration_sweep(state, x, y, 6, batch_size=100)
    assert np.array_equal(a.curve, b.curve)


def test_sweep_rejects_zero(data):
    _, x, y = data
    with pytest.raises(ValueError):
        iteration_sweep(state_for(), x, y, 0)


def fake_trace(conf_rows):
    t = IterationTrace()
    for i, c in enumerate(conf_rows):
        t.logits.append(np.full((len(c), 3, 2), float(i)))
        t.confidences.append(np.asarray(c, dtype=float))
    return t


def test_max_confidence_exit():
    it, _ = max_confidence_exit(fake_trace([[0.5, 0.7], [0.6, 0.7], [0.9, 0.7]]))
    assert it.tolist() == [3, 1]
    with pytest.raises(ValueError):
        max_confidence_exit(IterationTrace())


def test_max_confidence_exit_returns_chosen_output():
    state = state_for()
    x = gen_prefix_sum_dataset(8, 5, 2).inputs()
    trace = forward(state, x, 6, record=True)
    it, out = max_confidence_exit(trace)
    for i, t in enumerate(it):
        assert np.array_equal(out[i], trace.predictions(int(t))[i])


@pytest.mark.parametrize("recall", [True, False])
def test_null_noise_reproduces_clean_trace(data, recall):
    _, x, y = data
    state = state_for(recall)
    rep = perturb_features_noise(state, x, y, t=3, sigma=0.0, extra=5, keep_logits=True)
    clean = clean_logits(state, x, 8)
    for j, lg in enumerate(rep.logits):
        assert np.array_equal(lg, clean[3 + j - 1])


def test_noise_is_seeded(data):
    _, x, y = data
    state = state_for()
    a = perturb_features_noise(state, x, y, t=2, seed=3, extra=4, keep_logits=True)
    b = perturb_features_noise(state, x, y, t=2, seed=3, extra=4, keep_logits=True)
    c = perturb_features_noise(state, x, y, t=2, seed=4, extra=4, keep_logits=True)
    assert all(np.array_equal(p, q) for p, q in zip(a.logits, b.logits))
    assert not np.array_equal(a.logits[0], c.logits[0])


def test_zeroing_forgets_history(data):
    _, x, y = data
    state = state_for()
    a = perturb_features_zero(state, x, y, t=2, extra=4, keep_logits=True)
    b = perturb_features_zero(state, x, y, t=6, extra=4, keep_logits=True)
    assert all(np.array_equal(p, q) for p, q in zip(a.logits, b.logits))


def test_zeroing_non_recall_is_input_independent(data):
    _, x, y = data
    state = state_for(recall=False)
    other = gen_prefix_sum_dataset(10, 12, 9).inputs()
    a = perturb_features_zero(state, x, y, t=2, extra=3, keep_logits=True)
    b = perturb_features_zero(state, other, y, t=2, extra=3, keep_logits=True)
    assert all(np.array_equal(p, q) for p, q in zip(a.logits, b.logits))
    assert np.all(a.logits[-1] == a.logits[-1][0])


def test_flipping_last_bit_changes_one_target():
    bits = np.random.default_rng(0).integers(0, 2, (50, 16))
    flipped = bits.copy()
    flipped[:, -1] ^= 1
    diff = prefix_sum_target(bits) != prefix_sum_target(flipped)
    assert np.all(diff.sum(axis=1) == 1) and np.all(diff[:, -1])


def test_bitflip_rejects_bad_index(data):
    bits, _, _ = data
    with pytest.raises(ValueError):
        perturb_input_bitflip(state_for(), bits, 10, t=2)
    with pytest.raises(ValueError):
        perturb_input_bitflip(state_for(), bits, -1, t=2)


def test_bitflip_non_recall_trace_unchanged(data):
    bits, x, _ = data
    state = state_for(recall=False)
    rep = perturb_input_bitflip(state, bits, 4, t=2, extra=4, keep_logits=True)
    clean = clean_logits(state, x, 6)
    assert all(np.array_equal(lg, clean[1 + j]) for j, lg in enumerate(rep.logits))
    assert "non-recall" in rep.note


def test_bitflip_per_example_indices(data):
    bits, _, _ = data
    state = state_for()
    idx = np.arange(len(bits)) % bits.shape[1]
    rep = perturb_input_bitflip(state, bits, idx, t=2, extra=2)
    assert len(rep.recovery) == len(bits)


def test_recovery_zero_when_already_correct(data):
    _, x, _ = data
    state = state_for()
    own = decode(clean_logits(state, x, 3)[-1])
    rep = intervene(state, x, 3, x, own, "null", extra=5)
    assert rep.recovery == [0] * len(x)
    assert rep.curve[0] == 1.0


def test_recovery_marker_when_never_right(data):
    _, x, y = data
    state = state_for()
    impossible = 1 - decode(clean_logits(state, x, 3)[-1])
    rep = intervene(state, x, 3, x, impossible, "null", extra=0)
    assert rep.recovery_times() == [NOT_RECOVERED] * len(x)
    assert rep.summary()["median_recovery"] == NOT_RECOVERED


def test_stop_when_recovered_truncates(data):
    _, x, _ = data
    state = state_for()
    own = decode(clean_logits(state, x, 3)[-1])
    rep = intervene(state, x, 3, x, own, "null", extra=50, stop_when_recovered=True)
    assert len(rep.curve) == 1


def long_maze(n=7):
    return next(m for m in (gen_maze(n, s) for s in range(200)) if len(maze_oracle_path(m)) > 4)


def test_endpoint_move_non_recall_unchanged():
    state = state_for(recall=False, task="maze")
    maze = long_maze()
    rep = perturb_maze_endpoint(state, [maze], t=2, extra=3, keep_logits=True)
    clean = clean_logits(state, maze.image[None], 5)
    assert all(np.array_equal(lg, clean[1 + j]) for j, lg in enumerate(rep.logits))


def test_endpoint_move_recall_sees_new_input():
    state = state_for(recall=True, task="maze")
    maze = long_maze()
    rep = perturb_maze_endpoint(state, [maze], t=2, extra=3, keep_logits=True)
    clean = clean_logits(state, maze.image[None], 5)
    assert np.array_equal(rep.logits[0], clean[1])
    assert not np.array_equal(rep.logits[1], clean[2])


def test_endpoint_move_rejects_short_path():
    short = next(m for m in (gen_maze(5, s) for s in range(500)) if len(maze_oracle_path(m)) <= 3)
    with pytest.raises(ValueError):
        perturb_maze_endpoint(state_for(task="maze"), [short], t=1)


def test_swap_same_input_is_clean(data):
    _, x, y = data
    state = state_for()
    rep = swap_features(state, x, y, x, t=3, extra=4, keep_logits=True)
    clean = clean_logits(state, x, 7)
    assert all(np.array_equal(lg, clean[2 + j]) for j, lg in enumerate(rep.logits))


@pytest.mark.parametrize("task", ["prefix", "maze"])
def test_swap_non_recall_follows_b(task):
    state = state_for(recall=False, task=task)
    if task == "prefix":
        a, b = gen_prefix_sum_dataset(10, 4, 1), gen_prefix_sum_dataset(10, 4, 2)
        x_a, y_a, x_b = a.inputs(), a.targets(), b.inputs()
    else:
        ma, mb = gen_maze(5, 1), gen_maze(5, 2)
        x_a, y_a, x_b = ma.image[None], ma.target[None], mb.image[None]
    rep = swap_features(state, x_a, y_a, x_b, t=2, extra=3, keep_logits=True)
    clean_b = clean_logits(state, x_b, 5)
    assert all(np.array_equal(lg, clean_b[1 + j]) for j, lg in enumerate(rep.logits))


def test_swap_rejects_size_mismatch():
    state = state_for()
    a, b = gen_prefix_sum_dataset(10, 2, 1), gen_prefix_sum_dataset(12, 2, 1)
    with pytest.raises(ValueError):
        swap_features(state, a.inputs(), a.targets(), b.inputs(), t=2)


def test_delta_phi_examples():
    same = [np.ones((2, 3))] * 4
    assert np.all(delta_phi(same) == 0)
    assert delta_phi([np.zeros(2), np.array([3.0, 4.0])]).tolist() == [5.0]
    with pytest.raises(ValueError):
        delta_phi([np.zeros(2)])


def test_delta_phi_run_matches_trace(data):
    _, x, _ = data
    state = state_for()
    trace = forward(state, x, 6, record=True)
    run = delta_phi_run(state, x, 6)
    np.testing.assert_allclose(run[1:], delta_phi(trace), rtol=1e-12)


def test_delta_phi_on_noise_deterministic():
    state = state_for(task="maze")
    a = delta_phi_on_noise(state, 7, 5, seed=1)
    assert np.array_equal(a, delta_phi_on_noise(state, 7, 5, seed=1))
    assert not np.array_equal(a, delta_phi_on_noise(state, 7, 5, seed=2))
    assert a.shape == (5,) and np.all(np.isfinite(a))


def test_curve_csv_roundtrip(tmp_path):
    path = tmp_path / "c.csv"
    acc = np.array([0.0, 0.25, 1 / 3])
    write_curve_csv(path, {"accuracy": acc, "delta_phi": np.array([1.5, 2.0, 0.1])}, "abcd")
    meta, cols = read_curve_csv(path)
    assert meta["config_hash"] == "abcd"
    assert cols["iteration"].tolist() == [1, 2, 3]
    assert np.array_equal(cols["accuracy"], acc)


def test_summary_version_check(tmp_path):
    path = tmp_path / "s.json"
    write_summary(path, {"peak": np.float64(0.5), "curve": np.arange(3)}, "abcd")
    doc = read_summary(path)
    assert doc["config_hash"] == "abcd" and doc["curve"] == [0, 1, 2]
    doc["format_version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(ValueError, match="format"):
        read_summary(path)


def test_report_summary_fields(data):
    _, x, y = data
    rep = perturb_features_zero(state_for(), x, y, t=2, extra=3)
    s = rep.summary()
    assert s["kind"] == "zeros" and s["t"] == 2
    assert 0.0 <= s["recovered_fraction"] <= 1.0
    assert len(rep.curve) == 4
