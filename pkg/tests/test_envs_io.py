import json

import numpy as np
import pytest

from polycomp.cmp import PolicyParams, TabularCmp, occupancy, occupancy_from_probs, random_cmp
from polycomp.envs import (
    BUILTIN,
    DOWN,
    LEFT,
    RIGHT,
    SWIM_DOWN,
    SWIM_UP,
    UP,
    RiverSwimParams,
    gridworld,
    river_swim,
    single_state,
)
from polycomp.guarantee import is_sigma_compression
from polycomp.io import (
    TRACE_HEADER,
    CmpFormatError,
    CmpValidationError,
    cmp_from_dict,
    cmp_to_dict,
    csv_text,
    dumps,
    load_cmp,
    load_report,
    save_cmp,
    save_report,
    trace_rows,
)
from polycomp.psca import compress
from polycomp.rl import RewardFn


def test_river_swim_shape_and_reward():
    cmp, reward = river_swim()
    assert (cmp.n_states, cmp.n_actions, cmp.discount) == (6, 2, 0.95)
    assert np.flatnonzero(reward.table).tolist() == [5 * 2 + SWIM_UP]
    assert reward.table[5, SWIM_UP] == reward.rmax == 100.0
    assert cmp.init_dist[0] == 1.0


def test_river_swim_transition_numbers():
    P = river_swim()[0].transition
    assert P[3, SWIM_UP, 4] == 0.35 and P[3, SWIM_UP, 3] == 0.60 and P[3, SWIM_UP, 2] == 0.05
    assert P[0, SWIM_UP, 1] == 0.35 and P[0, SWIM_UP, 0] == pytest.approx(0.65)
    assert P[5, SWIM_UP, 5] == 0.60 and P[5, SWIM_UP, 4] == pytest.approx(0.40)
    assert P[0, SWIM_DOWN, 0] == 1.0 and P[4, SWIM_DOWN, 3] == 1.0


def test_swim_down_stays_home():
    cmp, _ = river_swim()
    pi = np.zeros((6, 2))
    pi[:, SWIM_DOWN] = 1.0
    assert occupancy_from_probs(cmp, pi).d_s[0] >= 0.99


def test_river_swim_overrides_validated():
    with pytest.raises(ValueError):
        RiverSwimParams(up_success=0.5)  # middle row no longer sums to 1
    with pytest.raises(ValueError):
        RiverSwimParams(n_states=1)
    cmp, _ = river_swim(RiverSwimParams(n_states=4, discount=0.9))
    assert cmp.n_states == 4 and cmp.discount == 0.9


def test_builders_deterministic():
    for build in BUILTIN.values():
        assert build() == build()


def test_gridworld_corners():
    cmp = gridworld()
    assert (cmp.n_states, cmp.n_actions) == (9, 4)
    assert np.allclose(cmp.init_dist, 1 / 9)
    top_left = [a for a in range(4) if cmp.transition[0, a, 0] == 1.0]
    assert sorted(top_left) == sorted([UP, LEFT])
    assert cmp.transition[0, RIGHT, 1] == 1.0 and cmp.transition[0, DOWN, 3] == 1.0
    assert cmp.transition[4, UP, 1] == 1.0  # center moves freely


def test_gridworld_too_small():
    with pytest.raises(ValueError):
        gridworld(1, 1)


def test_gridworld_rotation_symmetry():
    cmp = gridworld()
    d = occupancy(cmp, PolicyParams.zeros(9, 4)).d_sa
    # clockwise quarter turn: (r, c) -> (c, 2 - r); up -> right -> down -> left -> up
    state = [c * 3 + (2 - r) for r in range(3) for c in range(3)]
    action = {UP: RIGHT, RIGHT: DOWN, DOWN: LEFT, LEFT: UP}
    for s in range(9):
        for a in range(4):
            assert d[state[s], action[a]] == pytest.approx(d[s, a], abs=1e-14)


def test_single_state_occupancy_is_policy():
    cmp = single_state(3)
    p = PolicyParams(np.array([[0.3, -1.0, 0.0]]))
    from polycomp.cmp import softmax

    assert np.allclose(occupancy(cmp, p).d_sa, softmax(p.logits))


def test_round_trip_bit_exact(tmp_path, rng):
    cmp = random_cmp(rng, 4, 3, 0.87)
    reward = RewardFn(rng.uniform(-2, 2, (4, 3)), 2.0)
    path = tmp_path / "cmp.json"
    save_cmp(path, cmp, reward, {"note": "random"})
    back, rback, meta = load_cmp(path)
    assert np.array_equal(back.transition, cmp.transition)
    assert np.array_equal(back.init_dist, cmp.init_dist)
    assert back.discount == cmp.discount
    assert np.array_equal(rback.table, reward.table) and rback.rmax == reward.rmax
    assert meta == {"note": "random"}
    save_cmp(tmp_path / "again.json", back, rback, meta)
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_reward_optional():
    cmp, reward, meta = cmp_from_dict(cmp_to_dict(single_state(2)))
    assert reward is None and meta == {}


def test_bad_row_sum_names_pair():
    doc = cmp_to_dict(gridworld(1, 2))
    doc["transition"][1 * 4 * 2 + 2 * 2 + 0] = 0.9  # state 1, action 2, first successor
    with pytest.raises(CmpValidationError, match=r"s=1, a=2"):
        cmp_from_dict(doc)


def test_tiny_row_error_tolerated():
    doc = cmp_to_dict(single_state(2))
    doc["transition"] = [1.0 + 5e-10, 1.0]
    cmp, _, _ = cmp_from_dict(doc)
    assert cmp.n_actions == 2


def test_parse_error_has_location(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n "format_version": 1,\n "n_states": 2,,\n}\n')
    with pytest.raises(CmpFormatError, match=r"line 3 column"):
        load_cmp(path)


@pytest.mark.parametrize("mutate, where", [
    (lambda d: d.pop("discount"), "discount"),
    (lambda d: d.update(n_states="two"), "n_states"),
    (lambda d: d.update(init_dist=[1.0, 0.0, 0.0]), "init_dist"),
    (lambda d: d["transition"].__setitem__(0, "x"), r"transition\[0\]"),
    (lambda d: d.update(format_version=7), "format_version"),
])
def test_field_errors_name_the_field(mutate, where):
    doc = cmp_to_dict(single_state(2))
    mutate(doc)
    with pytest.raises(CmpFormatError, match=where):
        cmp_from_dict(doc)


def test_missing_file_is_format_error(tmp_path):
    with pytest.raises(CmpFormatError):
        load_cmp(tmp_path / "nope.json")


def test_report_round_trip_reverifies(tmp_path):
    cmp = single_state(2)
    rep = compress(cmp, 2.5, seed=1)
    path = tmp_path / "report.json"
    save_report(path, rep, cmp, env={"builtin": "coin"})
    back, bcmp, doc = load_report(path)
    assert bcmp == cmp
    assert doc["tool"]["name"] == "polycomp" and doc["sigma"] == 2.5
    assert back.cover_bound_trace == rep.cover_bound_trace
    for a, b in zip(back.cover.components, rep.cover.components):
        assert np.array_equal(a.logits, b.logits)
    ok, _ = is_sigma_compression(bcmp, back.cover.components, back.sigma)
    assert ok == rep.converged
    save_report(tmp_path / "again.json", back, bcmp, env={"builtin": "coin"})
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()


def test_river_swim_report_reverifies(tmp_path):
    cmp, _ = river_swim()
    rep = compress(cmp, 25.0, seed=0, k_cap=2, z_restarts=1, check_dse=False)
    assert rep.converged
    save_report(tmp_path / "r.json", rep, cmp)
    back, bcmp, _ = load_report(tmp_path / "r.json")
    assert is_sigma_compression(bcmp, back.cover.components, 25.0)[0]


def test_report_kind_checked(tmp_path):
    path = tmp_path / "cmp.json"
    save_cmp(path, single_state(2))
    with pytest.raises(CmpFormatError, match="kind"):
        load_report(path)


def test_csv_uses_round_trip_floats():
    text = csv_text(TRACE_HEADER, [(1, 0.1 + 0.2, 1 / 3, float("inf"), 4)])
    lines = text.splitlines()
    assert lines[0] == "K,V,B,z_estimate,epochs"
    assert lines[1] == f"1,{0.1 + 0.2!r},{1 / 3!r},inf,4"


def test_trace_rows_match_report():
    rep = compress(single_state(2), 2.5, seed=0)
    rows = list(trace_rows(rep))
    assert len(rows) == rep.K
    assert rows[-1][2] == rep.cover_bound


def test_dumps_is_json():
    doc = cmp_to_dict(TabularCmp(np.ones((1, 1, 1)), np.ones(1), 0.5))
    assert json.loads(dumps(doc)) == doc


def test_csv_unwraps_numpy_scalars():
    text = csv_text(["a", "b"], [(np.float64(0.1), np.int64(3))])
    assert text.splitlines()[1] == "0.1,3"
