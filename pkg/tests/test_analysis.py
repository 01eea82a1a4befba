"""Post-processing: standardization, exceedance, membership, relabeling,
summaries and DIC-based selection."""
import math

import numpy as np
import pytest

from ordvote import (
    BiasReport,
    BiasRow,
    DegenerateDrawError,
    MembershipMatrix,
    ModelConfig,
    ParameterState,
    ScoreScale,
    best_label_agreement,
    dic_components,
    exceedance,
    membership,
    performer_effects,
    relabel,
    select_model,
    standardize_alpha,
    standardized_matrix,
    summarize,
    write_bias_report,
    write_membership,
    write_performer_effects,
    write_summary,
)
from helpers import build_dataset, make_archive

SQRT_HALF = 0.7071067811865475


def k1_state(alpha, gamma=0.0, n_performers=1):
    alpha = np.asarray(alpha, dtype=float)
    return ParameterState(
        cutpoints=np.array([0.0]),
        beta=np.zeros(5),
        alpha=alpha,
        gamma=float(gamma),
        delta=np.zeros((1, n_performers)),
        psi=0.0,
        phi=0.0,
        regions=np.zeros(2, dtype=np.intp),
        zeta=np.array([1.0]),
        sigma_alpha=1.0,
        sigma_delta=1.0,
    )


def pair2_archive(alphas, gammas=None, chains=1):
    """K=1 archive over two observed pairs with the given alpha rows."""
    scale = ScoreScale(values=(0, 1))
    data = build_dataset([(0, 0, 0, 0), (1, 0, 0, 1)], 2, 1, scale=scale)
    model = ModelConfig(k=1, scale=scale)
    if gammas is None:
        gammas = [0.0] * len(alphas)
    states = [k1_state(a, g) for a, g in zip(alphas, gammas)]
    split = np.array_split(states, chains)
    devs = [[0.0] * len(part) for part in split]
    return make_archive(model, data, [list(part) for part in split], chain_deviances=devs)


# ---------------------------------------------------------------------------
# standardization


def test_standardize_two_values():
    got = standardize_alpha(np.array([1.0, 3.0]))
    assert abs(got[0] - (-SQRT_HALF)) < 1e-15
    assert abs(got[1] - SQRT_HALF) < 1e-15


def test_standardize_zero_mean_unit_sd():
    alpha = np.random.default_rng(0).normal(2.0, 3.0, 40)
    star = standardize_alpha(alpha)
    assert abs(star.mean()) < 1e-12
    assert abs(star.std(ddof=1) - 1.0) < 1e-12


def test_standardize_accepts_parameter_state():
    state = k1_state([0.5, -1.5])
    assert np.array_equal(standardize_alpha(state), standardize_alpha(state.alpha))


def test_standardize_rejects_degenerate_input():
    with pytest.raises(DegenerateDrawError, match="all pair effects equal; zero dispersion"):
        standardize_alpha(np.full(6, 1.25))
    with pytest.raises(ValueError, match="at least two observed pairs"):
        standardize_alpha(np.array([1.0]))


def test_standardized_matrix_matches_rowwise():
    rng = np.random.default_rng(1)
    alphas = rng.normal(size=(7, 2))
    draws = pair2_archive(list(alphas))
    mat = standardized_matrix(draws)
    rowwise = np.vstack([standardize_alpha(a) for a in alphas])
    assert np.max(np.abs(mat - rowwise)) < 1e-12


def test_standardized_matrix_rejects_flat_draw():
    draws = pair2_archive([[1.0, 2.0], [3.0, 3.0]])
    with pytest.raises(DegenerateDrawError, match="zero pair-effect dispersion"):
        standardized_matrix(draws)


# ---------------------------------------------------------------------------
# exceedance report


def triple_archive(alphas):
    """Three observed pairs so standardized values can vary freely."""
    scale = ScoreScale(values=(0, 1))
    data = build_dataset(
        [(0, 0, 0, 0), (0, 1, 0, 1), (1, 0, 0, 0)], 2, 2, scale=scale
    )
    model = ModelConfig(k=1, scale=scale)
    states = [k1_state(a, n_performers=2) for a in alphas]
    return make_archive(model, data, [states], chain_deviances=[[0.0] * len(states)])


def test_exceedance_hand_fractions():
    # (c, 0, -c) standardizes to (1, 0, -1); threshold 0.5 splits the signs
    up = [3.0, 0.0, -3.0]
    down = [-3.0, 0.0, 3.0]
    draws = triple_archive([up] * 3 + [down] * 7)
    report = exceedance(draws, threshold=0.5)
    assert report.n_draws == 10
    first = report.rows[0]
    assert (first.voter, first.performer) == ("V01", "P01")
    assert first.p_pos == 0.3 and first.n_pos == 3
    assert first.p_neg == 0.7 and first.n_neg == 7
    middle = report.rows[1]
    assert middle.p_pos == 0.0 and middle.p_neg == 0.0
    last = report.rows[2]
    assert last.p_pos == 0.7 and last.p_neg == 0.3


def test_exceedance_matches_recount_oracle():
    rng = np.random.default_rng(2)
    draws = triple_archive(list(rng.normal(size=(40, 3))))
    report = exceedance(draws, threshold=0.8)
    star = standardized_matrix(draws)
    for h, row in enumerate(report.rows):
        col = star[:, h]
        assert row.n_pos == int(np.sum(col > 0.8))
        assert row.n_neg == int(np.sum(col < -0.8))
        assert row.p_pos == row.n_pos / 40
        assert row.p_neg == row.n_neg / 40
        assert row.n_pos + row.n_neg + int(np.sum(np.abs(col) <= 0.8)) == 40
        assert abs(row.mean - math.fsum(col.tolist()) / 40) < 1e-15
        s = np.sort(col)
        assert row.q025 == s[math.ceil(0.025 * 40) - 1]
        assert row.q975 == s[math.ceil(0.975 * 40) - 1]


def test_exceedance_extreme_cases():
    draws = triple_archive([[3.0, 0.0, -3.0]] * 5)
    sure = exceedance(draws, threshold=0.5)
    assert sure.rows[0].p_pos == 1.0 and sure.rows[0].p_neg == 0.0
    calm = exceedance(draws, threshold=50.0)
    for row in calm.rows:
        assert row.p_pos == 0.0 and row.p_neg == 0.0 and row.n_pos == row.n_neg == 0


def test_exceedance_rejects_bad_threshold():
    draws = triple_archive([[1.0, 0.0, -1.0]] * 4)
    with pytest.raises(ValueError, match="threshold must be positive"):
        exceedance(draws, threshold=0.0)


def test_bias_report_duplication_is_byte_stable(tmp_path):
    rng = np.random.default_rng(3)
    alphas = list(rng.normal(size=(10, 3)))
    single = exceedance(triple_archive(alphas), threshold=1.0)
    double = exceedance(triple_archive(alphas + alphas), threshold=1.0)
    p1, p2 = tmp_path / "one.csv", tmp_path / "two.csv"
    write_bias_report(single, p1)
    write_bias_report(double, p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert header == "voter,performer,mean,q025,q25,q75,q975,p_pos,p_neg"


def test_bias_report_validation():
    row = BiasRow("A", "X", 0.0, -1.0, -0.5, 0.5, 1.0, 0.1, 0.1, 1, 1)
    BiasReport(threshold=1.96, n_draws=10, rows=(row,))
    with pytest.raises(ValueError, match="lie in \\[0, 1\\]"):
        BiasReport(threshold=1.96, n_draws=10, rows=(BiasRow("A", "X", 0, -1, 0, 0, 1, 1.5, 0.0),))
    with pytest.raises(ValueError, match="counts exceed"):
        BiasReport(threshold=1.96, n_draws=1, rows=(BiasRow("A", "X", 0, -1, 0, 0, 1, 1.0, 1.0, 1, 1),))
    with pytest.raises(ValueError, match="nested"):
        BiasReport(threshold=1.96, n_draws=10, rows=(BiasRow("A", "X", 0, 1.0, 0, 0, -1.0, 0.0, 0.0),))


# ---------------------------------------------------------------------------
# membership


def labeled_archive(region_rows, k=2, zetas=None, deltas=None):
    scale = ScoreScale(values=(0, 1))
    data = build_dataset([(0, 0, 0, 0), (1, 0, 0, 1)], 2, 1, scale=scale)
    model = ModelConfig(k=k, scale=scale)
    states = []
    for i, regions in enumerate(region_rows):
        states.append(
            ParameterState(
                cutpoints=np.array([0.0]),
                beta=np.zeros(5),
                alpha=np.array([0.1, -0.1]),
                gamma=0.0,
                delta=np.asarray(deltas[i], dtype=float) if deltas else np.zeros((k, 1)),
                psi=0.0,
                phi=0.0,
                regions=np.asarray(regions, dtype=np.intp),
                zeta=np.asarray(zetas[i], dtype=float) if zetas else np.full(k, 1.0 / k),
                sigma_alpha=1.0,
                sigma_delta=1.0,
            )
        )
    return make_archive(model, data, [states], chain_deviances=[[0.0] * len(states)])


def test_membership_k1_is_all_ones():
    draws = pair2_archive([[0.1, -0.2]] * 4)
    mat = membership(draws).matrix
    assert np.array_equal(mat, np.ones((2, 1)))


def test_membership_hand_counts():
    rows = [[0, 0], [1, 0], [1, 1], [2, 0]]
    draws = labeled_archive(rows, k=3)
    mat = membership(draws).matrix
    assert np.array_equal(mat[0], [0.25, 0.5, 0.25])
    assert np.array_equal(mat[1], [0.75, 0.25, 0.0])


def test_membership_one_hot():
    draws = labeled_archive([[1, 0]] * 6, k=2)
    mat = membership(draws).matrix
    assert np.array_equal(mat, [[0.0, 1.0], [1.0, 0.0]])


def test_membership_duplication_invariant():
    rows = [[0, 1], [1, 1], [0, 0]]
    once = membership(labeled_archive(rows, k=2)).matrix
    twice = membership(labeled_archive(rows + rows, k=2)).matrix
    assert np.array_equal(once, twice)


def test_membership_matrix_validation():
    with pytest.raises(ValueError, match="sum to 1"):
        MembershipMatrix(voters=("A",), matrix=np.array([[0.6, 0.6]]))
    with pytest.raises(ValueError, match="lie in \\[0, 1\\]"):
        MembershipMatrix(voters=("A",), matrix=np.array([[1.5, -0.5]]))
    with pytest.raises(ValueError, match="one row per voter"):
        MembershipMatrix(voters=("A", "B"), matrix=np.array([[1.0]]))


def test_write_membership_format(tmp_path):
    draws = labeled_archive([[0, 1], [0, 1]], k=2)
    path = tmp_path / "membership.csv"
    write_membership(membership(draws), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "voter,k,probability"
    assert lines[1] == "V01,1,1.0"
    assert lines[4] == "V02,2,1.0"


# ---------------------------------------------------------------------------
# relabeling


def flip_rows(mat, lay):
    """Swap the two cluster labels of every row, moving delta and zeta."""
    out = mat.copy()
    n = mat.shape[0]
    labels = np.rint(mat[:, lay.region_slice]).astype(int)
    out[:, lay.region_slice] = 3 - labels
    delta = mat[:, lay.delta_slice].reshape(n, 2, len(lay.performers))
    out[:, lay.delta_slice] = delta[:, ::-1, :].reshape(n, -1)
    out[:, lay.zeta_slice] = mat[:, lay.zeta_slice][:, ::-1]
    return out


def switched_fixture():
    rng = np.random.default_rng(4)
    rows = [[0, 1]] * 4
    zetas = [sorted(rng.dirichlet([1, 1])) for _ in range(4)]
    deltas = [rng.normal(size=(2, 1)) for _ in range(4)]
    return labeled_archive(rows, k=2, zetas=zetas, deltas=deltas)


def test_relabel_k1_is_passthrough():
    draws = pair2_archive([[0.1, -0.2]] * 3)
    assert relabel(draws) is draws


def test_relabel_constant_labels_identity():
    draws = switched_fixture()
    out = relabel(draws)
    for a, b in zip(out.chains, draws.chains):
        assert np.array_equal(a, b)


def test_relabel_undoes_flips():
    draws = switched_fixture()
    lay = draws.layout
    corrupted = draws.chains[0].copy()
    corrupted[1:] = flip_rows(corrupted[1:], lay)
    out = relabel(draws.with_chains([corrupted]))
    assert np.array_equal(out.chains[0], draws.chains[0])


def test_relabel_flip_everything_is_fixed_point():
    draws = switched_fixture()
    lay = draws.layout
    flipped = draws.with_chains([flip_rows(draws.chains[0], lay)])
    out = relabel(flipped)
    assert np.array_equal(out.chains[0], flipped.chains[0])


def test_relabel_leaves_label_invariant_columns_alone():
    draws = switched_fixture()
    lay = draws.layout
    corrupted = draws.chains[0].copy()
    corrupted[2:] = flip_rows(corrupted[2:], lay)
    out = relabel(draws.with_chains([corrupted]))
    for sl in (lay.lambda_slice, lay.beta_slice, lay.alpha_slice):
        assert np.array_equal(out.chains[0][:, sl], corrupted[:, sl])
    dev = lay.column_index("deviance")
    assert np.array_equal(out.chains[0][:, dev], corrupted[:, dev])


def test_relabel_then_membership_concentrates():
    draws = switched_fixture()
    lay = draws.layout
    mixed = draws.chains[0].copy()
    mixed[2:] = flip_rows(mixed[2:], lay)
    before = membership(draws.with_chains([mixed])).matrix
    after = membership(relabel(draws.with_chains([mixed]))).matrix
    assert np.array_equal(before[0], [0.5, 0.5])
    assert np.array_equal(after, [[1.0, 0.0], [0.0, 1.0]])


def test_relabel_requires_reference_draws():
    draws = switched_fixture()
    empty_first = draws.with_chains([draws.chains[0][:0], draws.chains[0]])
    with pytest.raises(ValueError, match="chain 1 holds no draws"):
        relabel(empty_first)


# ---------------------------------------------------------------------------
# summaries


def test_summarize_quantile_fixture():
    draws = pair2_archive([[0.1, -0.1]] * 100, gammas=[float(i) for i in range(1, 101)])
    rows = {r.parameter: r for r in summarize(draws)}
    g = rows["gamma"]
    assert g.mean == 50.5
    assert (g.q025, g.q25, g.q75, g.q975) == (3.0, 25.0, 75.0, 98.0)


def test_summarize_includes_deviance_excludes_labels():
    draws = labeled_archive([[0, 1]] * 4, k=2)
    names = [r.parameter for r in summarize(draws)]
    assert "deviance" in names
    assert not any(n.startswith("R.") for n in names)
    assert "zeta.1" in names and "delta.2.P01" in names


def test_summarize_constant_column():
    draws = pair2_archive([[0.5, -0.5]] * 8)
    rows = {r.parameter: r for r in summarize(draws)}
    psi = rows["psi"]
    assert psi.mean == psi.q025 == psi.q975 == 0.0


def test_summarize_empty_archive():
    draws = pair2_archive([])
    with pytest.raises(ValueError, match="archive holds no draws"):
        summarize(draws)


def test_write_summary_round_trip(tmp_path):
    draws = pair2_archive([[0.25, -0.75], [1.5, 0.5]])
    rows = summarize(draws)
    path = tmp_path / "summary.csv"
    write_summary(rows, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "parameter,mean,q025,q25,q75,q975"
    body = {ln.split(",")[0]: ln.split(",") for ln in lines[1:]}
    target = next(r for r in rows if r.parameter == "alpha.V01.P01")
    assert float(body["alpha.V01.P01"][1]) == target.mean


def test_performer_effects_hand_means():
    deltas = [np.array([[1.0], [10.0]]), np.array([[3.0], [30.0]])]
    draws = labeled_archive([[0, 1], [0, 1]], k=2, deltas=deltas)
    rows = performer_effects(draws)
    assert [(r.cluster, r.performer) for r in rows] == [(1, "P01"), (2, "P01")]
    assert rows[0].mean == 2.0
    assert rows[1].mean == 20.0
    assert rows[0].q025 == 1.0 and rows[0].q975 == 3.0


def test_write_performer_effects_header(tmp_path):
    draws = labeled_archive([[0, 1]] * 2, k=2)
    path = tmp_path / "effects.csv"
    write_performer_effects(performer_effects(draws), path)
    assert path.read_text().splitlines()[0] == "k,performer,mean,q025,q25,q75,q975"


# ---------------------------------------------------------------------------
# model selection and label agreement


def test_select_model_prefers_smallest_dic():
    assert select_model({3: 36868.0, 4: 36832.0, 5: 36844.0}) == 4
    assert select_model([(3, 36868.0), (4, 36832.0), (5, 36844.0)]) == 4


def test_select_model_tie_goes_to_smaller_k():
    assert select_model({2: 10.0, 1: 10.0, 3: 11.0}) == 1


def test_select_model_accepts_dic_results():
    results = {
        1: dic_components([12.0, 14.0], 12.0),
        2: dic_components([8.0, 10.0], 9.0),
    }
    assert select_model(results) == 2


def test_select_model_empty():
    with pytest.raises(ValueError, match="no models to select from"):
        select_model({})


def test_best_label_agreement():
    assert best_label_agreement([0, 1, 0, 1], [0, 1, 0, 1]) == 1.0
    assert best_label_agreement([0, 1, 0, 1], [1, 0, 1, 0]) == 1.0
    assert best_label_agreement([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75
    with pytest.raises(ValueError, match="equally long"):
        best_label_agreement([0, 1], [0, 1, 1])
    with pytest.raises(ValueError, match="equally long"):
        best_label_agreement([], [])
