"""Synthetic benchmark generator: split structure, nuisances, round-trips."""

import numpy as np
import pytest

from gcldr.data import (
    NuisanceSpec,
    SplitSpec,
    check_split_integrity,
    diagonal_spec,
    generate,
    load_csv,
    mobile_spec,
    save_csv,
    split_validation,
)
from gcldr.exceptions import ConfigError


def small_dataset(seed=0, per_combo=10):
    spec = diagonal_spec(2, 3)
    return spec, generate(spec, NuisanceSpec(), d=12, per_combo=per_combo, seed=seed)


def test_diagonal_spec_structure():
    spec = diagonal_spec(3, 2)
    assert spec.n_domains == 3 and spec.n_classes == 6
    for s, row in enumerate(spec.assignment):
        assert row[s] == "train"
        assert all(entry == "test" for m, entry in enumerate(row) if m != s)


def test_mobile_spec_is_valid():
    spec = mobile_spec()
    assert spec.n_domains == 2 and spec.n_classes == 29
    for row in spec.assignment:
        assert row.count("train") == 1
    # two subject groups exist under a single device type only
    assert sum("absent" in row for row in spec.assignment) == 2
    assert any("test" in row for row in spec.assignment)


def test_mobile_layout_produces_absent_combo_gaps():
    spec = mobile_spec()
    ds = generate(spec, NuisanceSpec(), d=8, per_combo=3, seed=0)
    combos = set()
    for role in ("train", "test"):
        combos |= set(zip(ds.rows(role)[1], ds.domains(role)))
    for cls in range(12, 15):
        assert (cls, 0) not in combos  # first device type has no such rows
    for cls in range(15, 29):
        assert (cls, 1) not in combos  # second device type has no such rows


def test_spec_validation_rejects_bad_layouts():
    with pytest.raises(ConfigError):
        SplitSpec([[0], [0]], [["train"], ["train"]])  # overlapping class sets
    with pytest.raises(ConfigError):
        SplitSpec([[0]], [["test", "test"]])  # no train cell
    with pytest.raises(ConfigError):
        SplitSpec([[0]], [["train", "absent"]])  # no test cell


def test_train_and_test_cover_disjoint_class_domain_combos():
    spec, ds = small_dataset()
    check_split_integrity(ds, spec)
    train_combos = set(zip(ds.rows("train")[1], ds.domains("train")))
    test_combos = set(zip(ds.rows("test")[1], ds.domains("test")))
    assert train_combos and test_combos
    assert train_combos & test_combos == set()
    # every class appears on both sides, always under different domains
    assert {c for c, _ in train_combos} == {c for c, _ in test_combos}


def test_per_combo_row_counts():
    spec, ds = small_dataset(per_combo=7)
    y_tr, dom_tr = ds.rows("train")[1], ds.domains("train")
    combos, counts = np.unique(list(zip(y_tr, dom_tr)), axis=0, return_counts=True)
    assert np.all(counts == 7)


def test_generation_is_deterministic_per_seed():
    _, a = small_dataset(seed=3)
    _, b = small_dataset(seed=3)
    _, c = small_dataset(seed=4)
    np.testing.assert_array_equal(a.X, b.X)
    assert not np.array_equal(a.X, c.X)


def test_nuisance_separation_scales_with_ratio():
    spec = diagonal_spec(2, 2)
    near = generate(spec, NuisanceSpec(ratio=0.1), d=10, per_combo=30, seed=0,
                    noise_sigma=0.01)
    far = generate(spec, NuisanceSpec(ratio=5.0), d=10, per_combo=30, seed=0,
                   noise_sigma=0.01)

    def domain_gap(ds):
        X, dom = ds.rows("train")[0], ds.domains("train")
        means = [X[dom == m].mean(axis=0) for m in np.unique(dom)]
        return np.linalg.norm(means[0] - means[1])

    assert domain_gap(far) > 5 * domain_gap(near)


def test_csv_round_trip(tmp_path):
    spec, ds = small_dataset()
    path = str(tmp_path / "ds.csv")
    save_csv(ds, path)
    loaded = load_csv(path)
    np.testing.assert_allclose(loaded.X, ds.X, atol=1e-12)
    for role in ("train", "test"):
        np.testing.assert_array_equal(loaded.rows(role)[1], ds.rows(role)[1])


def test_split_validation_partitions_rows():
    _, ds = small_dataset()
    X, y = ds.rows("test")
    (Xv, yv), (Xt, yt) = split_validation(X, y, fraction=0.25, seed=0)
    assert Xv.shape[0] + Xt.shape[0] == X.shape[0]
    assert abs(Xv.shape[0] - round(0.25 * X.shape[0])) <= 1


def test_generate_rejects_degenerate_sizes():
    spec = diagonal_spec(2, 2)
    with pytest.raises(ConfigError):
        generate(spec, NuisanceSpec(), d=0, per_combo=5)
    with pytest.raises(ConfigError):
        generate(spec, NuisanceSpec(), d=5, per_combo=0)
