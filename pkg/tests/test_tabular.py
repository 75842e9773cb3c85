import numpy as np
import pytest

from neat.errors import (
    DuplicateColumnName,
    EmptyAfterCleaning,
    MissingTarget,
    TooFewRows,
)
from neat.tabular import load_csv, sample_indices, subsample_rows, train_test_folds

from conftest import make_table


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


class TestLoadCsv:
    def test_holds_out_target(self, tmp_path):
        path = write(tmp_path, "a,b,y\n1,2,0\n3,4,1\n5,6,0\n")
        table = load_csv(path, "y", "classification")
        assert table.n_rows == 3
        assert table.n_features == 2
        assert table.column_names == ["a", "b"]
        assert table.target.tolist() == [0.0, 1.0, 0.0]
        assert table.target_name == "y"
        assert table.dataset_id == "data"

    def test_drops_and_counts_bad_rows(self, tmp_path):
        path = write(tmp_path, "a,b,y\n1,2,0\n3,nan,1\n5,6,0\n7,8,1\nx,9,0\n")
        table = load_csv(path, "y", "classification")
        assert table.n_rows == 3
        assert table.dropped_rows == 2

    def test_missing_target(self, tmp_path):
        path = write(tmp_path, "a,b\n1,2\n3,4\n")
        with pytest.raises(MissingTarget):
            load_csv(path, "y", "regression")

    def test_duplicate_column(self, tmp_path):
        path = write(tmp_path, "a,a,y\n1,2,0\n3,4,1\n")
        with pytest.raises(DuplicateColumnName):
            load_csv(path, "y", "regression")

    def test_empty_file(self, tmp_path):
        with pytest.raises(EmptyAfterCleaning):
            load_csv(write(tmp_path, ""), "y", "regression")

    def test_all_rows_unusable(self, tmp_path):
        path = write(tmp_path, "a,y\nfoo,0\nbar,1\n")
        with pytest.raises(EmptyAfterCleaning):
            load_csv(path, "y", "regression")

    def test_no_feature_columns(self, tmp_path):
        path = write(tmp_path, "y\n1\n2\n")
        with pytest.raises(EmptyAfterCleaning):
            load_csv(path, "y", "regression")

    def test_zscore_population_stats(self, tmp_path):
        path = write(tmp_path, "a,c,y\n1,7,0\n2,7,0\n3,7,1\n6,7,1\n")
        table = load_csv(path, "y", "classification")
        col = table.values[:, 0]
        assert abs(col.mean()) < 1e-12
        assert abs(col.std() - 1.0) < 1e-12      # ddof=0
        # zero-variance column is centered only, never divided
        assert np.all(table.values[:, 1] == 0.0)
        assert table.raw_std[1] == 0.0

    def test_target_kept_raw(self, tmp_path):
        path = write(tmp_path, "a,y\n1,10\n2,20\n3,40\n")
        table = load_csv(path, "y", "regression")
        assert table.target.tolist() == [10.0, 20.0, 40.0]

    def test_load_is_idempotent(self, tmp_path):
        path = write(tmp_path, "a,b,y\n1.5,2.25,0\n3.125,4,1\n5,6,0\n")
        t1 = load_csv(path, "y", "regression")
        t2 = load_csv(path, "y", "regression")
        assert t1.values.tobytes() == t2.values.tobytes()
        assert t1.target.tobytes() == t2.target.tobytes()

    def test_quoted_names_with_commas(self, tmp_path):
        path = write(tmp_path, '"a,plus",b,y\n1,2,0\n3,4,1\n')
        table = load_csv(path, "y", "regression")
        assert table.column_names == ["a,plus", "b"]


class TestSampling:
    def test_small_n_keeps_everything(self, small_table):
        sample = subsample_rows(small_table, max_rows=100, seed=3)
        assert sample.indices.tolist() == list(range(40))

    def test_deterministic(self, small_table):
        a = subsample_rows(small_table, max_rows=10, seed=1)
        b = subsample_rows(small_table, max_rows=10, seed=1)
        assert a.indices.tolist() == b.indices.tolist()

    def test_sorted_distinct_in_range(self):
        idx = sample_indices(1000, 64, seed=9)
        assert len(idx) == 64
        assert len(set(idx.tolist())) == 64
        assert np.all(np.diff(idx) > 0)
        assert idx.min() >= 0 and idx.max() < 1000

    def test_seed_changes_sample(self):
        a = sample_indices(1000, 64, seed=1)
        b = sample_indices(1000, 64, seed=2)
        assert a.tolist() != b.tolist()


class TestFolds:
    def test_partition(self, small_table):
        folds = train_test_folds(small_table, folds=5, seed=0)
        assert len(folds) == 5
        all_test = np.concatenate([test for _, test in folds])
        assert sorted(all_test.tolist()) == list(range(40))
        for train, test in folds:
            assert len(test) == 8
            assert set(train.tolist()) | set(test.tolist()) == set(range(40))
            assert not set(train.tolist()) & set(test.tolist())

    def test_deterministic(self, small_table):
        a = train_test_folds(small_table, folds=5, seed=7)
        b = train_test_folds(small_table, folds=5, seed=7)
        for (tr1, te1), (tr2, te2) in zip(a, b):
            assert tr1.tolist() == tr2.tolist()
            assert te1.tolist() == te2.tolist()

    def test_too_few_rows(self):
        table = make_table(np.zeros((3, 2)))
        with pytest.raises(TooFewRows):
            train_test_folds(table, folds=5, seed=0)
