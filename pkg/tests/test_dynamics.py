import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import fluence as fl
from fluence.errors import ParseError, ValidationError

from conftest import make_run


def write_lines(path, lines):
    path.write_text("".join(json.dumps(obj) + "\n" for obj in lines), encoding="utf-8")


MINIMAL = {
    "run_id": "r1",
    "tags": {},
    "steps": [{"step": 1, "batch": ["a"]}],
    "trajectories": [{"test_id": "z", "metric": "loss", "values": [0.5]}],
}


class TestLoadRuns:
    def test_minimal_one_step_run(self, tmp_path):
        f = tmp_path / "one.jsonl"
        write_lines(f, [MINIMAL])
        runs = fl.load_runs(f)
        assert len(runs) == 1
        assert runs[0].num_steps == 1
        assert runs[0].trajectory("z", "loss").values[0] == 0.5

    def test_length_mismatch_rejected(self, tmp_path):
        bad = dict(MINIMAL)
        bad["steps"] = [{"step": i, "batch": ["a"]} for i in range(1, 5)]
        bad["trajectories"] = [{"test_id": "z", "metric": "loss", "values": [1, 2, 3, 4, 5]}]
        f = tmp_path / "bad.jsonl"
        write_lines(f, [bad])
        with pytest.raises(ValidationError, match="length mismatch"):
            fl.load_runs(f)

    def test_malformed_json(self, tmp_path):
        f = tmp_path / "bad.jsonl"
        f.write_text("{not json\n", encoding="utf-8")
        with pytest.raises(ParseError, match="malformed JSON"):
            fl.load_runs(f)

    def test_duplicate_run_id(self, tmp_path):
        f = tmp_path / "dup.jsonl"
        write_lines(f, [MINIMAL, MINIMAL])
        with pytest.raises(ValidationError, match="duplicate run_id"):
            fl.load_runs(f)

    def test_wrong_field_type(self, tmp_path):
        bad = dict(MINIMAL)
        bad["run_id"] = 7
        f = tmp_path / "bad.jsonl"
        write_lines(f, [bad])
        with pytest.raises(ParseError, match="run_id"):
            fl.load_runs(f)

    def test_noncontiguous_steps(self, tmp_path):
        bad = dict(MINIMAL)
        bad["steps"] = [{"step": 2, "batch": ["a"]}]
        f = tmp_path / "bad.jsonl"
        write_lines(f, [bad])
        with pytest.raises(ValidationError, match="contiguous"):
            fl.load_runs(f)

    def test_metric_range_enforced_for_truth(self, tmp_path):
        bad = dict(MINIMAL)
        bad["trajectories"] = [{"test_id": "z", "metric": "loss", "values": [-0.5]}]
        f = tmp_path / "bad.jsonl"
        write_lines(f, [bad])
        with pytest.raises(ValidationError, match="below metric minimum"):
            fl.load_runs(f)
        # predictions may overshoot bounded metrics
        runs = fl.load_runs(f, validate_ranges=False)
        assert runs[0].trajectory("z", "loss").values[0] == -0.5

    def test_role_conflict_rejected(self, tmp_path):
        bad = dict(MINIMAL)
        bad["trajectories"] = [{"test_id": "a", "metric": "loss", "values": [0.5]}]
        f = tmp_path / "bad.jsonl"
        write_lines(f, [bad])
        with pytest.raises(ValidationError, match="roles"):
            fl.load_runs(f)


class TestRoundTrip:
    def test_generated_runs_round_trip(self, small_planted, tmp_path):
        _, runs, _, _ = small_planted
        out = tmp_path / "runs"
        paths = fl.save_runs(runs, out)
        assert len(paths) == len(runs)
        loaded = fl.load_runs(out)
        assert loaded.run_ids() == runs.run_ids()
        for a, b in zip(runs, loaded):
            assert a.curriculum.batches == b.curriculum.batches
            assert a.tags == b.tags
            assert set(a.trajectories) == set(b.trajectories)
            for key, t in a.trajectories.items():
                assert np.array_equal(t.values, b.trajectories[key].values)

    def test_single_file_round_trip_is_byte_stable(self, small_planted, tmp_path):
        _, runs, _, _ = small_planted
        f1, f2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        fl.save_runs(runs, f1)
        fl.save_runs(fl.load_runs(f1), f2)
        assert f1.read_bytes() == f2.read_bytes()

    def test_full_geometry_round_trip(self, tmp_path):
        gen = fl.PlantedGenerator()  # pool 200, per-run 128, T=96, 10 tests
        runs, table, _ = fl.generate_planted_runs(gen, 32, seed=42)
        out = tmp_path / "runs"
        fl.save_runs(runs, out)
        loaded = fl.load_runs(out)
        assert len(loaded) == 32
        assert all(r.num_steps == 96 for r in loaded)
        for a, b in zip(runs, loaded):
            assert a.curriculum.batches == b.curriculum.batches
            for key, t in a.trajectories.items():
                assert np.array_equal(t.values, b.trajectories[key].values)
        emb = tmp_path / "emb.jsonl"
        fl.save_embeddings(table, emb)
        reloaded = fl.load_embeddings(emb)
        assert len(reloaded) == 210
        for ex in table.ids():
            assert np.array_equal(reloaded.get(ex), table.get(ex))

    def test_embeddings_round_trip(self, small_planted, tmp_path):
        _, _, table, _ = small_planted
        f1, f2 = tmp_path / "e1.jsonl", tmp_path / "e2.jsonl"
        fl.save_embeddings(table, f1)
        loaded = fl.load_embeddings(f1)
        assert loaded.ids() == table.ids()
        for ex in table.ids():
            assert np.array_equal(loaded.get(ex), table.get(ex))
        fl.save_embeddings(loaded, f2)
        assert f1.read_bytes() == f2.read_bytes()


class TestEmbeddings:
    def test_three_four_five_normalization(self, tmp_path):
        f = tmp_path / "e.jsonl"
        f.write_text('{"dim": 2}\n{"id": "a", "vec": [3, 4]}\n', encoding="utf-8")
        table = fl.load_embeddings(f)
        assert np.array_equal(table.get("a"), np.array([0.6, 0.8]))

    def test_zero_norm_rejected(self, tmp_path):
        f = tmp_path / "e.jsonl"
        f.write_text('{"dim": 2}\n{"id": "a", "vec": [0, 0]}\n', encoding="utf-8")
        with pytest.raises(ValidationError, match="zero-norm"):
            fl.load_embeddings(f)

    def test_ragged_vector_rejected(self, tmp_path):
        f = tmp_path / "e.jsonl"
        f.write_text('{"dim": 2}\n{"id": "a", "vec": [1, 2, 3]}\n', encoding="utf-8")
        with pytest.raises(ValidationError, match="ragged"):
            fl.load_embeddings(f)

    def test_missing_header(self, tmp_path):
        f = tmp_path / "e.jsonl"
        f.write_text('{"id": "a", "vec": [1, 2]}\n', encoding="utf-8")
        with pytest.raises(ParseError, match="header"):
            fl.load_embeddings(f)

    def test_missing_id_lookup(self, small_planted):
        _, _, table, _ = small_planted
        with pytest.raises(fl.MissingEmbeddingError, match="nope"):
            table.get("nope")


class TestSplitRuns:
    def test_paper_geometry_split(self, small_planted):
        gen, _, table, _ = small_planted
        runs, _, _ = fl.generate_planted_runs(gen, 32, seed=42)
        tr, va, te = fl.split_runs(runs, 25, 2, 5, seed=42)
        assert (len(tr), len(va), len(te)) == (25, 2, 5)
        ids = set(tr.run_ids()) | set(va.run_ids()) | set(te.run_ids())
        assert len(ids) == 32  # disjoint

    def test_all_in_train(self, small_planted):
        _, runs, _, _ = small_planted
        tr, va, te = fl.split_runs(runs[:3], 3, 0, 0, seed=0)
        assert (len(tr), len(va), len(te)) == (3, 0, 0)

    def test_insufficient_runs(self, small_planted):
        _, runs, _, _ = small_planted
        with pytest.raises(ValidationError, match="insufficient runs"):
            fl.split_runs(runs[:2], 2, 2, 2, seed=0)

    def test_seed_determinism(self, small_planted):
        _, runs, _, _ = small_planted
        a = fl.split_runs(runs, 4, 2, 2, seed=9)
        b = fl.split_runs(runs, 4, 2, 2, seed=9)
        c = fl.split_runs(runs, 4, 2, 2, seed=10)
        assert [x.run_ids() for x in a] == [x.run_ids() for x in b]
        assert [x.run_ids() for x in a] != [x.run_ids() for x in c]


class TestSubsample:
    def test_identity_at_one(self, small_planted):
        _, runs, _, _ = small_planted
        assert fl.subsample_run(runs[0], 1) is runs[0]

    def test_full_collapse(self):
        run = make_run({"z": [1, 2, 3, 4]}, [["a"], ["b"], ["a"], ["c"]])
        sub = fl.subsample_run(run, 4)
        assert sub.num_steps == 1
        assert sub.curriculum.batch(1) == ("a", "b", "c")
        assert sub.trajectory("z", "loss").values.tolist() == [4.0]

    def test_interval_exceeds_length(self):
        run = make_run({"z": [1, 2]}, [["a"], ["b"]])
        with pytest.raises(ValidationError, match="exceeds"):
            fl.subsample_run(run, 3)

    def test_retained_values_match(self, small_planted):
        _, runs, _, _ = small_planted
        run = runs[0]
        sub = fl.subsample_run(run, 3)
        assert sub.num_steps == run.num_steps // 3
        for tid in run.test_ids("loss"):
            orig = run.trajectory(tid, "loss").values
            kept = sub.trajectory(tid, "loss").values
            assert np.array_equal(kept, orig[2::3][: len(kept)])

    @given(k=st.integers(min_value=1, max_value=8), seed=st.integers(0, 50))
    @settings(max_examples=25, deadline=None)
    def test_consumed_id_sets_preserved(self, k, seed):
        rng = np.random.default_rng(seed)
        T = int(rng.integers(k, 17))
        pool = [f"t{i}" for i in range(6)]
        batches = [list(rng.choice(pool, size=rng.integers(1, 4), replace=False)) for _ in range(T)]
        run = make_run({"z": list(rng.uniform(0.1, 2.0, size=T))}, batches)
        sub = fl.subsample_run(run, k)
        for i in range(sub.num_steps):
            t_hi = (i + 1) * k
            window = {ex for b in batches[t_hi - k : t_hi] for ex in b}
            assert set(sub.curriculum.batch(i + 1)) == window
