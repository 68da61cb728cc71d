import numpy as np
import pytest

from crossmodal.data import SynthConfig, build_trainer_data, gen_synthetic
from crossmodal.embeddings import ConseConfig
from crossmodal.errors import EmptySplit, InconsistentCandidates, UnknownTruth
from crossmodal.evaluation import (
    EvalReport,
    RankingResult,
    evaluate,
    evaluate_sentences,
    export_trajectory,
    flat_hit,
    mfr,
    rank_queries,
    ranks_from_similarities,
)
from crossmodal.nets import MappingStack
from crossmodal.numerics import SeededRng, cosine


def brute_force_rank(query, candidates, truth_idx):
    """Independent oracle: full sort with ties counted ahead of the truth."""
    sims = [cosine(query, c) for c in candidates]
    truth_sim = sims[truth_idx]
    return sum(1 for s in sims if s >= truth_sim)


class TestRankQueries:
    def test_unique_max_ranks_first(self):
        queries = np.array([[1.0, 0.0]])
        candidates = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
        out = rank_queries(["q"], queries, ["a", "b", "c"], candidates, {"q": "a"})
        assert out[0].first_relevant_rank == 1
        assert out[0].candidate_count == 3

    def test_full_tie_ranks_last(self):
        queries = np.array([[1.0, 0.0]])
        candidates = np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0]])  # all cosine 1
        out = rank_queries(["q"], queries, ["a", "b", "c"], candidates, {"q": "b"})
        assert out[0].first_relevant_rank == 3

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for trial in range(30):
            n_q, n_c, d = 8, 12, 5
            queries = rng.normal(size=(n_q, d))
            candidates = rng.normal(size=(n_c, d))
            truth = {f"q{i}": f"c{rng.integers(n_c)}" for i in range(n_q)}
            out = rank_queries(
                [f"q{i}" for i in range(n_q)], queries,
                [f"c{j}" for j in range(n_c)], candidates, truth,
            )
            for i, res in enumerate(out):
                want = brute_force_rank(queries[i], candidates, int(truth[f"q{i}"][1:]))
                assert res.first_relevant_rank == want

    def test_unknown_truth(self):
        with pytest.raises(UnknownTruth):
            rank_queries(["q"], np.eye(2)[:1], ["a"], np.eye(2)[:1], {"q": "zzz"})

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        sims = rng.normal(size=(6, 9))
        truth_idx = rng.integers(0, 9, size=6)
        base = ranks_from_similarities(sims, truth_idx)
        for transform in (np.tanh, lambda s: 3 * s + 11, lambda s: s**3):
            np.testing.assert_array_equal(
                ranks_from_similarities(transform(sims), truth_idx), base
            )


class TestFlatHit:
    def results(self, frs, k=10):
        return [RankingResult(f"q{i}", fr, k) for i, fr in enumerate(frs)]

    def test_all_first(self):
        assert flat_hit(self.results([1, 1, 1]), 1) == 100.0

    def test_hand_counts(self):
        res = self.results([1, 3, 7])
        assert flat_hit(res, 2) == pytest.approx(100 / 3)
        assert flat_hit(res, 5) == pytest.approx(200 / 3)

    def test_k_at_least_candidate_count(self):
        res = self.results([4, 9, 10], k=10)
        assert flat_hit(res, 10) == 100.0

    def test_monotone_in_k(self):
        rng = np.random.default_rng(2)
        res = self.results(rng.integers(1, 21, size=50).tolist(), k=20)
        values = [flat_hit(res, k) for k in range(1, 21)]
        assert all(a <= b for a, b in zip(values, values[1:]))

    def test_empty(self):
        with pytest.raises(EmptySplit):
            flat_hit([], 1)


class TestMfr:
    def test_single_query(self):
        assert mfr([RankingResult("q", 1, 10)]) == pytest.approx(10.0)

    def test_worst_case(self):
        res = [RankingResult(f"q{i}", 7, 7) for i in range(4)]
        assert mfr(res) == pytest.approx(100.0)

    def test_uniform_random_monte_carlo(self):
        # analytic mean for a random ranker: 50 * (K + 1) / K = 51 at K=50
        rng = np.random.default_rng(3)
        res = [RankingResult(f"q{i}", int(rng.integers(1, 51)), 50) for i in range(1000)]
        assert 49.0 < mfr(res) < 53.0

    def test_mixed_candidate_counts(self):
        with pytest.raises(InconsistentCandidates):
            mfr([RankingResult("a", 1, 5), RankingResult("b", 1, 6)])

    def test_exact50_rescaling(self):
        # uniform ranks over K=5: plain mean rank 3 -> 60.0; exact50 -> 50.0
        res = [RankingResult(f"q{i}", r, 5) for i, r in enumerate([1, 2, 3, 4, 5])]
        assert mfr(res) == pytest.approx(60.0)
        assert mfr(res, exact50=True) == pytest.approx(50.0)

    def test_perfect_predictor(self):
        res = [RankingResult(f"q{i}", 1, 50) for i in range(10)]
        assert mfr(res) == pytest.approx(2.0)
        assert flat_hit(res, 1) == 100.0


@pytest.fixture(scope="module")
def bench(tmp_path_factory):
    root = tmp_path_factory.mktemp("evalbench")
    cfg = SynthConfig(n_seen=8, n_unseen=8, d_text=8, d_vis=8, images_per_class=6,
                      probe_temperature=2.0, split_separation=0.8, seed=21)
    ds = gen_synthetic(cfg, root)
    return ds, ConseConfig(top_k=4)


class TestEvaluateProtocols:
    def test_gzsl_widens_candidates(self, bench):
        ds, conse = bench
        zsl = evaluate(MappingStack("conse"), MappingStack("text"), ds, conse, "zsl")
        gzsl = evaluate(MappingStack("conse"), MappingStack("text"), ds, conse, "gzsl")
        assert gzsl.candidate_count == zsl.candidate_count + len(ds.seen_labels)
        assert zsl.query_count == gzsl.query_count

    def test_report_fields(self, bench):
        ds, conse = bench
        rep = evaluate(MappingStack("conse"), MappingStack("text"), ds, conse, "zsl")
        assert set(rep.fh) == {1, 2, 5, 10, 20}
        assert 0 <= rep.mfr <= 100
        doc = rep.to_dict()
        assert doc["schema_version"] == 1
        assert doc["fh"]["1"] == rep.fh[1]

    def test_split_filtering(self, bench, tmp_path):
        ds, conse = bench
        # tag a subset of unseen classes and restrict evaluation to them
        from dataclasses import replace

        tagged = [
            replace(lab, tags=("2hop",)) if i < 4 else lab
            for i, lab in enumerate(ds.unseen_labels)
        ]
        from crossmodal.data import Dataset

        ds2 = Dataset(
            root=ds.root, table=ds.table, seen_labels=ds.seen_labels,
            unseen_labels=tagged, probes=ds.probes, seen_alignment=ds.seen_alignment,
            eval_keys=ds.eval_keys, sentences=None, prototypes=ds.prototypes,
        )
        rep = evaluate(MappingStack("conse"), MappingStack("text"), ds2, conse, "zsl", split="2hop")
        assert rep.candidate_count == 4
        with pytest.raises(EmptySplit):
            evaluate(MappingStack("conse"), MappingStack("text"), ds2, conse, "zsl", split="9hop")


class TestTrajectoryExport:
    def test_frozen_side_stays_put(self, bench):
        ds, conse = bench
        data = build_trainer_data(ds, conse)
        from crossmodal.trainer import TrainConfig, train_full

        cfg = TrainConfig(seed=0, lr_mapper=3e-3, lr_disc=1e-3, lr_mapper_transductive=1e-3,
                          epochs_supervised=4, epochs_transductive=2, batch_size=16,
                          max_steps=2, improvement_threshold=-1e9)
        result = train_full(cfg, data)
        rows = export_trajectory(result.step_snapshots, ds, conse, n_classes=4,
                                 rng=SeededRng(5))
        by = {}
        for r in rows:
            by.setdefault((r["step"], r["kind"], r["class_id"]), (r["x"], r["y"]))
        kinds = ["init"] + [rec.kind for rec in result.history]
        classes = sorted({r["class_id"] for r in rows})
        for step in range(1, len(kinds)):
            for cid in classes:
                lbl_delta = np.hypot(
                    by[(step, "label", cid)][0] - by[(step - 1, "label", cid)][0],
                    by[(step, "label", cid)][1] - by[(step - 1, "label", cid)][1],
                )
                cen_delta = np.hypot(
                    by[(step, "centroid", cid)][0] - by[(step - 1, "centroid", cid)][0],
                    by[(step, "centroid", cid)][1] - by[(step - 1, "centroid", cid)][1],
                )
                if kinds[step] == "sup":
                    assert lbl_delta < 1e-9  # labels frozen on supervised steps
                    assert cen_delta > 1e-9
                else:
                    assert cen_delta < 1e-9  # centroids frozen on transductive steps

    def test_step_zero_self_consistency(self, bench):
        ds, conse = bench
        snaps = [(MappingStack("conse"), MappingStack("text"))] * 2
        rows = export_trajectory(snaps, ds, conse, n_classes=3, rng=SeededRng(1))
        by_step = {}
        for r in rows:
            by_step.setdefault(r["step"], []).append((r["kind"], r["class_id"], r["x"], r["y"]))
        assert by_step[0] == by_step[1]

    def test_needs_two_snapshots(self, bench):
        ds, conse = bench
        with pytest.raises(EmptySplit):
            export_trajectory([(MappingStack("conse"), MappingStack("text"))], ds, conse)


class TestSentenceEvaluation:
    def test_directions(self, tmp_path):
        from crossmodal.data import SentenceSynthConfig, gen_synthetic_sentences

        ds = gen_synthetic_sentences(
            SentenceSynthConfig(vocab_size=20, n_basis=8, n_images=25, seed=3,
                                probe_temperature=2.0),
            tmp_path / "s",
        )
        conse = ConseConfig(top_k=4)
        t2i = evaluate_sentences(MappingStack("conse"), MappingStack("text"), ds, conse,
                                 "text_to_image")
        i2t = evaluate_sentences(MappingStack("conse"), MappingStack("text"), ds, conse,
                                 "image_to_text")
        assert t2i.split == "text_to_image"
        assert t2i.candidate_count == 25
        assert i2t.candidate_count == 25
        assert t2i.query_count == 25
