import csv
import io
import json
import tempfile
from pathlib import Path
from unittest.mock import patch

from django.test import SimpleTestCase

from acquisition.experiment_harness import (
    REPORT_COLUMNS,
    EpisodeConfig,
    EpisodeReport,
    ExperimentError,
    aggregate,
    compare_policies,
    report_csv,
    report_document,
    run_baseline,
    run_episode,
    write_episode,
)
from acquisition.object_classifier import AccuracyReport, ObjectClassifier, TrainingConfig
from acquisition.oracle_answerer import OracleConfig
from acquisition.question_realizer import NoiseParams
from acquisition.tests.fixtures import small_world
from acquisition.world_generator import train_knowledge

QUICK_FINE_TUNE = TrainingConfig(epochs=2, learning_rate=0.01, negatives=5)
NOISE_FREE = EpisodeConfig(noise=NoiseParams.none(), oracle=OracleConfig(head_error_rate=0.0),
                           fine_tune=QUICK_FINE_TUNE)


class HarnessTestCase(SimpleTestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.world = small_world()
        cls.train_kb = train_knowledge(cls.world)
        cls.classifier, _ = ObjectClassifier.train(
            cls.world.split_objects("train"), cls.train_kb, cls.world.concepts, TrainingConfig(epochs=5, seed=1)
        )
        cls.query = cls.world.split_objects("query")

    def fresh_classifier(self):
        return ObjectClassifier(self.classifier.projection.copy(), self.world.concepts)


class BaselineTest(HarnessTestCase):
    def test_novel_heads_are_unreachable(self):
        report = run_baseline(self.world, self.classifier)
        self.assertEqual(report.policy, "baseline")
        self.assertIn(report.zero_shot.novel, (0.0, None))
        self.assertIsNone(report.fine_tune)
        self.assertEqual(report.label, "CLIP-Ret")

    def test_untrained_projection_warns(self):
        from acquisition.embedding_space import Projection

        untrained = ObjectClassifier(Projection.identity(self.world.config.d), self.world.concepts)
        with self.assertLogs("acquisition.experiment_harness", level="WARNING"):
            run_baseline(self.world, untrained)


class EpisodeTest(HarnessTestCase):
    def test_noise_free_questions_are_all_valid(self):
        for policy in ("ours", "all-conf", "all-exp"):
            result = run_episode(self.world, self.classifier, policy, seed=7, config=NOISE_FREE)
            self.assertEqual(result.report.n_valid_q, len(self.query), policy)
            self.assertEqual({record["outcome"] for record in result.audit}, {"answer"})

    def test_confirmation_never_adds_new_pairs(self):
        result = run_episode(self.world, self.classifier, "all-conf", seed=7, config=NOISE_FREE)
        self.assertTrue(set(result.knowledge.pairs()) <= set(self.train_kb.pairs()))

    def test_knowledge_only_grows_from_the_oracle(self):
        result = run_episode(self.world, self.classifier, "all-exp", seed=7, config=NOISE_FREE)
        self.assertTrue(result.knowledge.entries >= self.train_kb.entries)
        self.assertTrue(result.knowledge.entries <= self.world.oracle_kb.entries)
        self.assertEqual(result.report.n_knowledge, len(result.knowledge) - len(self.train_kb))
        self.assertGreater(result.report.n_knowledge, 0)

    def test_same_inputs_give_identical_results(self):
        first = run_episode(self.world, self.classifier, "random", seed=13, config=EpisodeConfig(fine_tune=QUICK_FINE_TUNE))
        second = run_episode(self.world, self.classifier, "random", seed=13, config=EpisodeConfig(fine_tune=QUICK_FINE_TUNE))
        self.assertEqual(first.report.to_row(), second.report.to_row())
        self.assertEqual(first.audit, second.audit)
        self.assertEqual(first.knowledge.dumps(), second.knowledge.dumps())

    def test_episode_leaves_the_classifier_untouched(self):
        classifier = self.fresh_classifier()
        before = classifier.projection.copy()
        result = run_episode(self.world, classifier, "ours", seed=7, config=NOISE_FREE)
        self.assertTrue(classifier.projection.same_as(before))
        self.assertIsNot(result.classifier, classifier)

    def test_accuracy_partitions_are_consistent(self):
        report = run_episode(self.world, self.classifier, "ours", seed=7, config=NOISE_FREE).report
        for accuracy in (report.zero_shot, report.fine_tune):
            parts = [(n, a) for n, a in ((accuracy.n_known, accuracy.known), (accuracy.n_novel, accuracy.novel)) if n]
            self.assertAlmostEqual(accuracy.overall, sum(n * a for n, a in parts) / accuracy.size)

    def test_changed_projection_aborts_before_evaluation(self):
        classifier = self.fresh_classifier()
        with patch.object(classifier.projection, "same_as", return_value=False):
            with self.assertRaisesMessage(ExperimentError, "projection changed"):
                run_episode(self.world, classifier, "ours", seed=7, config=NOISE_FREE)

    @patch("acquisition.experiment_harness.capture_exception")
    @patch("acquisition.experiment_harness.answer", side_effect=RuntimeError("boom"))
    def test_failing_question_counts_as_rejection(self, mock_answer, mock_capture):
        with self.assertLogs("acquisition.experiment_harness", level="WARNING") as logs:
            result = run_episode(self.world, self.classifier, "ours", seed=7, config=NOISE_FREE)
        self.assertEqual(result.report.n_valid_q, 0)
        self.assertEqual(mock_capture.call_count, len(self.query))
        self.assertEqual({record["reason"] for record in result.audit}, {"error: RuntimeError"})
        self.assertEqual(result.report.fine_tune, result.report.zero_shot)
        self.assertTrue(any("acquired no knowledge" in line for line in logs.output))

    def test_multiple_rounds(self):
        config = EpisodeConfig(noise=NoiseParams.none(), oracle=OracleConfig(head_error_rate=0.0),
                               fine_tune=QUICK_FINE_TUNE, rounds=2)
        result = run_episode(self.world, self.classifier, "all-exp", seed=7, config=config)
        ids = [record["question"]["id"] for record in result.audit]
        self.assertEqual(len(ids), 2 * len(self.query))
        self.assertEqual(len(set(ids)), len(ids))

    def test_replay_fine_tune(self):
        config = EpisodeConfig.from_dict({**NOISE_FREE.to_dict(), "replay": True})
        result = run_episode(self.world, self.classifier, "all-exp", seed=7, config=config)
        self.assertGreater(len(result.acquired), 0)
        self.assertIsNotNone(result.report.fine_tune)


class CompareTest(HarnessTestCase):
    def test_needs_three_seeds(self):
        with self.assertRaisesMessage(ExperimentError, "at least 3 seeds"):
            compare_policies(self.world, self.classifier, [7, 13])

    def test_rows(self):
        rows = compare_policies(self.world, self.classifier, [7, 13, 29], EpisodeConfig(fine_tune=QUICK_FINE_TUNE))
        self.assertEqual([row.policy for row in rows], ["baseline", "all-conf", "all-exp", "random", "ours"])
        self.assertEqual(rows[3].seeds, (7, 13, 29))
        self.assertEqual(rows[4].seeds, (7,))
        self.assertIsNotNone(rows[3].std["overall_zs"])
        self.assertEqual(rows[1].std, {})


class AggregateTest(SimpleTestCase):
    def report(self, overall, seed):
        accuracy = AccuracyReport(overall, overall, 0.0, 3, 1)
        return EpisodeReport("random", accuracy, accuracy, n_valid_q=10, n_knowledge=4, seeds=(seed,))

    def test_mean_and_sample_std(self):
        row = aggregate([self.report(0.2, 1), self.report(0.4, 2), self.report(0.6, 3)], "random")
        self.assertAlmostEqual(row.zero_shot.overall, 0.4)
        self.assertAlmostEqual(row.std["overall_zs"], 0.2)
        self.assertEqual(row.std["n_valid_q"], 0.0)
        self.assertEqual(row.seeds, (1, 2, 3))

    def test_nothing_to_aggregate(self):
        with self.assertRaises(ExperimentError):
            aggregate([], "random")


class ArtefactTest(SimpleTestCase):
    def setUp(self):
        accuracy = AccuracyReport(0.5, 0.75, 0.0, 4, 2)
        self.baseline = EpisodeReport("baseline", accuracy)
        self.ours = EpisodeReport("ours", accuracy, AccuracyReport(0.625, 0.75, 0.25, 4, 2), 12, 9, (7,))

    def test_csv(self):
        rows = list(csv.reader(io.StringIO(report_csv([self.baseline, self.ours]))))
        self.assertEqual(tuple(rows[0]), REPORT_COLUMNS)
        baseline = dict(zip(REPORT_COLUMNS, rows[1]))
        self.assertEqual(baseline["label"], "CLIP-Ret")
        self.assertEqual(baseline["overall_zs"], "0.500000")
        self.assertEqual(baseline["overall_ft"], "")
        ours = dict(zip(REPORT_COLUMNS, rows[2]))
        self.assertEqual((ours["label"], ours["novel_ft"], ours["n_valid_q"], ours["seeds"]),
                         ("Ours", "0.250000", "12", "7"))

    def test_json_document(self):
        document = json.loads(report_document([self.baseline, self.ours]))
        self.assertEqual((document["format"], document["version"]), ("curio-report", 1))
        self.assertEqual(document["rows"][1]["overall_ft"], 0.625)
        self.assertIsNone(document["rows"][0]["overall_ft"])

    def test_write_episode(self):
        world = small_world()
        result = run_episode(world, ObjectClassifier.train(
            world.split_objects("train"), train_knowledge(world), world.concepts, TrainingConfig(epochs=1))[0],
            "all-exp", seed=7, config=NOISE_FREE)
        with tempfile.TemporaryDirectory() as tmp:
            paths = write_episode(result, tmp, baseline=self.baseline)
            self.assertEqual({path.name for path in paths.values()},
                             {"report.csv", "report.json", "audit.jsonl", "knowledge.tsv"})
            lines = Path(tmp, "audit.jsonl").read_text(encoding="utf-8").splitlines()
            self.assertEqual(len(lines), len(result.audit))
            self.assertEqual(Path(tmp, "knowledge.tsv").read_text(encoding="utf-8"), result.knowledge.dumps())
            self.assertIn("CLIP-Ret", Path(tmp, "report.csv").read_text(encoding="utf-8").splitlines()[1])


class EpisodeConfigTest(SimpleTestCase):
    def test_nested_dict(self):
        config = EpisodeConfig.from_dict({"noise": {"p_exploration": 0.3}, "oracle": {"head_error_rate": 0.0},
                                          "rounds": 2})
        self.assertEqual(config.noise.p_exploration, 0.3)
        self.assertEqual(config.noise.p_confirmation, 0.05)
        self.assertEqual(config.rounds, 2)
        self.assertEqual(EpisodeConfig.from_dict(config.to_dict()), config)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            EpisodeConfig.from_dict({"budget": 3})
        with self.assertRaises(ValueError):
            EpisodeConfig(rounds=0)
