from unittest.mock import patch

import numpy as np
from django.test import SimpleTestCase

from acquisition.embedding_space import ConceptTable, Projection, TrainingBatch, loss_and_gradient
from acquisition.knowledge_store import KnowledgeSource, Triplet
from acquisition.object_classifier import (
    EmptyDataset,
    NoKnowledgeToScore,
    ObjectClassifier,
    TrainingConfig,
    UnresolvableKnowledge,
    loss_weights,
)
from acquisition.tests.fixtures import knowledge, make_object, small_world
from acquisition.world_generator import train_knowledge

E1, E2, E3 = [1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]


def fixed_classifier():
    concepts = ConceptTable.from_vectors({
        ("IsA", "mammal"): E1,
        ("UsedFor", "drinking"): E2,
        ("MadeOf", "wood"): E3,
    })
    return ObjectClassifier(Projection.identity(4), concepts)


class RecognitionTest(SimpleTestCase):
    def setUp(self):
        self.classifier = fixed_classifier()
        self.source = knowledge(("dog", "IsA", "mammal"), ("cup", "UsedFor", "drinking"))

    def test_singleton_source(self):
        predictions = self.classifier.score_all(make_object("o", "dog", E1), knowledge(("dog", "IsA", "mammal")))
        self.assertEqual(len(predictions), 1)
        self.assertEqual(predictions[0].rank, 1)

    def test_exact_match_ranks_first(self):
        predictions = self.classifier.score_all(make_object("o", "dog", E1), self.source)
        self.assertEqual((predictions[0].relation, predictions[0].tail), ("IsA", "mammal"))
        self.assertAlmostEqual(predictions[0].sim, 1.0)
        self.assertEqual([p.rank for p in predictions], [1, 2])

    def test_ranking_agrees_for_sim_and_confidence(self):
        obj = make_object("o", "dog", [0.9, 0.3, 0.1, 0])
        predictions = self.classifier.score_all(obj, knowledge(
            ("dog", "IsA", "mammal"), ("cup", "UsedFor", "drinking"), ("chair", "MadeOf", "wood")))
        self.assertEqual(predictions, sorted(predictions, key=lambda p: -p.conf))
        self.assertEqual(predictions, sorted(predictions, key=lambda p: -p.sim))

    def test_empty_source(self):
        with self.assertRaisesMessage(NoKnowledgeToScore, "no knowledge to score"):
            self.classifier.score_all(make_object("o", "dog", E1), KnowledgeSource())

    def test_predict_label_looks_up_head(self):
        prediction = self.classifier.predict_label(make_object("o", "dog", E1), knowledge(("dog", "IsA", "mammal")))
        self.assertEqual(prediction.head, "dog")
        self.assertEqual(prediction.rank, 1)

    def test_tied_candidates_resolve_lexicographically(self):
        source = knowledge(("dog", "IsA", "mammal"), ("cat", "IsA", "mammal"))
        prediction = self.classifier.predict_label(make_object("o", "dog", E1), source)
        self.assertEqual(prediction.head, "cat")
        self.assertEqual(prediction.candidates, frozenset({"cat", "dog"}))

    def test_falls_back_to_next_rank(self):
        lookup = self.source.lookup_heads

        def without_mammal(relation, tail):
            return set() if (relation, tail) == ("IsA", "mammal") else lookup(relation, tail)

        with patch.object(self.source, "lookup_heads", side_effect=without_mammal):
            prediction = self.classifier.predict_label(make_object("o", "dog", [1, 0.5, 0, 0]), self.source)
        self.assertEqual(prediction.head, "cup")
        self.assertEqual(prediction.rank, 2)

    def test_unresolvable_source(self):
        with patch.object(self.source, "lookup_heads", return_value=set()):
            with self.assertRaisesMessage(UnresolvableKnowledge, "knowledge source unresolvable"):
                self.classifier.predict_label(make_object("o", "dog", E1), self.source)

    def test_reachable_labels_grow_with_the_source(self):
        obj = make_object("o", "cup", E2)
        source = knowledge(("dog", "IsA", "mammal"))
        self.assertEqual(self.classifier.predict_label(obj, source).head, "dog")
        source.merge([Triplet("cup", "UsedFor", "drinking")])
        self.assertEqual(self.classifier.predict_label(obj, source).head, "cup")


class EvaluateTest(SimpleTestCase):
    def setUp(self):
        self.classifier = fixed_classifier()
        self.source = knowledge(("dog", "IsA", "mammal"), ("cup", "UsedFor", "drinking"))
        self.objects = [
            make_object("o0", "dog", E1),
            make_object("o1", "dog", E2),
            make_object("o2", "cup", E2),
            make_object("o3", "cup", E1),
        ]

    def test_perfect_predictions(self):
        objects = [make_object("o0", "dog", E1), make_object("o1", "cup", E2)] * 2
        report = self.classifier.evaluate(objects, self.source, known_heads={"dog"})
        self.assertEqual((report.overall, report.known, report.novel), (1.0, 1.0, 1.0))

    def test_half_correct(self):
        report = self.classifier.evaluate(self.objects, self.source, known_heads={"dog"})
        self.assertEqual((report.overall, report.known, report.novel), (0.5, 0.5, 0.5))
        self.assertEqual((report.n_known, report.n_novel), (2, 2))
        self.assertEqual(
            report.overall, (report.n_known * report.known + report.n_novel * report.novel) / report.size
        )

    def test_novel_heads_absent_from_source(self):
        report = self.classifier.evaluate(self.objects, knowledge(("dog", "IsA", "mammal")), known_heads={"dog"})
        self.assertEqual(report.novel, 0.0)

    def test_empty_partition_reports_none(self):
        report = self.classifier.evaluate(self.objects[:2], self.source, known_heads={"dog"})
        self.assertIsNone(report.novel)

    def test_empty_dataset(self):
        with self.assertRaises(EmptyDataset):
            self.classifier.evaluate([], self.source, known_heads=set())

    def test_unscorable_objects_count_as_wrong(self):
        objects = self.objects[:3] + [make_object("o4", "dog", [0, 0, 0, 0])]
        with self.assertLogs("acquisition.object_classifier", level="WARNING"):
            report = self.classifier.evaluate(objects, self.source, known_heads={"dog"})
        self.assertEqual(report.overall, 0.5)


class TrainingTest(SimpleTestCase):
    def setUp(self):
        self.concepts = ConceptTable(9, 4)
        self.source = knowledge(
            ("dog", "IsA", "mammal"), ("cup", "UsedFor", "drinking"), ("chair", "MadeOf", "wood"),
            ("pan", "AtLocation", "kitchen"),
        )
        rng = np.random.default_rng(2)
        self.acquired = []
        for index, triplet in enumerate(sorted(self.source.entries) * 2):
            raw = self.concepts.vector(*triplet.pair) + 0.3 * rng.standard_normal(4)
            self.acquired.append((make_object(f"o{index}", triplet.head, raw), triplet))
        self.classifier = ObjectClassifier(Projection.initialize(4, 4, seed=5, scale=0.4), self.concepts)

    def objective(self, projection):
        pairs = self.source.pairs()
        raw = [obj.raw for obj, _ in self.acquired]
        labels = [[1 if pair == triplet.pair else 0 for pair in pairs] for _, triplet in self.acquired]
        return loss_and_gradient(projection, TrainingBatch(raw, pairs, labels), self.concepts)[0]

    def test_zero_epochs_leave_projection_unchanged(self):
        tuned = self.classifier.fine_tune(self.acquired, self.source, TrainingConfig(epochs=0))
        self.assertTrue(tuned.projection.same_as(self.classifier.projection))

    def test_fine_tune_lowers_loss_on_acquired_pairs(self):
        config = TrainingConfig(epochs=50, learning_rate=0.02, batch_size=64, balance=False, select_best=False)
        tuned = self.classifier.fine_tune(self.acquired, self.source, config)
        self.assertLessEqual(self.objective(tuned.projection), self.objective(self.classifier.projection))
        self.assertFalse(tuned.projection.same_as(self.classifier.projection))

    def test_selection_keeps_the_start_when_training_degrades(self):
        objects = [(make_object(f"o{index}", triplet.head, self.concepts.vector(*triplet.pair)), triplet)
                   for index, triplet in enumerate(sorted(self.source.entries))]
        classifier = ObjectClassifier(Projection.identity(4), self.concepts)
        collapsed = np.zeros((4, 4))
        collapsed[:, 0] = 1.0

        def degrade(proj, *args, **kwargs):
            return Projection(collapsed, proj.temperature, steps=proj.steps + 1), 1.0

        with patch("acquisition.object_classifier.train_step", side_effect=degrade), \
                self.assertLogs("acquisition.object_classifier", level="INFO") as logs:
            tuned = classifier.fine_tune(objects, self.source, TrainingConfig(epochs=2))
        self.assertTrue(tuned.projection.same_as(classifier.projection))
        self.assertIn("Selected epoch 0/2", "\n".join(logs.output))

    def test_selection_never_loses_training_accuracy(self):
        objects = [obj for obj, _ in self.acquired]
        before = self.classifier.evaluate(objects, self.source, known_heads=()).overall
        tuned = self.classifier.fine_tune(self.acquired, self.source, TrainingConfig(epochs=10, batch_size=4))
        self.assertGreaterEqual(tuned.evaluate(objects, self.source, known_heads=()).overall, before)

    def test_loss_weights(self):
        labels = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
        mask = np.array([[1.0, 1.0, 1.0, 1.0], [0.0, 1.0, 1.0, 0.0]])
        np.testing.assert_allclose(loss_weights(labels, mask), [[1.0, 1 / 3, 1 / 3, 1 / 3], [0.0, 0.5, 0.5, 0.0]])
        np.testing.assert_array_equal(loss_weights(labels, mask, balance=False), mask)

    def test_fine_tune_needs_pairs(self):
        with self.assertRaises(EmptyDataset):
            self.classifier.fine_tune([], self.source)

    def test_fine_tune_with_sampled_negatives_is_seeded(self):
        config = TrainingConfig(epochs=3, learning_rate=0.05, negatives=1, batch_size=3, seed=4)
        first = self.classifier.fine_tune(self.acquired, self.source, config)
        second = self.classifier.fine_tune(self.acquired, self.source, config)
        self.assertTrue(first.projection.same_as(second.projection))

    def test_train_on_generated_world(self):
        world = small_world()
        config = TrainingConfig(epochs=3, learning_rate=0.05, select_best=False, seed=1)
        classifier, losses = ObjectClassifier.train(world.split_objects("train"), train_knowledge(world),
                                                    world.concepts, config)
        self.assertEqual(len(losses), 3)
        self.assertGreater(classifier.projection.steps, 0)
        self.assertLess(losses[-1], losses[0])

    def test_invalid_training_config(self):
        with self.assertRaises(ValueError):
            TrainingConfig(batch_size=0)
        with self.assertRaises(ValueError):
            TrainingConfig.from_dict({"epochs": 2, "momentum": 0.9})
