from django.test import TestCase

from acquisition.experiment_harness import EpisodeReport
from acquisition.models import EpisodeRecord, ExperimentRun
from acquisition.object_classifier import AccuracyReport


class ExperimentRunModelTest(TestCase):
    def setUp(self):
        self.run = ExperimentRun.objects.create(
            command="compare",
            world_path="runs/world.json",
            checkpoint_path="runs/projection.ckpt",
            out_dir="runs/compare",
            seeds=[7, 13, 29],
        )

    def test_defaults(self):
        self.assertEqual(self.run.status, "pending")
        self.assertEqual(self.run.config, {})
        self.assertIsNone(self.run.completed_at)
        self.assertEqual(str(self.run), f"Policy comparison #{self.run.pk} - pending")

    def test_mark_running(self):
        self.run.mark_running()
        self.run.refresh_from_db()
        self.assertEqual(self.run.status, "running")

    def test_mark_completed_stores_one_record_per_row(self):
        baseline = EpisodeReport("baseline", AccuracyReport(0.5, 0.6, 0.0, 5, 1))
        random_row = EpisodeReport(
            "random",
            AccuracyReport(0.55, 0.6, 0.3, 5, 1),
            AccuracyReport(0.6, 0.62, 0.5, 5, 1),
            n_valid_q=20.0,
            n_knowledge=11.5,
            seeds=(7, 13, 29),
            std={"overall_zs": 0.02, "overall_ft": None},
        )
        self.run.mark_completed([baseline, random_row])
        self.run.refresh_from_db()

        self.assertEqual(self.run.status, "completed")
        self.assertIsNotNone(self.run.completed_at)
        records = list(self.run.episodes.all())
        self.assertEqual([r.policy for r in records], ["baseline", "random"])
        self.assertEqual(records[0].label, "CLIP-Ret")
        self.assertIsNone(records[0].overall_ft)
        self.assertEqual(records[1].seeds, [7, 13, 29])
        self.assertEqual(records[1].std, {"overall_zs": 0.02})
        self.assertEqual(records[1].n_knowledge, 11.5)
        self.assertEqual(str(records[1]), f"Random (run #{self.run.pk})")

    def test_mark_failed(self):
        self.run.mark_failed(RuntimeError("world file vanished"))
        self.run.refresh_from_db()
        self.assertEqual(self.run.status, "failed")
        self.assertEqual(self.run.error_message, "world file vanished")
        self.assertIsNotNone(self.run.completed_at)

    def test_records_cascade_with_run(self):
        EpisodeRecord.from_report(self.run, EpisodeReport("ours", AccuracyReport(1.0, 1.0, 1.0, 1, 1)))
        self.run.delete()
        self.assertEqual(EpisodeRecord.objects.count(), 0)
