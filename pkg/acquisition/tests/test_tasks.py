import shutil
import tempfile
from pathlib import Path
from unittest.mock import patch

from django.test import TestCase

from acquisition.models import ExperimentRun
from acquisition.tests.fixtures import QUICK_EPISODE, write_experiment_files


class RunComparisonTaskTest(TestCase):
    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = Path(tempfile.mkdtemp())
        cls.world_path, cls.checkpoint_path = write_experiment_files(cls.tmp)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def create_run(self, **overrides):
        fields = dict(
            command="compare",
            world_path=str(self.world_path),
            checkpoint_path=str(self.checkpoint_path),
            out_dir=str(self.tmp / "compare"),
            config=QUICK_EPISODE,
            seeds=[7, 13, 29],
        )
        fields.update(overrides)
        return ExperimentRun.objects.create(**fields)

    def test_completes_pending_run(self):
        run = self.create_run()
        from acquisition.tasks import run_comparison

        result = run_comparison.apply(args=[run.pk]).get()

        self.assertEqual(result, {"status": "completed", "run_id": run.pk, "rows": 5})
        run.refresh_from_db()
        self.assertEqual(run.status, "completed")
        self.assertEqual(
            list(run.episodes.values_list("policy", flat=True)), ["baseline", "all-conf", "all-exp", "random", "ours"]
        )
        self.assertTrue((self.tmp / "compare" / "report.csv").exists())
        self.assertTrue((self.tmp / "compare" / "report.json").exists())

    def test_missing_run(self):
        from acquisition.tasks import run_comparison

        result = run_comparison.apply(args=[999999]).get()
        self.assertEqual(result["status"], "missing")

    def test_skips_run_that_is_not_pending(self):
        run = self.create_run(status="completed")
        from acquisition.tasks import run_comparison

        result = run_comparison.apply(args=[run.pk]).get()
        self.assertEqual(result["status"], "skipped")

    @patch("acquisition.tasks.capture_exception")
    @patch("acquisition.tasks.set_context")
    def test_failure_marks_run_failed(self, mock_set_context, mock_capture):
        run = self.create_run(world_path=str(self.tmp / "missing.json"))
        from acquisition.tasks import execute_comparison

        with self.assertLogs("acquisition.tasks", level="ERROR"), self.assertRaises(OSError):
            execute_comparison(run)

        run.refresh_from_db()
        self.assertEqual(run.status, "failed")
        self.assertIn("missing.json", run.error_message)
        mock_capture.assert_called_once()
        mock_set_context.assert_called_once()
        self.assertEqual(mock_set_context.call_args[0][0], "experiment_run")
