from django.db import models
from django.db.models import JSONField
from django.utils import timezone


class ExperimentRun(models.Model):
    """
    Ledger entry for one ``run`` or ``compare`` invocation.

    The report and audit files in ``out_dir`` are the canonical results; this
    row only indexes them and tracks the run's lifecycle.
    """

    COMMAND_CHOICES = [
        ("run", "Single episode"),
        ("compare", "Policy comparison"),
    ]

    STATUS_CHOICES = [
        ("pending", "Pending"),
        ("running", "Running"),
        ("completed", "Completed"),
        ("failed", "Failed"),
    ]

    command = models.CharField(max_length=20, choices=COMMAND_CHOICES, db_index=True)
    status = models.CharField(max_length=20, choices=STATUS_CHOICES, default="pending", db_index=True)

    world_path = models.CharField(max_length=500)
    checkpoint_path = models.CharField(max_length=500)
    out_dir = models.CharField(max_length=500)

    config = JSONField(default=dict, blank=True, help_text="Episode configuration as passed to the harness")
    seeds = JSONField(default=list, blank=True)

    error_message = models.TextField(blank=True, help_text="Error message if the run failed")

    created_at = models.DateTimeField(auto_now_add=True, db_index=True)
    completed_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        verbose_name = "Experiment Run"
        verbose_name_plural = "Experiment Runs"
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.get_command_display()} #{self.pk} - {self.status}"

    def mark_running(self):
        self.status = "running"
        self.save(update_fields=["status"])

    def mark_completed(self, reports):
        """Store one ``EpisodeRecord`` per report row and close the run."""
        for report in reports:
            EpisodeRecord.from_report(self, report)
        self.status = "completed"
        self.completed_at = timezone.now()
        self.save(update_fields=["status", "completed_at"])

    def mark_failed(self, error):
        self.status = "failed"
        self.error_message = str(error)
        self.completed_at = timezone.now()
        self.save(update_fields=["status", "error_message", "completed_at"])


class EpisodeRecord(models.Model):
    """One report row: a policy's zero-shot and fine-tune accuracies and its acquisition counts."""

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="episodes")
    policy = models.CharField(max_length=20, db_index=True)
    label = models.CharField(max_length=40)

    overall_zs = models.FloatField()
    overall_ft = models.FloatField(null=True, blank=True)
    known_zs = models.FloatField(null=True, blank=True)
    known_ft = models.FloatField(null=True, blank=True)
    novel_zs = models.FloatField(null=True, blank=True)
    novel_ft = models.FloatField(null=True, blank=True)

    n_valid_q = models.FloatField(default=0, help_text="Valid questions (mean over seeds for aggregated rows)")
    n_knowledge = models.FloatField(default=0, help_text="Unique acquired triplets absent from the training knowledge")

    seeds = JSONField(default=list, blank=True)
    std = JSONField(default=dict, blank=True, help_text="Per-column standard deviation for aggregated rows")

    class Meta:
        verbose_name = "Episode Record"
        verbose_name_plural = "Episode Records"
        ordering = ["run", "id"]

    def __str__(self):
        return f"{self.label} (run #{self.run_id})"

    @classmethod
    def from_report(cls, run, report):
        row = report.to_row()
        return cls.objects.create(
            run=run,
            policy=row["policy"],
            label=row["label"],
            overall_zs=row["overall_zs"],
            overall_ft=row["overall_ft"],
            known_zs=row["known_zs"],
            known_ft=row["known_ft"],
            novel_zs=row["novel_zs"],
            novel_ft=row["novel_ft"],
            n_valid_q=row["n_valid_q"],
            n_knowledge=row["n_knowledge"],
            seeds=row["seeds"],
            std={key: value for key, value in report.std.items() if value is not None},
        )
