import django.db.models.deletion
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = []

    operations = [
        migrations.CreateModel(
            name="ExperimentRun",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                (
                    "command",
                    models.CharField(
                        choices=[("run", "Single episode"), ("compare", "Policy comparison")],
                        db_index=True,
                        max_length=20,
                    ),
                ),
                (
                    "status",
                    models.CharField(
                        choices=[
                            ("pending", "Pending"),
                            ("running", "Running"),
                            ("completed", "Completed"),
                            ("failed", "Failed"),
                        ],
                        db_index=True,
                        default="pending",
                        max_length=20,
                    ),
                ),
                ("world_path", models.CharField(max_length=500)),
                ("checkpoint_path", models.CharField(max_length=500)),
                ("out_dir", models.CharField(max_length=500)),
                (
                    "config",
                    models.JSONField(
                        blank=True, default=dict, help_text="Episode configuration as passed to the harness"
                    ),
                ),
                ("seeds", models.JSONField(blank=True, default=list)),
                ("error_message", models.TextField(blank=True, help_text="Error message if the run failed")),
                ("created_at", models.DateTimeField(auto_now_add=True, db_index=True)),
                ("completed_at", models.DateTimeField(blank=True, null=True)),
            ],
            options={
                "verbose_name": "Experiment Run",
                "verbose_name_plural": "Experiment Runs",
                "ordering": ["-created_at"],
            },
        ),
        migrations.CreateModel(
            name="EpisodeRecord",
            fields=[
                ("id", models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name="ID")),
                ("policy", models.CharField(db_index=True, max_length=20)),
                ("label", models.CharField(max_length=40)),
                ("overall_zs", models.FloatField()),
                ("overall_ft", models.FloatField(blank=True, null=True)),
                ("known_zs", models.FloatField(blank=True, null=True)),
                ("known_ft", models.FloatField(blank=True, null=True)),
                ("novel_zs", models.FloatField(blank=True, null=True)),
                ("novel_ft", models.FloatField(blank=True, null=True)),
                (
                    "n_valid_q",
                    models.FloatField(
                        default=0, help_text="Valid questions (mean over seeds for aggregated rows)"
                    ),
                ),
                (
                    "n_knowledge",
                    models.FloatField(
                        default=0, help_text="Unique acquired triplets absent from the training knowledge"
                    ),
                ),
                ("seeds", models.JSONField(blank=True, default=list)),
                (
                    "std",
                    models.JSONField(
                        blank=True, default=dict, help_text="Per-column standard deviation for aggregated rows"
                    ),
                ),
                (
                    "run",
                    models.ForeignKey(
                        on_delete=django.db.models.deletion.CASCADE,
                        related_name="episodes",
                        to="acquisition.experimentrun",
                    ),
                ),
            ],
            options={
                "verbose_name": "Episode Record",
                "verbose_name_plural": "Episode Records",
                "ordering": ["run", "id"],
            },
        ),
    ]
