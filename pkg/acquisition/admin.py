from django.contrib import admin
from django.db.models import JSONField
from django_json_widget.widgets import JSONEditorWidget

from acquisition.models import EpisodeRecord, ExperimentRun

JSON_EDITOR = {"widget": JSONEditorWidget(options={"mode": "text", "modes": ["text", "tree", "view"]})}


class EpisodeRecordInline(admin.TabularInline):
    model = EpisodeRecord
    extra = 0
    fields = ("label", "overall_zs", "overall_ft", "novel_zs", "novel_ft", "n_valid_q", "n_knowledge")
    readonly_fields = fields
    can_delete = False


@admin.register(ExperimentRun)
class ExperimentRunAdmin(admin.ModelAdmin):
    list_display = ("id", "command", "status", "world_path", "created_at", "completed_at")
    list_filter = ("command", "status", "created_at")
    search_fields = ("world_path", "checkpoint_path", "out_dir", "error_message")
    readonly_fields = ("created_at", "completed_at")
    inlines = [EpisodeRecordInline]
    formfield_overrides = {JSONField: JSON_EDITOR}


@admin.register(EpisodeRecord)
class EpisodeRecordAdmin(admin.ModelAdmin):
    list_display = ("run", "label", "overall_zs", "overall_ft", "novel_zs", "n_valid_q", "n_knowledge")
    list_select_related = ("run",)
    list_filter = ("policy",)
    formfield_overrides = {JSONField: JSON_EDITOR}
