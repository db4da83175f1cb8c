"""Metrics, confusion matrices, statistical model comparison and report rendering."""

from .metrics import ConfusionMatrix, MetricsReport, confusion, metrics, topk_accuracy
from .report import comparison_summary, confusion_svg, metrics_table_csv, metrics_table_text
from .stats import (PAIRED_T, WILCOXON, ComparisonResult, DegenerateStatsError, TestResult, choose_test,
                    compare_models, paired_ttest, shapiro_wilk, wilcoxon)

__all__ = [
    "ConfusionMatrix", "MetricsReport", "confusion", "metrics", "topk_accuracy",
    "comparison_summary", "confusion_svg", "metrics_table_csv", "metrics_table_text",
    "PAIRED_T", "WILCOXON", "ComparisonResult", "DegenerateStatsError", "TestResult", "choose_test",
    "compare_models", "paired_ttest", "shapiro_wilk", "wilcoxon",
]
