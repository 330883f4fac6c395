"""Subculture-aware retrieval, reporting, and classification pipeline.

Three stages: plan and run web searches about a target subculture, distill
the results into a structured report, then classify sentences by first
interpreting them against that report. Ships prompting baselines, a macro-F1
evaluation harness, and deterministic mock backends for offline runs.
"""

__version__ = "0.1.0"

from .core import (
    DatasetRecord,
    InputSentence,
    LabelSet,
    RunRecord,
    SubcultureSpec,
    TaskSpec,
    load_dataset,
    load_predictions,
    parse_labels,
    parse_single_label,
    save_predictions,
)
from .pipeline import (
    AlignmentReport,
    QueryPlan,
    SearchResultSet,
    TermEntry,
    execute_queries,
    generate_queries,
    generate_report,
    judge_report,
    validate_report,
)
from .solver import (
    DialogueHistory,
    Interpretation,
    MethodConfig,
    align_sentence,
    classify_plan_and_solve,
    classify_sas,
    classify_self_refine,
    classify_sentence,
    classify_zero_shot,
    classify_zero_shot_cot,
    solve_task,
)
from .evaluate import (
    ComparisonTable,
    ConfusionMatrix,
    QaPair,
    TaskScores,
    compare_methods,
    confusion_matrix,
    evaluate_run,
    f1_per_class,
    knowledge_probe,
    macro_f1,
)

__all__ = [
    "__version__",
    "DatasetRecord",
    "InputSentence",
    "LabelSet",
    "RunRecord",
    "SubcultureSpec",
    "TaskSpec",
    "load_dataset",
    "load_predictions",
    "parse_labels",
    "parse_single_label",
    "save_predictions",
    "AlignmentReport",
    "QueryPlan",
    "SearchResultSet",
    "TermEntry",
    "execute_queries",
    "generate_queries",
    "generate_report",
    "judge_report",
    "validate_report",
    "DialogueHistory",
    "Interpretation",
    "MethodConfig",
    "align_sentence",
    "classify_plan_and_solve",
    "classify_sas",
    "classify_self_refine",
    "classify_sentence",
    "classify_zero_shot",
    "classify_zero_shot_cot",
    "solve_task",
    "ComparisonTable",
    "ConfusionMatrix",
    "QaPair",
    "TaskScores",
    "compare_methods",
    "confusion_matrix",
    "evaluate_run",
    "f1_per_class",
    "knowledge_probe",
    "macro_f1",
]
