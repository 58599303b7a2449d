from apf.pipeline.records import DatasetRecord, SftSample, read_jsonl, write_json, write_jsonl
from apf.pipeline.stages import (
    SFT_HYPERPARAMETERS,
    SFT_INSTRUCTION,
    SFT_INSTRUCTION_VERSION,
    Failure,
    ScoreHistogram,
    annotate_references,
    augment,
    augment_all,
    derive_requirements,
    derive_with_sources,
    export_sft,
    generate_base,
    nearest_instances,
    paraphrase_options,
    report_scores,
    score_and_select,
    score_records,
    select,
    select_test_instances,
    sft_sample,
    unpermute,
)

__all__ = [
    "DatasetRecord",
    "Failure",
    "SFT_HYPERPARAMETERS",
    "SFT_INSTRUCTION",
    "SFT_INSTRUCTION_VERSION",
    "ScoreHistogram",
    "SftSample",
    "annotate_references",
    "augment",
    "augment_all",
    "derive_requirements",
    "derive_with_sources",
    "export_sft",
    "generate_base",
    "nearest_instances",
    "paraphrase_options",
    "read_jsonl",
    "report_scores",
    "score_and_select",
    "score_records",
    "select",
    "select_test_instances",
    "sft_sample",
    "unpermute",
    "write_json",
    "write_jsonl",
]
