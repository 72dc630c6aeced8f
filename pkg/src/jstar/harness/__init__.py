from .config import InitSpec, RunConfig
from .data import (DatasetRecord, gen_conversation, gen_toy_asr, gen_toy_reorder_mt, generate,
                   read_records, write_dataset, write_records)
from .evaluate import REPORT_KEYS, evaluate, evaluate_conversation
from .train import TrainingDiverged, TrainResult, train

__all__ = [
    "DatasetRecord", "InitSpec", "REPORT_KEYS", "RunConfig", "TrainResult", "TrainingDiverged",
    "evaluate", "evaluate_conversation", "gen_conversation", "gen_toy_asr", "gen_toy_reorder_mt",
    "generate", "read_records", "train", "write_dataset", "write_records",
]
