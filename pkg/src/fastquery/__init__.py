"""Private embedding-table lookup: RLWE arithmetic, low-bit packing,
quantization, fine-tuning, the two-party query protocol and its
communication model."""

from .coeff_packing import MatVecPlan, plan_matvec
from .costmodel import CostReport, MethodConfig, method_report, validate_transcript
from .finetune import FinetuneConfig
from .protocol import QueryResult, Transcript, run_baseline_offline, run_online_query
from .quantizer import QuantConfig, QuantizedTable, quantize_table
from .ring import RingParams
from .slot_packing import SlotLayout, make_layout

__version__ = "0.1.0"

__all__ = [
    "CostReport",
    "FinetuneConfig",
    "MatVecPlan",
    "MethodConfig",
    "QuantConfig",
    "QuantizedTable",
    "QueryResult",
    "RingParams",
    "SlotLayout",
    "Transcript",
    "make_layout",
    "method_report",
    "plan_matvec",
    "quantize_table",
    "run_baseline_offline",
    "run_online_query",
    "validate_transcript",
]
