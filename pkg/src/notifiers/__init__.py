"""Report channels for sweep outcomes and refinement series."""
from .reports import emit_report, read_outcomes, write_json, write_refine_csv

__all__ = ["emit_report", "read_outcomes", "write_json", "write_refine_csv"]
