"""Decode cost model, deployment planner and pipeline simulator for attention-FFN disaggregation."""

__version__ = "0.1.0"
