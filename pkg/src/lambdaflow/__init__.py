"""Declarative serverless dataflow on a deterministic FaaS simulator."""

from .errors import LambdaflowError
from .goals import GoalSpec
from .orchestrator import Job, Orchestrator, final_outputs, run_local
from .pipeline import CompiledPipeline, Pipeline, compile_pipeline, load
from .session import Session, make_session, simulate
from .simulator import ClusterModel, Simulator
from .store import DiskLog, DiskStore, ExecutionLog, ObjectStore

__version__ = "0.1.0"

__all__ = [
    "ClusterModel", "CompiledPipeline", "DiskLog", "DiskStore", "ExecutionLog", "GoalSpec",
    "Job", "LambdaflowError", "ObjectStore", "Orchestrator", "Pipeline", "Session",
    "Simulator", "compile_pipeline", "final_outputs", "load", "make_session", "run_local",
    "simulate",
]
