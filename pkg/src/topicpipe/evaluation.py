"""Fitness evaluator interface used by the optimizers, with local and broker-backed
implementations. Both funnel through the same task-execution code, so swapping the
backend changes wall time only, never fitness values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from . import distributed
from .corpus import Dataset
from .metrics import DEFAULT_METRIC
from .pipeline import GraphPipeline, pipeline_to_dict


@dataclass(frozen=True)
class EvalRequest:
    pipeline: GraphPipeline
    seed: int


@dataclass
class EvalOutcome:
    fitness: float | None
    error: str | None = None
    elapsed_s: float = 0.0


class Evaluator(Protocol):
    def evaluate_batch(self, requests: list[EvalRequest]) -> list[EvalOutcome]: ...


def _outcomes(results: list[distributed.TaskResult]) -> list[EvalOutcome]:
    return [
        EvalOutcome(fitness=r.fitness, error=None if r.ok else r.error, elapsed_s=r.elapsed_s)
        for r in results
    ]


class LocalEvaluator:
    """Sequential in-process evaluation; also counts training runs for budget accounting."""

    def __init__(
        self,
        dataset: Dataset,
        num_topics: int,
        num_background: int,
        metric: str = DEFAULT_METRIC,
        background_tau: float = 0.01,
        dataset_id: str = "local",
    ):
        self.dataset = dataset
        self.num_topics = num_topics
        self.num_background = num_background
        self.metric = metric
        self.background_tau = background_tau
        self.dataset_id = dataset_id
        self.execute_calls = 0
        self._task_seq = 0

    def _task(self, request: EvalRequest) -> distributed.Task:
        self._task_seq += 1
        return distributed.Task(
            task_id=f"{self.dataset_id}-{self._task_seq:08d}",
            dataset_id=self.dataset_id,
            pipeline_payload=pipeline_to_dict(request.pipeline),
            num_topics=self.num_topics,
            num_background=self.num_background,
            eval_seed=request.seed,
            metric=self.metric,
            background_tau=self.background_tau,
        )

    def evaluate_batch(self, requests: list[EvalRequest]) -> list[EvalOutcome]:
        tasks = [self._task(r) for r in requests]
        self.execute_calls += len(tasks)
        results = distributed.local_backend(tasks, {self.dataset_id: self.dataset})
        return _outcomes(results)


class BrokerEvaluator:
    """Map-like batch submission to a running broker; blocks until every result lands."""

    def __init__(
        self,
        broker: distributed.Broker,
        dataset_id: str,
        num_topics: int,
        num_background: int,
        metric: str = DEFAULT_METRIC,
        background_tau: float = 0.01,
        deadline_s: float = distributed.DEFAULT_DEADLINE_S,
        wait_timeout_s: float | None = None,
    ):
        self.broker = broker
        self.dataset_id = dataset_id
        self.num_topics = num_topics
        self.num_background = num_background
        self.metric = metric
        self.background_tau = background_tau
        self.deadline_s = deadline_s
        self.wait_timeout_s = wait_timeout_s
        self.execute_calls = 0
        self._task_seq = 0

    def evaluate_batch(self, requests: list[EvalRequest]) -> list[EvalOutcome]:
        tasks = []
        for request in requests:
            self._task_seq += 1
            tasks.append(
                distributed.Task(
                    task_id=f"{self.dataset_id}-{self._task_seq:08d}",
                    dataset_id=self.dataset_id,
                    pipeline_payload=pipeline_to_dict(request.pipeline),
                    num_topics=self.num_topics,
                    num_background=self.num_background,
                    eval_seed=request.seed,
                    metric=self.metric,
                    deadline_s=self.deadline_s,
                    background_tau=self.background_tau,
                )
            )
        self.execute_calls += len(tasks)
        handle = self.broker.submit_batch(tasks)
        return _outcomes(handle.wait(timeout=self.wait_timeout_s))
