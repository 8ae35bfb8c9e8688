"""Distributed fitness evaluation: a TCP broker owning a task queue, workers with local
dataset stores, and a sequential local backend sharing the exact same task-execution
code path.

Wire protocol: length-prefixed (4-byte big-endian) UTF-8 JSON frames; message
types HELLO, TASK_REQUEST, TASK, RESULT, HEARTBEAT, SHUTDOWN, ACK. See
PROTOCOL.md for the frame schema and golden examples. Broker state mutations
are serialized through a single lock (one logical writer); worker connections
are independent sessions.
"""

from __future__ import annotations

import bisect
import json
import logging
import socket
import struct
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from . import metrics, pipeline
from .corpus import Dataset, load_corpus_dir

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_DEADLINE_S = 300.0

MSG_HELLO = "HELLO"
MSG_TASK_REQUEST = "TASK_REQUEST"
MSG_TASK = "TASK"
MSG_RESULT = "RESULT"
MSG_HEARTBEAT = "HEARTBEAT"
MSG_SHUTDOWN = "SHUTDOWN"
MSG_ACK = "ACK"


class ProtocolError(RuntimeError):
    pass


class ConnectionClosed(ConnectionError):
    pass


def encode_frame(message: dict) -> bytes:
    """Canonical frame bytes: 4-byte big-endian length + compact sorted-key JSON."""
    body = json.dumps(message, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack(">I", len(body)) + body


def _recv_exactly(sock: socket.socket, n: int, stop: threading.Event | None = None) -> bytes:
    chunks = bytearray()
    while len(chunks) < n:
        try:
            chunk = sock.recv(n - len(chunks))
        except socket.timeout:
            if stop is not None and stop.is_set():
                raise ConnectionClosed("shutting down")
            continue
        if not chunk:
            raise ConnectionClosed("peer closed connection")
        chunks.extend(chunk)
    return bytes(chunks)


def read_frame(sock: socket.socket, stop: threading.Event | None = None) -> dict:
    header = _recv_exactly(sock, 4, stop)
    (length,) = struct.unpack(">I", header)
    if length > 64 * 1024 * 1024:
        raise ProtocolError(f"frame of {length} bytes exceeds limit")
    body = _recv_exactly(sock, length, stop)
    try:
        message = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad frame body: {exc}") from exc
    if not isinstance(message, dict) or "type" not in message:
        raise ProtocolError("frame must be a JSON object with a 'type' field")
    return message


# ---------------------------------------------------------------------------
# Task envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Task:
    task_id: str
    dataset_id: str
    pipeline_payload: dict
    num_topics: int
    num_background: int
    eval_seed: int
    metric: str
    deadline_s: float = DEFAULT_DEADLINE_S
    background_tau: float = 0.01

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "dataset_id": self.dataset_id,
            "pipeline": self.pipeline_payload,
            "num_topics": self.num_topics,
            "num_background": self.num_background,
            "eval_seed": self.eval_seed,
            "metric": self.metric,
            "deadline_s": self.deadline_s,
            "background_tau": self.background_tau,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Task":
        return cls(
            task_id=data["task_id"],
            dataset_id=data["dataset_id"],
            pipeline_payload=data["pipeline"],
            num_topics=int(data["num_topics"]),
            num_background=int(data["num_background"]),
            eval_seed=int(data["eval_seed"]),
            metric=data["metric"],
            deadline_s=float(data.get("deadline_s", DEFAULT_DEADLINE_S)),
            background_tau=float(data.get("background_tau", 0.01)),
        )


@dataclass
class TaskResult:
    task_id: str
    status: str  # "ok" | "failed"
    fitness: float | None = None
    error: str | None = None
    worker_id: str | None = None
    elapsed_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status,
            "fitness": self.fitness,
            "error": self.error,
            "worker_id": self.worker_id,
            "elapsed_s": self.elapsed_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskResult":
        return cls(
            task_id=data["task_id"],
            status=data["status"],
            fitness=data.get("fitness"),
            error=data.get("error"),
            worker_id=data.get("worker_id"),
            elapsed_s=float(data.get("elapsed_s", 0.0)),
        )


def evaluate_task(task: Task, dataset: Dataset, worker_id: str = "local") -> TaskResult:
    """Run one task against a loaded dataset; failures become failed results, not exceptions.

    This is the single execution path shared by workers and the local backend,
    so fitness is a pure function of (genome, dataset, T, B, eval_seed, metric).
    """
    start = time.perf_counter()
    try:
        gp = pipeline.pipeline_from_dict(task.pipeline_payload)
        violations = pipeline.validate(gp)
        if violations:
            raise pipeline.PipelineValidationError(violations)
        fitness_fn = metrics.get_metric(task.metric)
        result = pipeline.execute(
            gp,
            dataset,
            num_topics=task.num_topics,
            num_background=task.num_background,
            seed=task.eval_seed,
            fitness_fn=fitness_fn,
            background_tau=task.background_tau,
        )
    except Exception as exc:
        return TaskResult(
            task_id=task.task_id,
            status="failed",
            error=f"{type(exc).__name__}: {exc}",
            worker_id=worker_id,
            elapsed_s=time.perf_counter() - start,
        )
    return TaskResult(
        task_id=task.task_id,
        status="ok",
        fitness=result.fitness,
        worker_id=worker_id,
        elapsed_s=time.perf_counter() - start,
    )


def local_backend(tasks: list[Task], datasets: dict[str, Dataset]) -> list[TaskResult]:
    """Execute tasks sequentially in submission order, same semantics as the broker path."""
    results = []
    for task in tasks:
        dataset = datasets.get(task.dataset_id)
        if dataset is None:
            results.append(
                TaskResult(task_id=task.task_id, status="failed", error=f"unknown dataset {task.dataset_id!r}")
            )
            continue
        results.append(evaluate_task(task, dataset, worker_id="local"))
    return results


# ---------------------------------------------------------------------------
# Broker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BrokerConfig:
    host: str = "127.0.0.1"
    port: int = 0
    liveness_timeout_s: float = 30.0
    max_attempts: int = 3
    sweep_interval_s: float = 1.0


@dataclass
class _QueueEntry:
    seq: int
    attempts: int
    task: Task

    def __lt__(self, other: "_QueueEntry") -> bool:
        return self.seq < other.seq


@dataclass
class _Assignment:
    worker_id: str
    dispatched_at: float
    attempts: int
    task: Task
    seq: int = 0


@dataclass
class _WorkerRecord:
    worker_id: str
    datasets: set = field(default_factory=set)
    last_heartbeat: float = 0.0
    current_task_id: str | None = None
    connected: bool = False


class BatchHandle:
    """Awaitable handle over one submitted batch; resolves when every task is terminal."""

    def __init__(self, task_ids: list[str]):
        self._task_ids = task_ids
        self._results: dict[str, TaskResult] = {}
        self._event = threading.Event()
        if not task_ids:
            self._event.set()

    def _offer(self, result: TaskResult) -> None:
        self._results[result.task_id] = result
        if len(self._results) == len(self._task_ids):
            self._event.set()

    @property
    def done_count(self) -> int:
        return len(self._results)

    def partial_results(self) -> dict[str, TaskResult]:
        return dict(self._results)

    def wait(self, timeout: float | None = None) -> list[TaskResult]:
        if not self._event.wait(timeout):
            raise TimeoutError(f"batch incomplete: {self.done_count}/{len(self._task_ids)} results")
        return [self._results[tid] for tid in self._task_ids]


class Broker:
    """Queue-owning coordinator: FIFO dispatch by dataset locality, liveness-based requeue,
    first-wins result deduplication."""

    def __init__(self, config: BrokerConfig | None = None):
        self.config = config or BrokerConfig()
        self._cond = threading.Condition()
        self._queue: list[_QueueEntry] = []
        self._assignments: dict[str, _Assignment] = {}
        self._results: dict[str, TaskResult] = {}
        self._handles: dict[str, list[BatchHandle]] = {}
        self._workers: dict[str, _WorkerRecord] = {}
        self._known_datasets: set = set()
        self._seq = 0
        self._enqueued_total = 0
        self._duplicates_discarded = 0
        self._stop = threading.Event()
        self._server_sock: socket.socket | None = None
        self._threads: list[threading.Thread] = []

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> "Broker":
        self._server_sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server_sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server_sock.bind((self.config.host, self.config.port))
        self._server_sock.listen()
        self._server_sock.settimeout(0.2)
        acceptor = threading.Thread(target=self._accept_loop, name="broker-accept", daemon=True)
        sweeper = threading.Thread(target=self._sweep_loop, name="broker-sweep", daemon=True)
        self._threads = [acceptor, sweeper]
        acceptor.start()
        sweeper.start()
        log.info("broker listening on %s:%d", *self.address)
        return self

    @property
    def address(self) -> tuple[str, int]:
        assert self._server_sock is not None, "broker not started"
        return self._server_sock.getsockname()[:2]

    def shutdown(self) -> None:
        self._stop.set()
        with self._cond:
            self._cond.notify_all()
        for t in self._threads:
            t.join(timeout=5)
        if self._server_sock is not None:
            self._server_sock.close()

    def __enter__(self) -> "Broker":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.shutdown()

    # -- submission API -----------------------------------------------------

    def register_dataset(self, dataset_id: str) -> None:
        with self._cond:
            self._known_datasets.add(dataset_id)

    def submit_batch(self, tasks: list[Task]) -> BatchHandle:
        """Enqueue tasks FIFO; unknown dataset ids fail immediately without poisoning the batch."""
        with self._cond:
            handle = BatchHandle([t.task_id for t in tasks])
            for task in tasks:
                if task.task_id in self._results or task.task_id in self._assignments:
                    raise ValueError(f"duplicate task_id {task.task_id!r}")
                self._enqueued_total += 1
                self._handles.setdefault(task.task_id, []).append(handle)
                if task.dataset_id not in self._known_datasets:
                    self._finish_locked(
                        TaskResult(
                            task_id=task.task_id,
                            status="failed",
                            error=f"unknown dataset {task.dataset_id!r}",
                        )
                    )
                    continue
                self._seq += 1
                bisect.insort(self._queue, _QueueEntry(seq=self._seq, attempts=1, task=task))
            self._cond.notify_all()
            return handle

    def requeue_expired(self, now: float | None = None) -> list[Task]:
        """Return tasks whose worker went stale or whose deadline elapsed to the queue.

        Tasks exceeding max_attempts get a terminal failed result instead.
        """
        now = time.monotonic() if now is None else now
        requeued = []
        with self._cond:
            for task_id, asg in list(self._assignments.items()):
                worker = self._workers.get(asg.worker_id)
                stale = worker is None or (now - worker.last_heartbeat) > self.config.liveness_timeout_s
                expired = asg.task.deadline_s > 0 and (now - asg.dispatched_at) > asg.task.deadline_s
                if not (stale or expired):
                    continue
                del self._assignments[task_id]
                if worker is not None and worker.current_task_id == task_id:
                    worker.current_task_id = None
                attempts = asg.attempts + 1
                if attempts > self.config.max_attempts:
                    self._finish_locked(
                        TaskResult(task_id=task_id, status="failed", error="exhausted retries")
                    )
                    continue
                # keep the original age so requeued tasks go back near the front
                entry = _QueueEntry(seq=asg.seq, attempts=attempts, task=asg.task)
                bisect.insort(self._queue, entry)
                requeued.append(asg.task)
                log.warning(
                    "requeued task %s (attempt %d/%d, %s)",
                    task_id,
                    attempts,
                    self.config.max_attempts,
                    "worker stale" if stale else "deadline elapsed",
                )
            if requeued:
                self._cond.notify_all()
        return requeued

    def snapshot(self) -> dict:
        """Consistent queue-conservation counters."""
        with self._cond:
            completed = sum(1 for r in self._results.values() if r.ok)
            failed = len(self._results) - completed
            return {
                "enqueued_total": self._enqueued_total,
                "queued": len(self._queue),
                "in_flight": len(self._assignments),
                "completed": completed,
                "failed": failed,
                "duplicates_discarded": self._duplicates_discarded,
                "workers": {
                    w.worker_id: sorted(w.datasets) for w in self._workers.values() if w.connected
                },
            }

    # -- internals ----------------------------------------------------------

    def _finish_locked(self, result: TaskResult) -> None:
        if result.task_id in self._results:
            self._duplicates_discarded += 1
            log.info("discarding duplicate result for task %s (first-wins)", result.task_id)
            return
        self._results[result.task_id] = result
        for handle in self._handles.pop(result.task_id, []):
            handle._offer(result)

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, addr = self._server_sock.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            conn.settimeout(0.2)
            t = threading.Thread(target=self._session, args=(conn, addr), daemon=True)
            t.start()

    def _sweep_loop(self) -> None:
        while not self._stop.wait(self.config.sweep_interval_s):
            self.requeue_expired()

    def _session(self, conn: socket.socket, addr) -> None:
        worker_id = None
        try:
            hello = read_frame(conn, self._stop)
            if hello.get("type") != MSG_HELLO:
                raise ProtocolError(f"expected HELLO, got {hello.get('type')}")
            if hello.get("version") != PROTOCOL_VERSION:
                raise ProtocolError(f"protocol version mismatch: {hello.get('version')}")
            worker_id = hello["worker_id"]
            datasets = set(hello.get("datasets", []))
            with self._cond:
                record = self._workers.setdefault(worker_id, _WorkerRecord(worker_id=worker_id))
                record.datasets = datasets
                record.last_heartbeat = time.monotonic()
                record.connected = True
                self._known_datasets |= datasets
            conn.sendall(encode_frame({"type": MSG_ACK}))
            log.info("worker %s connected from %s with datasets %s", worker_id, addr, sorted(datasets))
            while not self._stop.is_set():
                msg = read_frame(conn, self._stop)
                self._touch(worker_id)
                kind = msg["type"]
                if kind == MSG_TASK_REQUEST:
                    task = self._await_task(worker_id)
                    if task is None:
                        conn.sendall(encode_frame({"type": MSG_SHUTDOWN}))
                        return
                    conn.sendall(encode_frame({"type": MSG_TASK, "task": task.to_dict()}))
                elif kind == MSG_RESULT:
                    result = TaskResult.from_dict(msg["result"])
                    with self._cond:
                        asg = self._assignments.pop(result.task_id, None)
                        if asg is not None:
                            worker = self._workers.get(asg.worker_id)
                            if worker is not None and worker.current_task_id == result.task_id:
                                worker.current_task_id = None
                        self._finish_locked(result)
                        self._cond.notify_all()
                    conn.sendall(encode_frame({"type": MSG_ACK}))
                elif kind == MSG_HEARTBEAT:
                    pass  # fire-and-forget; the _touch above already refreshed liveness
                else:
                    raise ProtocolError(f"unexpected message type {kind!r}")
        except (ConnectionClosed, ConnectionError, ProtocolError, OSError) as exc:
            log.info("session %s ended: %s", worker_id or addr, exc)
        finally:
            if worker_id is not None:
                with self._cond:
                    record = self._workers.get(worker_id)
                    if record is not None:
                        record.connected = False
            conn.close()

    def _touch(self, worker_id: str) -> None:
        with self._cond:
            record = self._workers.get(worker_id)
            if record is not None:
                record.last_heartbeat = time.monotonic()

    def _await_task(self, worker_id: str) -> Task | None:
        """Long-poll: block until the oldest dispatchable task for this worker exists."""
        with self._cond:
            while not self._stop.is_set():
                record = self._workers[worker_id]
                for i, entry in enumerate(self._queue):
                    if entry.task.dataset_id in record.datasets:
                        self._queue.pop(i)
                        asg = _Assignment(
                            worker_id=worker_id,
                            dispatched_at=time.monotonic(),
                            attempts=entry.attempts,
                            task=entry.task,
                            seq=entry.seq,
                        )
                        self._assignments[entry.task.task_id] = asg
                        record.current_task_id = entry.task.task_id
                        record.last_heartbeat = time.monotonic()
                        return entry.task
                self._cond.wait(timeout=0.2)
            return None


# ---------------------------------------------------------------------------
# Worker
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WorkerConfig:
    broker_host: str
    broker_port: int
    store_path: str
    worker_id: str = ""
    heartbeat_s: float = 5.0
    reconnect_backoff_s: float = 0.5
    reconnect_backoff_max_s: float = 30.0

    def resolved_worker_id(self) -> str:
        return self.worker_id or f"worker-{uuid.uuid4().hex[:8]}"


def discover_datasets(store_path: str | Path) -> list[str]:
    """Dataset ids are subdirectory names of the store containing a corpus meta.json."""
    store = Path(store_path)
    if not store.is_dir():
        return []
    return sorted(p.name for p in store.iterdir() if (p / "meta.json").is_file())


class _DatasetCache:
    def __init__(self, store_path: str | Path):
        self.store_path = Path(store_path)
        self._loaded: dict[str, Dataset] = {}

    def get(self, dataset_id: str) -> Dataset:
        if dataset_id not in self._loaded:
            self._loaded[dataset_id] = load_corpus_dir(self.store_path / dataset_id)
        return self._loaded[dataset_id]


def worker_loop(config: WorkerConfig, stop_event: threading.Event | None = None) -> None:
    """Connect, advertise cached datasets, then request/execute tasks until SHUTDOWN.

    Heartbeats are sent every heartbeat_s while computing; connection loss
    triggers reconnect with exponential backoff (the broker dedupes any result
    delivered twice across reconnects).
    """
    stop = stop_event or threading.Event()
    worker_id = config.resolved_worker_id()
    cache = _DatasetCache(config.store_path)
    datasets = discover_datasets(config.store_path)
    backoff = config.reconnect_backoff_s
    while not stop.is_set():
        try:
            with socket.create_connection((config.broker_host, config.broker_port), timeout=10) as sock:
                sock.settimeout(0.2)
                send_lock = threading.Lock()

                def send(message: dict) -> None:
                    with send_lock:
                        sock.sendall(encode_frame(message))

                send(
                    {
                        "type": MSG_HELLO,
                        "worker_id": worker_id,
                        "datasets": datasets,
                        "version": PROTOCOL_VERSION,
                    }
                )
                ack = read_frame(sock, stop)
                if ack["type"] != MSG_ACK:
                    raise ProtocolError(f"HELLO not acknowledged: {ack['type']}")
                backoff = config.reconnect_backoff_s
                log.info("worker %s connected; datasets %s", worker_id, datasets)
                while not stop.is_set():
                    send({"type": MSG_TASK_REQUEST, "worker_id": worker_id})
                    msg = read_frame(sock, stop)
                    if msg["type"] == MSG_SHUTDOWN:
                        log.info("worker %s received SHUTDOWN", worker_id)
                        return
                    if msg["type"] != MSG_TASK:
                        raise ProtocolError(f"expected TASK, got {msg['type']}")
                    task = Task.from_dict(msg["task"])
                    result = _compute_with_heartbeat(task, cache, worker_id, send, config.heartbeat_s, stop)
                    send({"type": MSG_RESULT, "result": result.to_dict(), "worker_id": worker_id})
                    reply = read_frame(sock, stop)
                    if reply["type"] == MSG_SHUTDOWN:
                        return
                    if reply["type"] != MSG_ACK:
                        raise ProtocolError(f"RESULT not acknowledged: {reply['type']}")
        except (ConnectionClosed, ConnectionError, ProtocolError, OSError) as exc:
            if stop.is_set():
                return
            log.warning("worker %s lost broker (%s); retrying in %.1fs", worker_id, exc, backoff)
            if stop.wait(backoff):
                return
            backoff = min(backoff * 2, config.reconnect_backoff_max_s)


def _compute_with_heartbeat(
    task: Task,
    cache: _DatasetCache,
    worker_id: str,
    send,
    heartbeat_s: float,
    stop: threading.Event,
) -> TaskResult:
    done = threading.Event()

    def beat() -> None:
        while not done.wait(heartbeat_s) and not stop.is_set():
            try:
                send({"type": MSG_HEARTBEAT, "worker_id": worker_id, "task_id": task.task_id})
            except OSError:
                return

    thread = threading.Thread(target=beat, daemon=True)
    thread.start()
    try:
        try:
            dataset = cache.get(task.dataset_id)
        except Exception as exc:
            return TaskResult(
                task_id=task.task_id,
                status="failed",
                error=f"dataset load failed: {exc}",
                worker_id=worker_id,
            )
        return evaluate_task(task, dataset, worker_id=worker_id)
    finally:
        done.set()
        thread.join(timeout=1)
