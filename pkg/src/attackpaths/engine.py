"""Worker scheduling: one process per worker, each with its own LIFO stack.

Worker 0 starts with the seed path.  Whenever a worker's stack reaches the
redistribution threshold and some other worker sits idle, the bottom half of
the stack moves to the lowest-numbered idle worker.  Worker 0 ends the run
once every worker is idle, every stack is empty and no transfer is in flight;
the status table, the in-flight counter and all transfer bookkeeping live
behind one coordination lock so a momentarily-empty worker with a transfer on
the way can never be mistaken for done.

Each worker appends its finalized paths to its own file set and, after the
traversal phase, sorts its results and writes its sort files.  The parent
process then merges the final-path and index files and writes the run
summary.
"""

from __future__ import annotations

import multiprocessing
import os
import queue
import sys
import time
import traceback
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import pathstore
from .model import Network
from .pathstore import MergedStore, PathWriter, compute_metrics
from .traversal import (
    ActionExecutor,
    ActionMode,
    IdSource,
    RunSummary,
    StepBudget,
    StopReason,
    SummaryAccumulator,
    TraversalConfig,
    expand_path,
    new_seed_path,
    single_threaded_search,
)

_WORKING = 0
_IDLE = 1

PROGRESS_EVERY = 10000


class EngineError(Exception):
    pass


def plan_workers(processor_count: int) -> int:
    """Default worker count: one less than the processor count, minimum 1."""
    return max(1, processor_count - 1)


@dataclass(frozen=True)
class EngineConfig:
    traversal: TraversalConfig
    worker_count: Optional[int] = None
    redistribution_threshold: int = 10
    action_mode: ActionMode = ActionMode.DRY_RUN

    def __post_init__(self):
        if self.redistribution_threshold < 2:
            raise ValueError("redistribution_threshold must be at least 2")
        if self.worker_count is not None and self.worker_count < 1:
            raise ValueError("worker_count must be at least 1")

    def resolved_workers(self) -> int:
        if self.worker_count is not None:
            return self.worker_count
        return plan_workers(os.cpu_count() or 1)


class SharedState:
    """Coordination primitives shared by all workers of one run."""

    def __init__(self, ctx, worker_count: int):
        self.worker_count = worker_count
        self.coord_lock = ctx.Lock()
        self.status = ctx.Array("i", [_WORKING] * worker_count, lock=False)
        self.inflight = ctx.Value("i", 0, lock=False)
        self.terminated = ctx.Value("i", 0, lock=False)
        self.stop = ctx.Value("i", 0, lock=False)
        self.stop_reason = ctx.Value("i", 0, lock=False)
        self.finals = ctx.Value("i", 0)
        self.inboxes = [ctx.Queue() for _ in range(worker_count)]
        self.results = ctx.Queue()


def detect_termination(shared: SharedState) -> bool:
    """Worker 0's end-of-run check, double-checked under the coordination
    lock: true only when every worker is idle and no transfer is pending."""
    with shared.coord_lock:
        if all(shared.status[i] == _IDLE for i in range(shared.worker_count)) and (
            shared.inflight.value == 0
        ):
            shared.terminated.value = 1
            return True
    return False


def redistribute(stack: list, shared: SharedState, worker: int, threshold: int) -> Optional[int]:
    """Move the bottom half of this worker's stack to the lowest-numbered
    idle worker, if the stack has reached the threshold and someone is idle.
    Returns the receiving worker, or None when no transfer happened."""
    if len(stack) < threshold:
        return None
    w = shared.worker_count
    if not any(shared.status[i] == _IDLE for i in range(w)):
        return None
    with shared.coord_lock:
        target = next((i for i in range(w) if shared.status[i] == _IDLE), None)
        if target is None:
            return None
        shared.status[target] = _WORKING
        shared.inflight.value += 1
    half = len(stack) // 2
    batch = stack[:half]
    del stack[:half]
    shared.inboxes[target].put(batch)
    return target


def _note_final(shared: SharedState, max_paths: Optional[int]) -> int:
    with shared.finals.get_lock():
        shared.finals.value += 1
        count = shared.finals.value
        if max_paths is not None and count >= max_paths and shared.stop.value == 0:
            shared.stop.value = 1
            shared.stop_reason.value = 1
    return count


def _note_time_limit(shared: SharedState) -> None:
    with shared.finals.get_lock():
        if shared.stop.value == 0:
            shared.stop.value = 1
            shared.stop_reason.value = 2


def _drain_inbox(shared: SharedState, worker: int) -> None:
    while True:
        try:
            shared.inboxes[worker].get_nowait()
        except queue.Empty:
            return
        else:
            with shared.coord_lock:
                shared.inflight.value -= 1


def _worker_main(
    worker: int,
    net: Network,
    config: EngineConfig,
    out_dir: str,
    shared: SharedState,
    seed,
    deadline: Optional[float],
    sort_and_merge: bool,
    progress: bool,
) -> None:
    tcfg = config.traversal
    w = shared.worker_count
    path_ids = IdSource(w if worker == 0 else worker, w)
    conn_ids = IdSource(worker, w)
    budget = StepBudget(tcfg.max_steps)
    executor = ActionExecutor(config.action_mode)
    writer = PathWriter(out_dir, worker)
    metrics: list[tuple] = []
    acc = SummaryAccumulator()
    stack = [seed] if seed is not None else []
    error = None

    try:
        while True:
            if shared.stop.value or shared.terminated.value:
                break
            if deadline is not None and time.perf_counter() > deadline:
                _note_time_limit(shared)
                break
            redistribute(stack, shared, worker, config.redistribution_threshold)
            if not stack:
                batch = _idle_wait(shared, worker)
                if batch is None:
                    break
                stack = batch
                continue
            path = stack.pop()
            in_progress, finals = expand_path(
                path, net, tcfg, path_ids, conn_ids, executor, budget
            )
            stack.extend(in_progress)
            for f in finals:
                mv = compute_metrics(f, net)
                pos = writer.append(f)
                metrics.append((mv, pos))
                acc.add(f)
                count = _note_final(shared, tcfg.stop_max_final_paths)
                if progress and count % PROGRESS_EVERY == 0:
                    print(f"[paths] {count} final paths", file=sys.stderr, flush=True)
    except BaseException:
        error = traceback.format_exc()
        # Wind the whole run down; the parent raises once messages arrive.
        with shared.finals.get_lock():
            if shared.stop.value == 0:
                shared.stop.value = 1
    finally:
        writer.close()
        done_at = time.perf_counter()
        if sort_and_merge and error is None:
            pathstore.write_all_sort_files(out_dir, worker, metrics)
        sort_done_at = time.perf_counter()
        _drain_inbox(shared, worker)
        for q in shared.inboxes:
            q.cancel_join_thread()
        shared.results.put(
            {
                "worker": worker,
                "finals": acc.finals,
                "connections": acc.connections,
                "rules": acc.rules,
                "longest": acc.longest,
                "shortest": acc.shortest,
                "done_at": done_at,
                "sort_done_at": sort_done_at,
                "actions_run": len(executor.records),
                "action_failures": sum(
                    1 for r in executor.records if r.status.startswith("failed")
                ),
                "error": error,
            }
        )
    if error is not None:
        sys.exit(1)


def _idle_wait(shared: SharedState, worker: int):
    """Mark this worker idle and wait for a transfer.  Returns the received
    batch, or None when the run is over."""
    with shared.coord_lock:
        shared.status[worker] = _IDLE
    while True:
        if shared.stop.value or shared.terminated.value:
            return None
        if worker == 0 and detect_termination(shared):
            return None
        try:
            batch = shared.inboxes[worker].get(timeout=0.005)
        except queue.Empty:
            continue
        with shared.coord_lock:
            shared.inflight.value -= 1
        return batch


def _cleanup_worker_files(out_dir, workers: int) -> None:
    titles = [pathstore.FINAL_PATHS_TITLE, pathstore.INDEX_TITLE] + [k.title for k in pathstore.SortKey]
    for w in range(workers):
        for title in titles:
            pathstore.worker_file(out_dir, title, w).unlink(missing_ok=True)


def _prepare_out_dir(out_dir) -> Path:
    p = Path(out_dir)
    try:
        p.mkdir(parents=True, exist_ok=True)
        probe = p / ".write-probe"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as e:
        raise EngineError(f"output directory {p} is not writable: {e}") from None
    return p


def run_multi(
    net: Network,
    config: EngineConfig,
    out_dir,
    sort_and_merge: bool = True,
    progress: bool = False,
) -> tuple[Optional[MergedStore], RunSummary]:
    """Run the multi-worker search, returning the merged store (None when
    merging is disabled) and the aggregated run summary."""
    out_path = _prepare_out_dir(out_dir)
    workers = config.resolved_workers()
    ctx = multiprocessing.get_context("fork")
    shared = SharedState(ctx, workers)
    start = time.perf_counter()
    tcfg = config.traversal
    deadline = start + tcfg.stop_wall_clock if tcfg.stop_wall_clock else None
    seed = new_seed_path(net, 0, start)

    procs = []
    for w in range(workers):
        procs.append(
            ctx.Process(
                target=_worker_main,
                args=(
                    w, net, config, str(out_path), shared,
                    seed if w == 0 else None, deadline, sort_and_merge, progress,
                ),
            )
        )
    for p in procs:
        p.start()

    messages = []
    failure = None
    while len(messages) < workers:
        try:
            messages.append(shared.results.get(timeout=0.1))
        except queue.Empty:
            dead = [p for p in procs if p.exitcode not in (None, 0)]
            if dead:
                # A worker died without reporting; stop the others and fail.
                failure = f"worker exited with code {dead[0].exitcode}"
                with shared.finals.get_lock():
                    if shared.stop.value == 0:
                        shared.stop.value = 1
                deadline_join = time.perf_counter() + 5.0
                while time.perf_counter() < deadline_join:
                    try:
                        messages.append(shared.results.get(timeout=0.1))
                    except queue.Empty:
                        if all(p.exitcode is not None for p in procs):
                            break
                break
    for p in procs:
        p.join(timeout=30.0)
        if p.is_alive():
            p.terminate()
            p.join()
            failure = failure or "worker failed to exit"

    errors = [m["error"] for m in messages if m.get("error")]
    if errors:
        failure = errors[0]
    if failure is None and any(p.exitcode != 0 for p in procs):
        failure = f"worker exit codes {[p.exitcode for p in procs]}"
    if failure is not None:
        _cleanup_worker_files(out_path, workers)
        raise EngineError(f"run failed: {failure}")

    traversal_end = max(m["done_at"] for m in messages)
    sort_end = max(m["sort_done_at"] for m in messages)

    acc = SummaryAccumulator()
    for m in sorted(messages, key=lambda m: m["worker"]):
        part = SummaryAccumulator()
        part.finals = m["finals"]
        part.connections = m["connections"]
        part.rules = m["rules"]
        part.longest = tuple(m["longest"])
        part.shortest = tuple(m["shortest"])
        acc.merge(part)

    reasons = {0: StopReason.EXHAUSTED, 1: StopReason.MAX_PATHS, 2: StopReason.TIME_LIMIT}
    summary = RunSummary(
        total_final_paths=acc.finals,
        total_connections=acc.connections,
        total_rules_triggered=acc.rules,
        longest_chain=acc.longest,
        shortest_chain=acc.shortest,
        elapsed_seconds=traversal_end - start,
        sort_merge_seconds=sort_end - traversal_end,
        stop_reason=reasons[shared.stop_reason.value],
        actions_run=sum(m["actions_run"] for m in messages),
        action_failures=sum(m["action_failures"] for m in messages),
    )

    store = None
    if sort_and_merge:
        merge_start = time.perf_counter()
        pathstore.merge_final_and_index(out_path, list(range(workers)))
        summary.sort_merge_seconds += time.perf_counter() - merge_start
        store = MergedStore(out_path)
    pathstore.write_run_summary(out_path, summary)
    return store, summary


def run_single(
    net: Network,
    config: TraversalConfig,
    out_dir,
    sort_and_merge: bool = True,
    executor: Optional[ActionExecutor] = None,
    progress: bool = False,
) -> tuple[Optional[MergedStore], RunSummary]:
    """Run the single-threaded search, writing the same file set as a
    one-worker run (worker 0) followed by a merge."""
    out_path = _prepare_out_dir(out_dir)
    writer = PathWriter(out_path, 0)
    metrics: list[tuple] = []

    def sink(path):
        mv = compute_metrics(path, net)
        pos = writer.append(path)
        metrics.append((mv, pos))

    report = None
    if progress:
        report = lambda n: print(f"[paths] {n} final paths", file=sys.stderr, flush=True)
    try:
        summary = single_threaded_search(net, config, sink, executor, report)
    finally:
        writer.close()

    store = None
    if sort_and_merge:
        t0 = time.perf_counter()
        pathstore.write_all_sort_files(out_path, 0, metrics)
        pathstore.merge_final_and_index(out_path, [0])
        summary.sort_merge_seconds = time.perf_counter() - t0
        store = MergedStore(out_path)
    pathstore.write_run_summary(out_path, summary)
    return store, summary
