"""Deterministic event-driven simulation of FCFS server clusters.

Event ordering. The calendar is totally ordered by (time, sequence). All task
arrivals are known up front and occupy sequence numbers 0..T-1 in arrival
order; dynamic events (service completions, stage transfers) take increasing
sequence numbers from T upward as they are scheduled. Consequences:

  * at equal timestamps, an arrival is handled before any completion or
    transfer scheduled during the run;
  * a transfer scheduled at the same instant as events already in the
    calendar fires after them;
  * two runs with the same inputs pop events in the same order, bit for bit.

Work bookkeeping. Each server tracks the absolute instant `clear_time` at
which its backlog empties. Enqueueing a requirement r advances it by
r / speed; unfinished work at time t is max(0, clear_time - t) * speed, in
size units. Because busy servers only ever extend clear_time by the same
float additions that determine completion times, this stays bit-identical to
summing remaining requirements. Idleness is tracked explicitly via the task
in service: `clear_time <= now` is not a safe idle test at the exact instant
a completion event is still pending.

Two-stage operation. With a two-stage policy a task of size s first occupies
a stage-0 server for min(s, theta) (its precomputed stage requirement). If
s > theta (strictly), a transfer event fires at the truncation instant; the
partial work is discarded and the task restarts from scratch, requiring the
full s, on a stage-1 server chosen by an independent instance of the same
policy kind. Tasks with s == theta complete at stage 0.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from heapq import heappop, heappush
from typing import Iterator

import numpy as np

from .policies import PolicySpec, StageView, build_policy
from .randomness import policy_rng
from .workload import ClusterConfig, Workload

# Event kinds. A calendar entry is the tuple
#   (time, sequence, kind, server, task)
# with `server` the global server index (-1 when not yet chosen) and `task`
# the flat task ordinal. Arrivals are implicit: they live in the workload's
# sorted arrival array and conceptually occupy sequences 0..T-1.
TASK_ARRIVAL = 0
SERVICE_COMPLETION = 1
STAGE_TRANSFER = 2


class ServerState:
    """One FCFS server: the task in service plus a queue of waiting tasks."""

    __slots__ = (
        "server_id",
        "speed",
        "fcfs_queue",
        "clear_time",
        "in_service_task",
        "in_service_req",
        "in_service_done",
        "busy_since",
        "busy_integral",
        "served_work",
    )

    def __init__(self, server_id: int, speed: float) -> None:
        self.server_id = server_id
        self.speed = speed
        self.fcfs_queue: deque = deque()  # (task ordinal, requirement)
        self.clear_time = 0.0
        self.in_service_task = -1
        self.in_service_req = 0.0
        self.in_service_done = 0.0
        self.busy_since = 0.0
        self.busy_integral = 0.0
        self.served_work = 0.0

    def unfinished_work(self, now: float) -> float:
        gap = self.clear_time - now
        return gap * self.speed if gap > 0.0 else 0.0


@dataclass(frozen=True)
class TaskInstance:
    """Fully resolved life of one task, for logs and debugging."""

    job_id: int
    task_index: int
    size: float
    arrival_time: float
    stage1_server: int
    stage2_server: int  # -1 unless the task transferred
    transfer_time: float  # nan unless the task transferred
    completion_time: float  # nan if unfinished at the horizon
    completed_stage: int  # 1 or 2; 0 if unfinished


class CompletionLog:
    """Raw per-task outcome of one run plus per-server counters.

    Arrays are indexed by flat task ordinal (the dispatch order of
    `Workload.task_arrays`). Unfinished tasks (horizon-stopped runs) carry
    NaN completion times and stage 0.
    """

    def __init__(
        self,
        workload: Workload,
        config: ClusterConfig,
        policy: PolicySpec,
        seed: int,
        completion: np.ndarray,
        completed_stage: np.ndarray,
        stage1_server: np.ndarray,
        stage2_server: np.ndarray,
        transfer_time: np.ndarray,
        served_work: np.ndarray,
        busy_integral: np.ndarray,
        end_time: float,
        transfers: int,
    ) -> None:
        self.workload = workload
        self.config = config
        self.policy = policy
        self.seed = seed
        self.completion = completion
        self.completed_stage = completed_stage
        self.stage1_server = stage1_server
        self.stage2_server = stage2_server
        self.transfer_time = transfer_time
        self.served_work = served_work
        self.busy_integral = busy_integral
        self.end_time = end_time
        self.transfers = transfers

    @property
    def task_count(self) -> int:
        return len(self.completion)

    @property
    def unfinished_tasks(self) -> int:
        return int(np.isnan(self.completion).sum())

    def job_completions(self) -> np.ndarray:
        """Completion time of each job: the max over its tasks (NaN if any
        task is unfinished)."""
        offsets = self.workload.task_offsets
        return np.maximum.reduceat(self.completion, offsets[:-1])

    def job_responses(self) -> np.ndarray:
        """Response time of each job in arrival order (NaN if unfinished)."""
        return self.job_completions() - self.workload.arrivals

    def iter_task_instances(self) -> Iterator[TaskInstance]:
        wl = self.workload
        task_arrival, task_size, task_job = wl.task_arrays()
        for t in range(self.task_count):
            j = int(task_job[t])
            yield TaskInstance(
                job_id=int(wl.job_ids[j]),
                task_index=int(wl.task_indices[t]),
                size=float(task_size[t]),
                arrival_time=float(task_arrival[t]),
                stage1_server=int(self.stage1_server[t]),
                stage2_server=int(self.stage2_server[t]),
                transfer_time=float(self.transfer_time[t]),
                completion_time=float(self.completion[t]),
                completed_stage=int(self.completed_stage[t]),
            )

    def write_task_log(self, path) -> None:
        """Write one CSV row per task (repr floats, stable field order)."""
        with open(path, "w", newline="") as fh:
            fh.write(
                "job_id,task_index,arrival_time,size,stage1_server,"
                "stage2_server,transfer_time,completion_time,completed_stage\n"
            )
            for ti in self.iter_task_instances():
                fh.write(
                    f"{ti.job_id},{ti.task_index},{ti.arrival_time!r},{ti.size!r},"
                    f"{ti.stage1_server},{ti.stage2_server},{ti.transfer_time!r},"
                    f"{ti.completion_time!r},{ti.completed_stage}\n"
                )


def _check_bookkeeping(servers, now: float, pol1, n1: int) -> None:
    """Debug invariants, re-derived by brute force after every event:

      * tracked backlog (from clear_time) equals remaining in-service work
        plus the sum of queued requirements;
      * an idle server has an empty queue and zero tracked work;
      * a join-idle-queue bit table, if present, mirrors actual idleness.
    """
    for s in servers:
        if s.in_service_task >= 0:
            left = s.in_service_done - now
            brute = (left if left > 0.0 else 0.0) * s.speed
            brute += sum(r for (_t, r) in s.fcfs_queue)
        else:
            if s.fcfs_queue:
                raise AssertionError(f"server {s.server_id} idle with queued tasks")
            brute = 0.0
        tracked = s.unfinished_work(now)
        if abs(brute - tracked) > 1e-9 * max(1.0, abs(brute)):
            raise AssertionError(
                f"server {s.server_id} backlog drift: tracked {tracked!r} vs "
                f"brute-force {brute!r} at t={now!r}"
            )
    idle_table = getattr(pol1, "_pos", None)
    if idle_table is not None:
        for local in range(n1):
            marked_idle = idle_table[local] >= 0
            really_idle = servers[local].in_service_task < 0
            if marked_idle != really_idle:
                raise AssertionError(
                    f"idle table out of sync at server {local}: "
                    f"marked {marked_idle}, actual {really_idle}"
                )


def run(
    workload: Workload,
    config: ClusterConfig,
    policy: PolicySpec,
    seed: int,
    *,
    max_jobs: int | None = None,
    horizon: float | None = None,
    debug_invariants: bool = False,
) -> CompletionLog:
    """Simulate one workload on one cluster under one policy.

    Stops when the calendar drains (after `max_jobs` jobs if given, else the
    whole workload) or, if `horizon` is given, before the first event past
    it; tasks still in the system then stay unfinished. Deterministic in
    (workload, config, policy, seed): reruns are bit-identical.

    `debug_invariants` re-derives every server's backlog by brute force after
    each event and cross-checks idle bookkeeping (slow; for tests).
    """
    policy.validate_for(config.n)
    if max_jobs is not None:
        workload = workload.truncated(max_jobs)
    task_arrival, task_size, _task_job = workload.task_arrays()
    arr_l = task_arrival.tolist()
    size_l = task_size.tolist()
    T = len(arr_l)

    n = config.n
    speed = config.mu
    two_stage = policy.two_stage
    n1 = policy.n1 if two_stage else n
    theta = policy.theta if two_stage else None
    if theta is not None and math.isinf(theta):
        theta = None  # stage 1 unreachable; skip the per-arrival comparison

    servers = [ServerState(j, speed) for j in range(n)]
    pol1 = build_policy(policy.kind, policy.thresholds)
    pol1.bind(StageView(servers, 0, n1, speed), policy_rng(seed, 0))
    pol2 = None
    if two_stage:
        pol2 = build_policy(policy.kind, None)
        pol2.bind(StageView(servers, n1, n - n1, speed), policy_rng(seed, 1))

    completion = [math.nan] * T
    completed_stage = [0] * T
    stage1_server = [-1] * T
    stage2_server = [-1] * T
    transfer_time = [math.nan] * T
    transfers = 0

    heap: list[tuple] = []  # (time, sequence, kind, global server, task)
    seq = T  # arrivals hold sequences 0..T-1; dynamic events follow
    i = 0  # next arrival
    now = 0.0
    pol1_needs_size = pol1.needs_size

    while True:
        take_arrival = i < T and (not heap or arr_l[i] <= heap[0][0])
        if take_arrival:
            now = arr_l[i]
            if horizon is not None and now > horizon:
                break
            task = i
            i += 1
            size = size_l[task]
            req = theta if (theta is not None and size > theta) else size
            local = pol1.choose(now, size if pol1_needs_size else None)
            if not 0 <= local < n1:
                raise RuntimeError(
                    f"policy chose server {local} outside stage of size {n1}"
                )
            stage1_server[task] = local
            srv = servers[local]
            if srv.in_service_task < 0:
                srv.in_service_task = task
                srv.in_service_req = req
                done = now + req / speed
                srv.in_service_done = done
                srv.clear_time = done
                srv.busy_since = now
                seq += 1
                heappush(heap, (done, seq, SERVICE_COMPLETION, local, task))
            else:
                srv.clear_time += req / speed
                srv.fcfs_queue.append((task, req))
            pol1.on_assign(local, req)
        elif heap:
            ev = heappop(heap)
            now = ev[0]
            if horizon is not None and now > horizon:
                break
            kind = ev[2]
            if kind == SERVICE_COMPLETION:
                g = ev[3]
                srv = servers[g]
                task = srv.in_service_task
                srv.served_work += srv.in_service_req
                q = srv.fcfs_queue
                if q:
                    task2, req2 = q.popleft()
                    srv.in_service_task = task2
                    srv.in_service_req = req2
                    done = now + req2 / speed
                    srv.in_service_done = done
                    seq += 1
                    heappush(heap, (done, seq, SERVICE_COMPLETION, g, task2))
                else:
                    srv.in_service_task = -1
                    srv.busy_integral += now - srv.busy_since
                    if g >= n1:
                        pol2.on_server_idle(g - n1)
                    else:
                        pol1.on_server_idle(g)
                if theta is not None and g < n1 and size_l[task] > theta:
                    transfer_time[task] = now
                    seq += 1
                    heappush(heap, (now, seq, STAGE_TRANSFER, -1, task))
                else:
                    completion[task] = now
                    completed_stage[task] = 2 if (two_stage and g >= n1) else 1
            else:  # STAGE_TRANSFER
                task = ev[4]
                size = size_l[task]
                transfers += 1
                local = pol2.choose(now, size if pol2.needs_size else None)
                if not 0 <= local < n - n1:
                    raise RuntimeError(
                        f"policy chose server {local} outside stage of size {n - n1}"
                    )
                g = n1 + local
                stage2_server[task] = g
                srv = servers[g]
                if srv.in_service_task < 0:
                    srv.in_service_task = task
                    srv.in_service_req = size
                    done = now + size / speed
                    srv.in_service_done = done
                    srv.clear_time = done
                    srv.busy_since = now
                    seq += 1
                    heappush(heap, (done, seq, SERVICE_COMPLETION, g, task))
                else:
                    srv.clear_time += size / speed
                    srv.fcfs_queue.append((task, size))
                pol2.on_assign(local, size)
        else:
            break
        if debug_invariants:
            _check_bookkeeping(servers, now, pol1, n1)

    for s in servers:
        if s.in_service_task >= 0:
            s.busy_integral += now - s.busy_since

    return CompletionLog(
        workload=workload,
        config=config,
        policy=policy,
        seed=seed,
        completion=np.asarray(completion, dtype=np.float64),
        completed_stage=np.asarray(completed_stage, dtype=np.int8),
        stage1_server=np.asarray(stage1_server, dtype=np.int32),
        stage2_server=np.asarray(stage2_server, dtype=np.int32),
        transfer_time=np.asarray(transfer_time, dtype=np.float64),
        served_work=np.asarray([s.served_work for s in servers], dtype=np.float64),
        busy_integral=np.asarray([s.busy_integral for s in servers], dtype=np.float64),
        end_time=now,
        transfers=transfers,
    )
