"""Pairwise-comparison study engine.

A session shows 19 + 1 comparisons over 10 shots: the 19 pairs are the
comparison trace of top-down MergeSort over the shot positions, plus one
attention-check entry whose only correct answer is "control". Shot indices
are permuted per user, and a ranking is rebuilt from the answer graph.

Humans contradict themselves, so the answer graph can contain cycles; the
reconstruction condenses strongly connected components and orders the
resulting DAG topologically, breaking all remaining ties by descending win
count and then ascending shot index. Fed with the comparison trace of a
consistent answerer this recovers the answerer's exact order, because
MergeSort's own comparisons transitively pin every adjacency of the sorted
sequence.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .metrics import Ranking, precision_at_k, ranking_from_scores
from .resample import bin_curve
from .types import ReplayCurve

N_SHOTS = 10
CONTROL = "control"
LEFT = "left"
RIGHT = "right"


class ControlCheckFailedError(ValueError):
    """Session failed the attention check and must be excluded."""


class EmptyStudyError(ValueError):
    """No accepted sessions to aggregate."""


@dataclass
class ComparisonSchedule:
    """The 19 real pairs (in served order) plus the control entry position."""

    pairs: list[tuple[int, int]]
    control_position: int
    n_shots: int = N_SHOTS

    def __post_init__(self):
        for left, right in self.pairs:
            if left == right:
                raise ValueError(f"self-comparison ({left}, {right}) in schedule")
        if not 0 <= self.control_position <= len(self.pairs):
            raise ValueError(f"control_position {self.control_position} out of range")

    @property
    def total_steps(self) -> int:
        return len(self.pairs) + 1

    def step_pair(self, k: int) -> tuple[int, int] | None:
        """The served pair at step k, or None for the control step."""
        if not 0 <= k < self.total_steps:
            raise IndexError(f"step {k} out of range [0, {self.total_steps})")
        if k == self.control_position:
            return None
        return self.pairs[k if k < self.control_position else k - 1]


@dataclass
class SessionAnswers:
    session_id: str
    user_id: str
    video_id: str
    permutation: np.ndarray
    answers: list[str]

    def __post_init__(self):
        self.permutation = np.ascontiguousarray(self.permutation, dtype=np.int64)
        n = self.permutation.shape[0]
        if not np.array_equal(np.sort(self.permutation), np.arange(n)):
            raise ValueError("permutation must be a bijection on the shot indices")
        bad = [a for a in self.answers if a not in (LEFT, RIGHT, CONTROL)]
        if bad:
            raise ValueError(f"invalid answers {bad!r}")

    def passed_control(self, schedule: ComparisonSchedule) -> bool:
        if len(self.answers) != schedule.total_steps:
            return False
        return self.answers[schedule.control_position] == CONTROL


@dataclass
class ReconstructedRanking:
    ranking: Ranking
    had_cycles: bool
    cycle_groups: list[set[int]] = field(default_factory=list)


def mergesort_comparisons(n: int, greater: Callable[[int, int], bool]) -> list[tuple[int, int]]:
    """Comparison pairs executed by top-down MergeSort on items 0..n-1.

    `greater(a, b)` answers "does a outrank b". The split puts ceil(n/2)
    items in the left run. Pairs are recorded in execution order.
    """
    pairs: list[tuple[int, int]] = []

    def sort(items: list[int]) -> list[int]:
        if len(items) <= 1:
            return items
        mid = (len(items) + 1) // 2
        left = sort(items[:mid])
        right = sort(items[mid:])
        merged = []
        i = j = 0
        while i < len(left) and j < len(right):
            pairs.append((left[i], right[j]))
            # ascending merge (worst first): the loser of the comparison
            # is emitted. On the identity sequence the left run exhausts
            # first in every merge, giving the 19-pair count for n=10.
            if greater(left[i], right[j]):
                merged.append(right[j])
                j += 1
            else:
                merged.append(left[i])
                i += 1
        merged.extend(left[i:])
        merged.extend(right[j:])
        return merged

    sort(list(range(n)))
    return pairs


def mergesort_schedule(n: int = N_SHOTS) -> list[tuple[int, int]]:
    """The fixed study schedule: MergeSort's trace on the identity sequence.

    On already-ordered input the trace has exactly 19 pairs for n=10,
    matching the study's comparison count.
    """
    if not 2 <= n <= 64:
        raise ValueError(f"n must be in [2, 64], got {n}")
    # identity sequence: item i outranks item j iff i > j
    return mergesort_comparisons(n, lambda a, b: a > b)


def permute_schedule(
    base: list[tuple[int, int]],
    seed: int,
    n_shots: int = N_SHOTS,
    permutation: np.ndarray | None = None,
) -> tuple[ComparisonSchedule, np.ndarray]:
    """Apply a seeded uniform shot permutation and insert the control entry.

    Returns the served schedule and the permutation pi, where pi[p] is the
    shot shown for base position p. An explicit `permutation` overrides the
    seeded draw (used by tests to force the identity).
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xC0]))
    if permutation is None:
        pi = rng.permutation(n_shots)
    else:
        pi = np.ascontiguousarray(permutation, dtype=np.int64)
        if not np.array_equal(np.sort(pi), np.arange(n_shots)):
            raise ValueError("permutation must be a bijection on 0..n_shots-1")
    control_position = int(rng.integers(0, len(base) + 1))
    served = [(int(pi[i]), int(pi[j])) for i, j in base]
    return ComparisonSchedule(served, control_position, n_shots), pi


def _tarjan_scc(n: int, adjacency: list[set[int]]) -> list[list[int]]:
    """Iterative Tarjan; components are returned with sorted members."""
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    components: list[list[int]] = []
    counter = 0

    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, iter(sorted(adjacency[root])))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on_stack[root] = True
        while work:
            node, it = work[-1]
            advanced = False
            for nxt in it:
                if index[nxt] == -1:
                    index[nxt] = low[nxt] = counter
                    counter += 1
                    stack.append(nxt)
                    on_stack[nxt] = True
                    work.append((nxt, iter(sorted(adjacency[nxt]))))
                    advanced = True
                    break
                if on_stack[nxt]:
                    low[node] = min(low[node], index[nxt])
            if advanced:
                continue
            work.pop()
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[node])
            if low[node] == index[node]:
                comp = []
                while True:
                    member = stack.pop()
                    on_stack[member] = False
                    comp.append(member)
                    if member == node:
                        break
                components.append(sorted(comp))
    return components


def reconstruct_ranking(
    answers: SessionAnswers, schedule: ComparisonSchedule
) -> ReconstructedRanking:
    """Rebuild a best-first shot ranking from one session's answers.

    Every real left/right answer adds a winner->loser edge between actual
    shots. Strongly connected components (contradiction cycles) are
    condensed; the condensation is ordered topologically, and all remaining
    freedom — between unconstrained components and inside each component —
    is resolved by descending win count, then ascending shot index.
    """
    if not answers.passed_control(schedule):
        raise ControlCheckFailedError(
            f"session {answers.session_id} failed the attention check"
        )
    n = schedule.n_shots
    wins = np.zeros(n, dtype=np.int64)
    adjacency: list[set[int]] = [set() for _ in range(n)]
    for k in range(schedule.total_steps):
        pair = schedule.step_pair(k)
        if pair is None:
            continue
        choice = answers.answers[k]
        if choice == CONTROL:
            continue  # abstention on a real pair adds no edge
        left, right = pair
        winner, loser = (left, right) if choice == LEFT else (right, left)
        if loser not in adjacency[winner]:
            adjacency[winner].add(loser)
        wins[winner] += 1

    components = _tarjan_scc(n, adjacency)
    comp_of = np.empty(n, dtype=np.int64)
    for c, members in enumerate(components):
        for m in members:
            comp_of[m] = c

    n_comp = len(components)
    comp_edges: list[set[int]] = [set() for _ in range(n_comp)]
    indegree = [0] * n_comp
    for u in range(n):
        for v in adjacency[u]:
            cu, cv = comp_of[u], comp_of[v]
            if cu != cv and cv not in comp_edges[cu]:
                comp_edges[cu].add(cv)
                indegree[cv] += 1

    def comp_key(c: int) -> tuple[int, int]:
        members = components[c]
        return (-int(wins[members].sum()), members[0])

    heap = [(comp_key(c), c) for c in range(n_comp) if indegree[c] == 0]
    heapq.heapify(heap)
    order: list[int] = []
    while heap:
        _, c = heapq.heappop(heap)
        members = sorted(components[c], key=lambda s: (-int(wins[s]), s))
        order.extend(members)
        for nxt in comp_edges[c]:
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                heapq.heappush(heap, (comp_key(nxt), nxt))

    cycle_groups = [set(m) for m in components if len(m) > 1]
    return ReconstructedRanking(
        ranking=Ranking(np.asarray(order)),
        had_cycles=bool(cycle_groups),
        cycle_groups=cycle_groups,
    )


def consistent_session(
    shot_scores: np.ndarray,
    seed: int,
    session_id: str = "sim",
    user_id: str = "sim",
    video_id: str = "sim",
    flip_probability: float = 0.0,
    adaptive: bool = True,
    permutation: np.ndarray | None = None,
) -> tuple[SessionAnswers, ComparisonSchedule]:
    """Simulate one session answered from a shot-score vector.

    With adaptive=True the comparisons are MergeSort's own trace against
    the simulated answers (the shot indices still pass through the per-user
    permutation), which is the regime in which reconstruction is exact for
    noise-free answers. With adaptive=False the fixed study schedule is
    served instead — what human participants see.
    """
    shot_scores = np.asarray(shot_scores, dtype=np.float64)
    n = shot_scores.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5E55]))
    if permutation is None:
        pi = rng.permutation(n)
    else:
        pi = np.ascontiguousarray(permutation, dtype=np.int64)

    def shot_greater(a: int, b: int) -> bool:
        truth = (shot_scores[a], -a) > (shot_scores[b], -b)
        if flip_probability > 0 and rng.random() < flip_probability:
            return not truth
        return truth

    decisions: list[bool] = []

    def position_greater(p: int, q: int) -> bool:
        outcome = shot_greater(int(pi[p]), int(pi[q]))
        decisions.append(outcome)
        return outcome

    if adaptive:
        base = mergesort_comparisons(n, position_greater)
    else:
        base = mergesort_schedule(n)
        decisions = [shot_greater(int(pi[i]), int(pi[j])) for i, j in base]
    schedule, pi = permute_schedule(base, seed=int(rng.integers(2**32)), n_shots=n, permutation=pi)

    answers: list[str] = []
    pair_idx = 0
    for k in range(schedule.total_steps):
        if schedule.step_pair(k) is None:
            answers.append(CONTROL)
        else:
            answers.append(LEFT if decisions[pair_idx] else RIGHT)
            pair_idx += 1
    session = SessionAnswers(session_id, user_id, video_id, pi, answers)
    return session, schedule


def random_session(
    seed: int, n: int = N_SHOTS, session_id: str = "sim", user_id: str = "sim", video_id: str = "sim"
) -> tuple[SessionAnswers, ComparisonSchedule]:
    """A session answered uniformly at random on the fixed study schedule."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0xA11]))
    base = mergesort_schedule(n)
    schedule, pi = permute_schedule(base, seed=int(rng.integers(2**32)), n_shots=n)
    answers = []
    for k in range(schedule.total_steps):
        if schedule.step_pair(k) is None:
            answers.append(CONTROL)
        else:
            answers.append(LEFT if rng.random() < 0.5 else RIGHT)
    return SessionAnswers(session_id, user_id, video_id, pi, answers), schedule


def evaluate_users(
    sessions: list[tuple[SessionAnswers, ComparisonSchedule]],
    gt_curve: ReplayCurve,
    ks: tuple[int, ...] = (1, 3, 5),
) -> dict:
    """precision@K of each accepted session's ranking vs the 10-bin GT ranking."""
    gt_ranking = ranking_from_scores(bin_curve(gt_curve, N_SHOTS).scores)
    per_user = []
    for answers, schedule in sessions:
        try:
            recon = reconstruct_ranking(answers, schedule)
        except ControlCheckFailedError:
            continue
        entry = {
            "session_id": answers.session_id,
            "user_id": answers.user_id,
            "had_cycles": recon.had_cycles,
            "precision": {k: precision_at_k(recon.ranking, gt_ranking, k) for k in ks},
        }
        per_user.append(entry)
    if not per_user:
        raise EmptyStudyError("no accepted sessions to evaluate")
    summary = {}
    for k in ks:
        vals = np.array([u["precision"][k] for u in per_user])
        summary[k] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return {"per_user": per_user, "summary": summary, "n_accepted": len(per_user)}
