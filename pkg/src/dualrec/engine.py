"""The dual-population optimisation loop.

Per generation: update epsilon, evolve the exploitation population under CDP
at that epsilon, evolve the exploration population under plain Pareto
dominance, exchange elites, and every ``coordination_interval`` generations
ask the coordinator for a new split and resize both populations.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .constraints import EpsilonSchedule, calibrate_epsilon0, epsilon_at
from .coordinator import ALPHA_MAX, ALPHA_MIN, Coordinator, OptimizationSummary, RuleBasedCoordinator
from .domain import Catalog, ConstraintThresholds, ObjectiveVector, Solution, UserContext
from .evolution import CDP, INF, PARETO, crowding_distance, de_pbest1, dominance_matrix, mutate, rank_population
from .evolution import nondominated_sort, objective_matrix
from .metrics import front_hypervolume
from .objectives import Problem

log = logging.getLogger(__name__)

MODES = ("dual", "single-population", "no-constraints", "no-llm")
MIN_POPULATION = 4

# one independent RNG stream per component; transfer currently draws nothing
# (elites are picked deterministically) but keeps its id so the others stay put
STREAMS = {"init": 0, "variation-exploit": 1, "variation-explore": 2, "transfer": 3, "resize": 4}

TRACE_COLUMNS = [
    "gen", "epsilon", "alpha", "hv_exploit", "hv_explore", "feasibility_rate",
    "f1_best", "f2_best", "f3_best", "rationale",
]


@dataclass(frozen=True)
class EngineConfig:
    population_total: int = 100
    t_max: int = 50
    k: int = 10
    coordination_interval: int = 10
    alpha_initial: float = 0.7
    transfer_fraction: float = 0.15
    gamma: float = 0.8
    rng_seed: int = 0
    mode: str = "dual"
    mutation_rate: float = 0.1
    explore_mutation_factor: float = 2.0
    F: float = 0.5
    CR: float = 0.9
    p_best: float = 0.1
    epsilon_percentile: float = 80.0
    overlap_weight: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.population_total < 2 * MIN_POPULATION:
            raise ValueError(f"population_total must be at least {2 * MIN_POPULATION}")
        if not 1 <= self.coordination_interval <= self.t_max:
            raise ValueError("coordination_interval must lie in [1, t_max]")
        if not 0.0 < self.transfer_fraction <= 0.5:
            raise ValueError("transfer_fraction must lie in (0, 0.5]")
        if not ALPHA_MIN <= self.alpha_initial <= ALPHA_MAX:
            raise ValueError(f"alpha_initial must lie in [{ALPHA_MIN}, {ALPHA_MAX}]")

    @property
    def dual(self) -> bool:
        return self.mode != "single-population"

    @property
    def constrained(self) -> bool:
        return self.mode != "no-constraints"

    @property
    def transfer_size(self) -> int:
        return math.ceil(self.transfer_fraction * self.population_total - 1e-9)


@dataclass(frozen=True)
class GenerationTrace:
    generation: int
    epsilon: float
    alpha: float
    hv_exploit: float
    hv_explore: float
    feasibility_rate: float
    best_objectives: ObjectiveVector
    coordinator_rationale: str | None = None
    n_exploit: int = 0
    n_explore: int = 0
    coordinator_source: str | None = field(default=None, compare=False)  # provenance only
    warnings: tuple[str, ...] = ()

    def row(self) -> list:
        b = self.best_objectives
        return [
            self.generation, self.epsilon, self.alpha, self.hv_exploit, self.hv_explore,
            self.feasibility_rate, b.relevance, b.diversity, b.novelty, self.coordinator_rationale or "",
        ]


@dataclass
class OptimizationResult:
    success: bool
    pareto_set: list[Solution]
    l_star: Solution | None
    trace: list[GenerationTrace]
    final_exploit: list[Solution]
    final_explore: list[Solution]
    transferred: list[Solution]
    epsilon0: float
    evaluations: int
    fallback_solution: Solution | None = None
    diagnostic: str = ""
    config: EngineConfig | None = field(default=None, repr=False)


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, STREAMS[name]])


def _genome_set(members: Sequence[Solution]) -> set[bytes]:
    return {s.genome_key() for s in members}


def truncate(members: Sequence[Solution], size: int, comparator) -> list[Solution]:
    """Keep the ``size`` best members by (front rank, crowding)."""
    if size >= len(members):
        return list(members)
    order = rank_population(members, comparator).order
    return [members[i] for i in order[:size]]


def knowledge_transfer(
    p_exploit: Sequence[Solution],
    p_explore: Sequence[Solution],
    K: int,
    exploit_comparator=CDP(0.0),
    explore_comparator=PARETO,
) -> tuple[list[Solution], list[Solution], list[Solution]]:
    """Copy the K most isolated members of the joint Pareto front into both populations.

    Each population loses as many of its worst members (under its own
    comparator) as it gains new genomes.  Returns the two populations and
    the elites.
    """
    if K >= len(p_exploit) or K >= len(p_explore):
        raise ValueError(f"transfer size {K} must be smaller than both populations")
    if K <= 0:
        return list(p_exploit), list(p_explore), []
    combined = list(p_exploit) + list(p_explore)
    front = nondominated_sort(combined, PARETO)[0]
    crowd = crowding_distance([combined[i].objectives for i in front])
    ranked = sorted(range(len(front)), key=lambda j: (-crowd[j], front[j]))
    elites, seen = [], set()
    for j in ranked:
        sol = combined[front[j]]
        if sol.genome_key() not in seen:
            seen.add(sol.genome_key())
            elites.append(sol)
        if len(elites) == K:
            break

    def receive(members: list[Solution], comparator) -> list[Solution]:
        have = _genome_set(members)
        incoming = [e for e in elites if e.genome_key() not in have]
        if not incoming:
            return list(members)
        order = rank_population(members, comparator).order
        # elites already present are never evicted
        evictable = [i for i in order[::-1] if members[i].genome_key() not in seen]
        drop = set(evictable[: len(incoming)])
        return [m for i, m in enumerate(members) if i not in drop] + incoming[: len(drop)]

    return receive(list(p_exploit), exploit_comparator), receive(list(p_explore), explore_comparator), elites


def resize(
    members: Sequence[Solution],
    new_size: int,
    comparator,
    rng: np.random.Generator,
    problem: Problem,
    mutation_rate: float,
) -> tuple[list[Solution], str | None]:
    """Shrink by dropping the worst members, or grow by mutating random survivors."""
    warning = None
    if new_size < MIN_POPULATION:
        warning = f"requested population {new_size} clamped to {MIN_POPULATION}"
        new_size = MIN_POPULATION
    members = list(members)
    if new_size <= len(members):
        return truncate(members, new_size, comparator), warning
    grown = list(members)
    while len(grown) < new_size:
        parent = members[int(rng.integers(len(members)))]
        keys = mutate(parent.keys, mutation_rate, rng)
        if mutation_rate > 0 and np.array_equal(keys, parent.keys):
            keys[int(rng.integers(keys.size))] = rng.random()
        grown.append(problem.evaluate_keys(keys))
    return grown, warning


def _nondominated(solutions: Sequence[Solution]) -> list[Solution]:
    """Pareto-optimal members with duplicate lists removed (first occurrence kept)."""
    unique, seen = [], set()
    for s in solutions:
        if s.decoded_list not in seen:
            seen.add(s.decoded_list)
            unique.append(s)
    if not unique:
        return []
    dominated = dominance_matrix(objective_matrix(unique)).any(axis=0)
    return [s for s, d in zip(unique, dominated) if not d]


def select_final(
    p_exploit: Sequence[Solution],
    transferred_front: Sequence[Solution] = (),
    require_feasible: bool = True,
) -> tuple[list[Solution], Solution]:
    """Filter to the strictly feasible Pareto set and pick the designated list.

    The designated list maximises relevance; ties go to the larger
    hypervolume contribution, then to the lexicographically smaller list.
    """
    pool = list(p_exploit) + list(transferred_front)
    if require_feasible:
        pool = [s for s in pool if s.total_violation == 0.0]
    if not pool:
        raise ValueError("no feasible solution to select from")
    pareto = _nondominated(pool)
    total = front_hypervolume(pareto)

    def contribution(i: int) -> float:
        return total - front_hypervolume(pareto[:i] + pareto[i + 1 :])

    best_rel = max(s.objectives.relevance for s in pareto)
    tied = [i for i, s in enumerate(pareto) if s.objectives.relevance == best_rel]
    if len(tied) > 1:
        tied.sort(key=lambda i: (-contribution(i), pareto[i].decoded_list))
    return pareto, pareto[tied[0]]


class _Archive:
    """Non-dominated record of every (strictly feasible) exploitation list seen."""

    def __init__(self, feasible_only: bool):
        self.feasible_only = feasible_only
        self.members: list[Solution] = []
        self.hv = 0.0

    def update(self, solutions: Sequence[Solution]):
        fresh = [s for s in solutions if not self.feasible_only or s.total_violation == 0.0]
        if fresh:
            self.members = _nondominated(self.members + fresh)
            self.hv = front_hypervolume(self.members)


class _Run:
    def __init__(self, config, user, catalog, thresholds, coordinator):
        self.cfg = config
        self.problem = Problem(user, catalog, thresholds, k=config.k, overlap_weight=config.overlap_weight)
        if config.mode == "no-llm" or coordinator is None:
            coordinator = RuleBasedCoordinator()
        self.coordinator = coordinator
        self.evaluations = 0
        self.rng = {name: stream(config.rng_seed, name) for name in STREAMS}
        self.explore_rate = min(1.0, config.mutation_rate * config.explore_mutation_factor)

    def evaluate(self, keys) -> Solution:
        self.evaluations += 1
        return self.problem.evaluate_keys(keys)

    def evolve(self, members: list[Solution], comparator, rate: float, rng) -> list[Solution]:
        """One generation: a DE/pbest/1 child per member, then elitist truncation."""
        cfg = self.cfg
        order = rank_population(members, comparator).order
        keys = np.stack([m.keys for m in members])
        children = []
        for i in range(len(members)):
            child = de_pbest1(keys, i, order, cfg.p_best, cfg.F, cfg.CR, rng)
            children.append(self.evaluate(mutate(child, rate, rng)))
        return truncate(members + children, len(members), comparator)

    def split(self, alpha: float) -> tuple[int, int, list[str]]:
        N = self.cfg.population_total
        n_exploit = math.floor(alpha * N + 1e-9)
        warnings = []
        if n_exploit < MIN_POPULATION or N - n_exploit < MIN_POPULATION:
            clamped = min(max(n_exploit, MIN_POPULATION), N - MIN_POPULATION)
            warnings.append(f"split {n_exploit}/{N - n_exploit} clamped to {clamped}/{N - clamped}")
            n_exploit = clamped
        return n_exploit, N - n_exploit, warnings

    def run(self) -> OptimizationResult:
        cfg = self.cfg
        dim = self.problem.dimension
        init = self.rng["init"]
        if cfg.dual:
            alpha = cfg.alpha_initial
            n_exploit, n_explore, _ = self.split(alpha)
        else:
            alpha, n_exploit, n_explore = 1.0, cfg.population_total, 0
        exploit = [self.evaluate(init.random(dim)) for _ in range(n_exploit)]
        explore = [self.evaluate(init.random(dim)) for _ in range(n_explore)]

        if cfg.constrained:
            eps0 = calibrate_epsilon0(exploit + explore, cfg.epsilon_percentile)
            schedule = EpsilonSchedule(eps0, cfg.t_max, cfg.gamma)
            eps_at = lambda t: epsilon_at(schedule, t)  # noqa: E731
        else:
            eps0 = INF
            eps_at = lambda t: INF  # noqa: E731

        archive = _Archive(feasible_only=cfg.constrained)
        archive.update(exploit)
        K = cfg.transfer_size
        transferred: list[Solution] = []
        last_hv = archive.hv
        trace = [self._trace_row(0, eps_at(0), alpha, archive, exploit, explore)]

        for t in range(1, cfg.t_max + 1):
            eps = eps_at(t)
            exploit_cmp = CDP(eps)
            rationale = source = None
            warnings: list[str] = []
            exploit = self.evolve(exploit, exploit_cmp, cfg.mutation_rate, self.rng["variation-exploit"])
            if cfg.dual:
                explore = self.evolve(explore, PARETO, self.explore_rate, self.rng["variation-explore"])
                k_eff = min(K, len(exploit) - 1, len(explore) - 1)
                exploit, explore, transferred = knowledge_transfer(exploit, explore, k_eff, exploit_cmp, PARETO)
                if t % cfg.coordination_interval == 0 and t < cfg.t_max:
                    archive.update(exploit)
                    summary = self._summary(t, eps, alpha, archive, exploit, explore, last_hv)
                    decision = self.coordinator.decide(summary)
                    alpha = min(ALPHA_MAX, max(ALPHA_MIN, decision.alpha))
                    rationale, source = decision.rationale, decision.source
                    last_hv = archive.hv
                    n_exploit, n_explore, warnings = self.split(alpha)
                    self.evaluations += max(0, n_exploit - len(exploit)) + max(0, n_explore - len(explore))
                    exploit, w1 = resize(exploit, n_exploit, exploit_cmp, self.rng["resize"], self.problem,
                                         cfg.mutation_rate)
                    explore, w2 = resize(explore, n_explore, PARETO, self.rng["resize"], self.problem,
                                         self.explore_rate)
                    warnings += [w for w in (w1, w2) if w]
            archive.update(exploit)
            trace.append(self._trace_row(t, eps, alpha, archive, exploit, explore, rationale, source, warnings))

        return self._finish(exploit, explore, transferred, archive, trace, eps0)

    def _finish(self, exploit, explore, transferred, archive, trace, eps0) -> OptimizationResult:
        cfg = self.cfg
        common = dict(
            trace=trace, final_exploit=exploit, final_explore=explore, transferred=transferred,
            epsilon0=eps0, evaluations=self.evaluations, config=cfg,
        )
        try:
            pareto, star = select_final(exploit + archive.members, transferred, require_feasible=cfg.constrained)
        except ValueError:
            fallback = min(exploit, key=lambda s: s.total_violation)
            msg = (
                f"no strictly feasible list found after {cfg.t_max} generations; "
                f"least violation {fallback.total_violation:.4f} ({fallback.constraints})"
            )
            log.warning(msg)
            return OptimizationResult(False, [], None, fallback_solution=fallback, diagnostic=msg, **common)
        return OptimizationResult(True, pareto, star, **common)

    def _summary(self, t, eps, alpha, archive, exploit, explore, last_hv) -> OptimizationSummary:
        union = exploit + explore
        if last_hv > 0:
            improvement = (archive.hv - last_hv) / last_hv
        else:
            improvement = 1.0 if archive.hv > 0 else 0.0
        return OptimizationSummary(
            generation=t,
            t_max=self.cfg.t_max,
            epsilon=eps,
            feasibility_rate=sum(s.total_violation == 0.0 for s in union) / len(union),
            hv_exploit=archive.hv,
            hv_explore=front_hypervolume(explore),
            hv_improvement=min(1.0, max(0.0, improvement)),
            avg_violation=float(np.mean([s.total_violation for s in union])),
            best_objectives=self._best(archive, exploit),
            current_alpha=alpha,
        )

    @staticmethod
    def _best(archive, exploit) -> ObjectiveVector:
        source = archive.members or exploit
        return ObjectiveVector(*objective_matrix(source).max(axis=0))

    def _trace_row(self, t, eps, alpha, archive, exploit, explore, rationale=None, source=None, warnings=()):
        union = exploit + explore
        return GenerationTrace(
            generation=t,
            epsilon=eps,
            alpha=alpha,
            hv_exploit=archive.hv,
            hv_explore=front_hypervolume(explore) if explore else 0.0,
            feasibility_rate=sum(s.total_violation == 0.0 for s in union) / len(union),
            best_objectives=self._best(archive, exploit),
            coordinator_rationale=rationale,
            n_exploit=len(exploit),
            n_explore=len(explore),
            coordinator_source=source,
            warnings=tuple(warnings),
        )


def run(
    config: EngineConfig,
    user: UserContext,
    catalog: Catalog,
    thresholds: ConstraintThresholds,
    coordinator: Coordinator | None = None,
) -> OptimizationResult:
    """Optimise one user's list.  Never returns an infeasible list as a success."""
    return _Run(config, user, catalog, thresholds, coordinator).run()


def write_trace_csv(trace: Sequence[GenerationTrace], path, gnuplot: bool = False) -> None:
    """One row per generation.  ``gnuplot`` writes whitespace-separated columns with a '#' header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        if gnuplot:
            fh.write("# " + " ".join(TRACE_COLUMNS[:-1]) + "\n")
            for row in trace:
                fh.write(" ".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row.row()[:-1]) + "\n")
            return
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_COLUMNS)
        for row in trace:
            writer.writerow(row.row())
