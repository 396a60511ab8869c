"""Template-tree GP with gene-pool optimal mixing and an interleaved multi-start scheme."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd

from survfix.errors import BudgetTooSmallError, SurvfixError
from survfix.gp.expr import (
    CONST,
    MAX_ARITY,
    N_OPS,
    OP_INDEX,
    OP_NAMES,
    OPERATORS,
    ExprTree,
    const,
    eval_template,
    expr_mse,
    format_expr,
    op,
    template_size,
)

log = logging.getLogger(__name__)

BOOLEAN_OPS = ("lt", "ge", "and", "or", "not")


@dataclass(frozen=True)
class GpConfig:
    depth: int = 2
    generations: int = 512
    base_population: int = 64
    seeds: int = 5
    constant_range: tuple[float, float] | None = None  # None: [-10, 10] joined with the target range
    rng_seed: int = 0
    operators: tuple[str, ...] = OP_NAMES
    linkage: str = "univariate"
    linear_scaling: bool = True
    ims_interval: int = 4
    stop_mse: float = 1e-12
    max_population: int = 4096

    def __post_init__(self):
        if self.generations < 1:
            raise BudgetTooSmallError("budget too small: need at least one generation")
        if self.base_population < 2:
            raise SurvfixError("base_population must be >= 2")
        if self.depth not in (1, 2, 3, 4, 5):
            raise SurvfixError(f"unsupported template depth {self.depth}")
        unknown = [o for o in self.operators if o not in OPERATORS]
        if unknown:
            raise SurvfixError(f"unknown operators {unknown}")
        if self.linkage not in ("univariate", "random_tree"):
            raise SurvfixError(f"unknown linkage model {self.linkage!r}")


class Individual:
    __slots__ = ("symbols", "constants", "fitness", "active")

    def __init__(self, symbols: list[int], constants: list[float], fitness: float = np.inf):
        self.symbols = symbols
        self.constants = constants
        self.fitness = fitness
        self.active = _active_set(symbols)

    def clone(self) -> "Individual":
        other = Individual.__new__(Individual)
        other.symbols = list(self.symbols)
        other.constants = list(self.constants)
        other.fitness = self.fitness
        other.active = set(self.active)
        return other

    def same_genotype(self, other: "Individual") -> bool:
        return self.symbols == other.symbols and self.constants == other.constants


_ARITY = [OPERATORS[name].arity for name in OP_NAMES]


def _active_set(symbols: list[int]) -> set[int]:
    out = set()
    stack = [0]
    while stack:
        s = stack.pop()
        out.add(s)
        code = symbols[s]
        if 0 <= code < N_OPS:
            base = MAX_ARITY * s
            stack.extend(range(base + 1, base + 1 + _ARITY[code]))
    return out


class FitnessProblem:
    """Mean squared error of a template against a target column.

    With ``linear_scaling`` the output ``f`` is first replaced by its
    least-squares affine fit ``a + b f`` to the target. ``n_evals`` counts
    every evaluation.
    """

    def __init__(self, data: pd.DataFrame, target, linear_scaling: bool = True):
        self.variables = tuple(str(c) for c in data.columns)
        self.columns = [np.asarray(data[c], dtype=float) for c in data.columns]
        self.target = np.asarray(target, dtype=float)
        if self.target.size == 0:
            raise SurvfixError("empty data")
        if self.target.size != len(data):
            raise SurvfixError("target and data rows differ")
        self.n = self.target.size
        self.linear_scaling = linear_scaling
        self.target_mean = float(self.target.mean())
        self.n_evals = 0

    def output(self, symbols, constants) -> np.ndarray:
        out = eval_template(symbols, constants, self.columns)
        if np.ndim(out) == 0:
            return np.full(self.n, float(out))
        return out

    def scaling(self, f: np.ndarray) -> tuple[float, float]:
        """Offset and slope of the least-squares fit of the target on ``f``."""
        if not self.linear_scaling:
            return 0.0, 1.0
        fc = f - f.mean()
        var = float(fc @ fc)
        if not np.isfinite(var) or var <= 1e-24 * self.n:
            return self.target_mean, 0.0
        slope = float(fc @ (self.target - self.target_mean)) / var
        return self.target_mean - slope * float(f.mean()), slope

    def fitness(self, symbols, constants) -> float:
        self.n_evals += 1
        f = self.output(symbols, constants)
        if not np.all(np.isfinite(f)):
            return np.inf
        offset, slope = self.scaling(f)
        resid = self.target - (slope * f + offset)
        mse = float(np.mean(resid * resid))
        return mse if np.isfinite(mse) else np.inf

    def evaluate(self, ind: Individual) -> float:
        ind.fitness = self.fitness(ind.symbols, ind.constants)
        return ind.fitness


class TreeSampler:
    """Random initialization of template trees (ramped full/grow).

    Condition slots of If and operands of boolean operators receive
    boolean-producing operators when they are internal slots.
    """

    def __init__(self, depth: int, n_vars: int, operators: Sequence[str], constant_range: tuple[float, float]):
        self.depth = depth
        self.n_vars = n_vars
        self.size = template_size(depth)
        self.leaf_start = template_size(depth - 1)
        self.ops = [OP_INDEX[o] for o in operators]
        self.bool_ops = [OP_INDEX[o] for o in operators if o in BOOLEAN_OPS] or self.ops
        cmp_ops = [OP_INDEX[o] for o in operators if o in ("lt", "ge")]
        # favour comparisons in boolean context so conditions read variables
        self.bool_weights = np.array([3.0 if c in cmp_ops else 1.0 for c in self.bool_ops])
        self.bool_weights /= self.bool_weights.sum()
        self.lo, self.hi = constant_range

    def terminal(self, rng) -> tuple[int, float]:
        k = int(rng.integers(self.n_vars + 1))
        if k < self.n_vars:
            return N_OPS + k, 0.0
        return CONST, float(rng.uniform(self.lo, self.hi))

    def random_symbol(self, slot: int, rng) -> tuple[int, float]:
        if slot < self.leaf_start and rng.random() < 0.5:
            return self.ops[int(rng.integers(len(self.ops)))], 0.0
        return self.terminal(rng)

    def sample(self, rng, full: bool) -> Individual:
        symbols = [0] * self.size
        constants = [0.0] * self.size
        for s in range(self.size):
            symbols[s], constants[s] = self.random_symbol(s, rng)

        def grow(slot: int, level: int, want_bool: bool):
            if level == self.depth:
                symbols[slot], constants[slot] = self.terminal(rng)
                return
            if want_bool:
                code = int(rng.choice(self.bool_ops, p=self.bool_weights))
            elif full or level == 0 or rng.random() < 0.5:
                code = self.ops[int(rng.integers(len(self.ops)))]
            else:
                symbols[slot], constants[slot] = self.terminal(rng)
                return
            symbols[slot], constants[slot] = code, 0.0
            name = OP_NAMES[code]
            for k in range(_ARITY[code]):
                child_bool = (name == "ite" and k == 0) or name in ("and", "or", "not")
                grow(MAX_ARITY * slot + k + 1, level + 1, child_bool)

        grow(0, 0, False)
        return Individual(symbols, constants)


def univariate_linkage(size: int) -> list[list[int]]:
    return [[i] for i in range(size)]


def random_tree_linkage(size: int, rng) -> list[list[int]]:
    """Random hierarchical merge of slot positions; every set except the root."""
    sets = [[int(i)] for i in rng.permutation(size)]
    fos = [list(s) for s in sets]
    while len(sets) > 2:
        i, j = sorted(rng.choice(len(sets), 2, replace=False))
        merged = sets[i] + sets[j]
        del sets[j], sets[i]
        sets.append(merged)
        fos.append(list(merged))
    return fos


def gom_generation(population: list[Individual], linkage: list[list[int]], problem: FitnessProblem, rng) -> list[Individual]:
    """One generation of gene-pool optimal mixing.

    Each offspring starts as a copy of its parent and visits the linkage
    groups in random order, copying each group's slots from a random donor of
    the parent population. A change is kept when the MSE does not increase.
    Changes confined to inert slots are kept without evaluation.
    """
    n = len(population)
    offspring = []
    with np.errstate(all="ignore"):
        for parent in population:
            o = parent.clone()
            for gi in rng.permutation(len(linkage)):
                group = linkage[gi]
                donor = population[int(rng.integers(n))]
                changed = [
                    p
                    for p in group
                    if o.symbols[p] != donor.symbols[p]
                    or (o.symbols[p] == CONST and o.constants[p] != donor.constants[p])
                ]
                if not changed:
                    continue
                old = [(p, o.symbols[p], o.constants[p]) for p in changed]
                touches_active = any(p in o.active for p in changed)
                for p in changed:
                    o.symbols[p] = donor.symbols[p]
                    o.constants[p] = donor.constants[p]
                if not touches_active:
                    continue
                new_fit = problem.fitness(o.symbols, o.constants)
                if new_fit <= o.fitness:
                    o.fitness = new_fit
                    o.active = _active_set(o.symbols)
                else:
                    for p, s, c in old:
                        o.symbols[p] = s
                        o.constants[p] = c
            offspring.append(o)
    return offspring


@dataclass
class DistillResult:
    expression: ExprTree
    train_mse: float
    test_mse: float
    depth: int
    seed: int
    evaluations: int = 0
    generations: int = 0
    population_sizes: list[int] = field(default_factory=list)

    def text(self, precision: int | None = 3) -> str:
        return format_expr(self.expression, precision=precision)


@dataclass
class _Pop:
    individuals: list[Individual]
    linkage: list[list[int]]
    generations: int = 0
    terminated: bool = False

    @property
    def median(self) -> float:
        return float(np.median([i.fitness for i in self.individuals]))


def _default_range(target: np.ndarray) -> tuple[float, float]:
    return min(-10.0, float(np.min(target))), max(10.0, float(np.max(target)))


def run_ims(
    config: GpConfig,
    data: pd.DataFrame,
    target,
    test_data: pd.DataFrame | None = None,
    test_target=None,
    seed_index: int = 0,
    problem: FitnessProblem | None = None,
) -> DistillResult:
    """Interleaved multi-start GOMEA run.

    Population ``k`` has ``base_population * 2**k`` members and performs one
    generation after every ``ims_interval`` generations of population ``k-1``.
    A population is retired once a larger one has a lower median MSE.
    ``config.generations`` bounds the total over all populations.
    """
    if config.generations < 1:
        raise BudgetTooSmallError("budget too small")
    rng = np.random.default_rng([config.rng_seed, config.depth, seed_index])
    if problem is None:
        problem = FitnessProblem(data, target, config.linear_scaling)
    crange = config.constant_range or _default_range(problem.target)
    sampler = TreeSampler(config.depth, len(problem.variables), config.operators, crange)
    size = sampler.size

    pops: list[_Pop] = []
    total = 0
    best: Individual | None = None

    def consider(ind: Individual):
        nonlocal best
        if best is None or ind.fitness < best.fitness:
            best = ind.clone()

    def spawn(k: int) -> bool:
        n = config.base_population * 2**k
        if n > config.max_population:
            return False
        with np.errstate(all="ignore"):
            members = [sampler.sample(rng, full=(i % 2 == 0)) for i in range(n)]
            for ind in members:
                problem.evaluate(ind)
                consider(ind)
        if config.linkage == "univariate":
            linkage = univariate_linkage(size)
        else:
            linkage = random_tree_linkage(size, rng)
        pops.append(_Pop(members, linkage))
        return True

    def done() -> bool:
        return total >= config.generations or (best is not None and best.fitness <= config.stop_mse)

    def step(k: int):
        nonlocal total
        if done():
            return
        if k == len(pops) and not spawn(k):
            return
        pop = pops[k]
        if pop.terminated:
            step(k + 1)
            return
        pop.individuals = gom_generation(pop.individuals, pop.linkage, problem, rng)
        pop.generations += 1
        total += 1
        for ind in pop.individuals:
            consider(ind)
        med = pop.median
        for smaller in pops[:k]:
            if not smaller.terminated and med < smaller.median:
                smaller.terminated = True
        if pop.generations % config.ims_interval == 0:
            step(k + 1)

    while not done():
        before = total
        step(0)
        if total == before:
            break

    assert best is not None
    tree = ExprTree(config.depth, best.symbols, best.constants, problem.variables)
    expression = tree
    if config.linear_scaling:
        offset, slope = problem.scaling(problem.output(best.symbols, best.constants))
        wrapped = op("add", op("mul", const(slope), tree.to_node()), const(offset))
        expression = ExprTree.from_node(wrapped, variables=problem.variables)
    train_mse = expr_mse(expression, data, problem.target)
    test_mse = float("nan")
    if test_data is not None and test_target is not None:
        test_mse = expr_mse(expression, test_data, test_target)
    log.debug("ims depth %d seed %d: %d generations, train mse %.3g", config.depth, seed_index, total, train_mse)
    return DistillResult(
        expression=expression,
        train_mse=train_mse,
        test_mse=test_mse,
        depth=config.depth,
        seed=seed_index,
        evaluations=problem.n_evals,
        generations=total,
        population_sizes=[len(p.individuals) for p in pops],
    )


@dataclass
class DistillReport:
    best: dict[int, DistillResult]
    runs: list[DistillResult]

    def to_frame(self, feature: str = "") -> pd.DataFrame:
        return pd.DataFrame(
            [
                {
                    "feature": feature,
                    "depth": r.depth,
                    "seed": r.seed,
                    "expression": r.text(precision=3),
                    "expression_exact": r.text(precision=None),
                    "train_mse": r.train_mse,
                    "test_mse": r.test_mse,
                    "selected": r is self.best[r.depth],
                }
                for r in self.runs
            ]
        )


def _run_job(job) -> DistillResult:
    config, data, target, test_data, test_target, seed = job
    return run_ims(config, data, target, test_data, test_target, seed_index=seed)


def distill_feature(
    data: pd.DataFrame,
    target,
    test_data: pd.DataFrame,
    test_target,
    depths: Sequence[int] = (2, 3, 4),
    seeds: int = 5,
    config: GpConfig = GpConfig(),
    threads: int = 1,
) -> DistillReport:
    """Run ``seeds`` IMS runs per depth; keep the lowest test MSE per depth.

    With ``threads > 1`` the runs go to a process pool (the search loop is
    interpreter-bound); every run is seeded on its own, so results match the
    serial order exactly.
    """
    jobs = [(replace(config, depth=d), data, target, test_data, test_target, s) for d in depths for s in range(seeds)]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(threads, len(jobs))) as pool:
            runs = list(pool.map(_run_job, jobs))
    else:
        runs = [_run_job(j) for j in jobs]
    best: dict[int, DistillResult] = {}
    for r in runs:
        key = r.test_mse if np.isfinite(r.test_mse) else np.inf
        if r.depth not in best or key < (best[r.depth].test_mse if np.isfinite(best[r.depth].test_mse) else np.inf):
            best[r.depth] = r
    return DistillReport(best, runs)
