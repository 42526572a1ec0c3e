"""Design-space definition, exact cardinality, condensed space, config
validation, stratified controlled random search and perturbation setups.

The space is a Cartesian product of dimension choices with one conditional
rule: macro-level aggregation applies only to the dual-aggregation families.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DesignConfig, FAMILIES
from . import layers as L


@dataclass(frozen=True)
class Dimension:
    name: str
    choices: tuple
    needs: tuple = ()  # names of earlier dimensions the applicability reads

    def applies(self, partial: dict) -> bool:
        if self.name == "macro_agg":
            return partial.get("model_family") != "Homogenization"
        return True


@dataclass(frozen=True)
class Stratum:
    """A (dataset, model family, micro conv) cell with a required hit count."""

    dataset: str
    model_family: str
    micro_conv: str
    hits: int = 2


class DesignSpace:
    def __init__(self, dimensions):
        self.dimensions = tuple(dimensions)
        self._by_name = {d.name: d for d in self.dimensions}
        names = [d.name for d in self.dimensions]
        if len(set(names)) != len(names):
            raise ValueError("dimension names must be unique")
        self.branch_names = tuple(
            sorted({n for d in self.dimensions for n in d.needs}))

    def dim(self, name: str) -> Dimension:
        d = self._by_name.get(name)
        if d is None:
            raise KeyError(f"unknown design dimension '{name}'")
        return d

    def names(self):
        return tuple(d.name for d in self.dimensions)

    def cardinality(self) -> int:
        total = 0
        for combo in self._branch_combos():
            prod = 1
            for d in self.dimensions:
                if d.name in combo:
                    continue
                if d.applies(combo):
                    prod *= len(d.choices)
            total += prod
        return total

    def enumerate(self):
        """Yield every valid assignment as a dict (inapplicable dims -> None)."""

        def rec(i, partial):
            if i == len(self.dimensions):
                yield dict(partial)
                return
            d = self.dimensions[i]
            if not d.applies(partial):
                partial[d.name] = None
                yield from rec(i + 1, partial)
                del partial[d.name]
                return
            for c in d.choices:
                partial[d.name] = c
                yield from rec(i + 1, partial)
                del partial[d.name]

        yield from rec(0, {})

    def _branch_combos(self):
        combos = [{}]
        for name in self.branch_names:
            d = self.dim(name)
            combos = [dict(c, **{name: choice}) for c in combos for choice in d.choices]
        return combos

    def sample_assignment(self, rng, fixed=None) -> dict:
        """One assignment, uniform over the valid configurations (optionally
        restricted to the values in `fixed`)."""
        fixed = dict(fixed or {})
        for name, value in fixed.items():
            if value not in self.dim(name).choices:
                raise ValueError(f"'{value}' is not a choice of dimension '{name}'")
        combos = [c for c in self._branch_combos()
                  if all(c[k] == fixed[k] for k in c if k in fixed)]
        weights = []
        for combo in combos:
            prod = 1
            for d in self.dimensions:
                if d.name in combo or d.name in fixed:
                    continue
                if d.applies(combo):
                    prod *= len(d.choices)
            weights.append(prod)
        weights = np.asarray(weights, dtype=np.float64)
        pick = combos[int(rng.choice(len(combos), p=weights / weights.sum()))]
        out = {}
        for d in self.dimensions:
            if d.name in pick:
                out[d.name] = pick[d.name]
            elif not d.applies(out):
                out[d.name] = None
            elif d.name in fixed:
                out[d.name] = fixed[d.name]
            else:
                out[d.name] = d.choices[int(rng.integers(0, len(d.choices)))]
        return out


_UNIQUE_DIMS = (
    Dimension("model_family", FAMILIES),
    Dimension("micro_conv", L.MICRO_KINDS),
    Dimension("macro_agg", L.MACRO_KINDS, needs=("model_family",)),
)

_COMMON_FULL = (
    Dimension("has_bn", (True, False)),
    Dimension("dropout_p", (0.0, 0.3, 0.6)),
    Dimension("activation", ("ReLU", "LeakyReLU", "ELU", "Tanh", "PReLU")),
    Dimension("has_l2norm", (True, False)),
    Dimension("connectivity", ("STACK", "SKIP-SUM", "SKIP-CAT")),
    Dimension("pre_layers", (1, 2, 3)),
    Dimension("mp_layers", (1, 2, 3, 4, 5, 6)),
    Dimension("post_layers", (1, 2, 3)),
    Dimension("optimizer", ("Adam", "SGD")),
    Dimension("lr", (0.1, 0.01, 0.001, 0.0001)),
    Dimension("epochs", (100, 200, 400)),
    Dimension("hidden_dim", (8, 16, 32, 64, 128)),
)

_COMMON_CONDENSED = (
    Dimension("has_bn", (True, False)),
    Dimension("dropout_p", (0.0, 0.3)),
    Dimension("activation", ("ELU", "LeakyReLU", "Tanh")),
    Dimension("has_l2norm", (True, False)),
    Dimension("connectivity", ("SKIP-SUM", "SKIP-CAT")),
    Dimension("pre_layers", (1,)),
    Dimension("mp_layers", (1, 2, 3, 4, 5, 6)),
    Dimension("post_layers", (1, 2)),
    Dimension("optimizer", ("Adam",)),
    Dimension("lr", (0.1, 0.01)),
    Dimension("epochs", (400,)),
    Dimension("hidden_dim", (64, 128)),
)


def full_space() -> DesignSpace:
    return DesignSpace(_UNIQUE_DIMS + _COMMON_FULL)


def condensed_space() -> DesignSpace:
    """Common dimensions restricted to the strong choices; the family, micro
    and macro dimensions keep all of their options."""
    return DesignSpace(_UNIQUE_DIMS + _COMMON_CONDENSED)


def cardinality(space: DesignSpace) -> int:
    return space.cardinality()


def describe(space: DesignSpace) -> str:
    lines = []
    for d in space.dimensions:
        cond = " (dual-aggregation families only)" if d.needs else ""
        lines.append(f"{d.name}: {', '.join(str(c) for c in d.choices)}{cond}")
    lines.append(f"cardinality: {space.cardinality()}")
    return "\n".join(lines)


def config_from_assignment(assignment: dict, seed: int = 0, **extra) -> DesignConfig:
    return DesignConfig(seed=seed, **assignment, **extra)


def default_strata(space: DesignSpace, hits: int = 2, dataset: str = "default"):
    """Every (model family, micro conv) cell with the same hit count."""
    out = []
    for fam in space.dim("model_family").choices:
        for micro in space.dim("micro_conv").choices:
            out.append(Stratum(dataset, fam, micro, hits))
    return out


def sample_controlled(space: DesignSpace, n: int, strata=(), seed: int = 0,
                      metapaths=()):
    """Deterministic controlled random search sample.

    Stratum cells are filled first (uniform within each cell), the remainder
    uniform over the whole space. Each config gets its own derived seed so
    any single trial reproduces in isolation. `metapaths` (the experiment's
    declared meta-paths) is stamped into Metapath-family samples.
    """
    strata = tuple(strata)
    required = sum(s.hits for s in strata)
    if required > n:
        raise ValueError(f"strata require {required} samples but n={n}")
    rng = np.random.default_rng([int(seed), 101])
    assignments = []
    for s in strata:
        for _ in range(s.hits):
            assignments.append(space.sample_assignment(
                rng, fixed={"model_family": s.model_family,
                            "micro_conv": s.micro_conv}))
    for _ in range(n - required):
        assignments.append(space.sample_assignment(rng))
    configs = []
    for i, a in enumerate(assignments):
        cfg_seed = int(np.random.SeedSequence([int(seed), i]).generate_state(1)[0])
        extra = {}
        if a.get("model_family") == "Metapath":
            extra["metapaths"] = tuple(metapaths)
        configs.append(config_from_assignment(a, seed=cfg_seed, **extra))
    return configs


def perturb_dimension(base: DesignConfig, dim_name: str,
                      space: DesignSpace | None = None):
    """All single-dimension variants of a base config (base value included);
    one ranking setup."""
    space = space or full_space()
    d = space.dim(dim_name)
    partial = base.to_flat()
    if not d.applies(partial):
        raise ValueError(f"dimension '{dim_name}' does not apply to a "
                         f"{base.model_family}-family config")
    return [base.with_values(**{dim_name: c}) for c in d.choices]


_TASKS = ("node_classification", "link_prediction")


_FULL_SPACE = None


def _full_space_cached() -> DesignSpace:
    global _FULL_SPACE
    if _FULL_SPACE is None:
        _FULL_SPACE = full_space()
    return _FULL_SPACE


def validate(cfg: DesignConfig, graph=None) -> list:
    """All violations of the full-space domains and conditional rules."""
    errors = []
    space = _full_space_cached()

    def check(name, value):
        choices = space.dim(name).choices
        if value not in choices:
            errors.append(f"{name}: '{value}' not in {list(choices)}")

    check("model_family", cfg.model_family)
    check("micro_conv", cfg.micro_conv)
    if cfg.model_family == "Homogenization":
        if cfg.macro_agg is not None:
            errors.append("macro_agg: must be absent for the Homogenization family")
    elif cfg.model_family in FAMILIES:
        check("macro_agg", cfg.macro_agg)
    if cfg.attention_form not in L.ATTENTION_FORMS:
        errors.append(f"attention_form: '{cfg.attention_form}' not in "
                      f"{list(L.ATTENTION_FORMS)}")
    for name in ("has_bn", "dropout_p", "activation", "has_l2norm", "connectivity",
                 "pre_layers", "mp_layers", "post_layers", "optimizer", "lr",
                 "epochs", "hidden_dim"):
        check(name, getattr(cfg, name))
    if cfg.task not in _TASKS:
        errors.append(f"task: '{cfg.task}' not in {list(_TASKS)}")

    if cfg.model_family == "Metapath":
        if not cfg.metapaths:
            errors.append("metapaths: Metapath family needs a non-empty meta-path list")
        elif graph is not None:
            rel_by_name = {r.name: r for r in graph.relations}
            for name, rels in cfg.metapaths:
                missing = [r for r in rels if r not in rel_by_name]
                if missing:
                    errors.append(f"metapaths: '{name}' references unknown "
                                  f"relations {missing}")
                    continue
                for a, b in zip(rels, rels[1:]):
                    if rel_by_name[a].dst_type != rel_by_name[b].src_type:
                        errors.append(
                            f"metapaths: '{name}' does not chain at "
                            f"'{a}' -> '{b}'")
                        break
    return errors
