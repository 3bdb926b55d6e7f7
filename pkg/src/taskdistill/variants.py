"""The experiment variant registry and the diagnostic grids.

Each variant pins the architecture knobs that distinguish the method rows
of the diagnostic tables: which distillation module runs, which final
decoders exist, which intermediate predictions feed the distillation, and
whether the auxiliary heads (deep supervision) are present at all.
"""

from dataclasses import dataclass

from .config import TASKS


@dataclass(frozen=True)
class ExperimentVariant:
    name: str
    uses_distillation: str      # none | A | B | C
    final_tasks: tuple
    active_inputs: tuple
    deep_supervision: bool
    distill_messages: bool = True
    note: str = ""


ALL = tuple(TASKS)
DE = ("depth",)
SP = ("parsing",)
BOTH = ("depth", "parsing")

_VARIANTS = [
    ExperimentVariant("front-de", "none", DE, (), False),
    ExperimentVariant("front-sp", "none", SP, (), False),
    ExperimentVariant("front-de-sp", "none", BOTH, (), False),
    ExperimentVariant("distill-a-de", "A", DE, ALL, True),
    ExperimentVariant("distill-b-de", "B", DE, ALL, True),
    ExperimentVariant("distill-c-de", "C", DE, ALL, True),
    ExperimentVariant("distill-a-sp", "A", SP, ALL, True),
    ExperimentVariant("distill-b-sp", "B", SP, ALL, True),
    ExperimentVariant("distill-c-sp", "C", SP, ALL, True),
    ExperimentVariant("distill-c-de-sp", "C", BOTH, ALL, True),
    ExperimentVariant(
        "mtdn-mds", "C", BOTH, ALL, True, distill_messages=False,
        note="interpretation: capacity-matched deep supervision with "
             "distillation messages disabled",
    ),
    ExperimentVariant("mtdn-inp0", "none", BOTH, (), True),
    ExperimentVariant("mtdn-inp2", "C", BOTH, ("depth", "parsing"), True),
    ExperimentVariant("mtdn-inp3", "C", BOTH, ("depth", "parsing", "normal"), True),
    ExperimentVariant("mtdn-full", "C", BOTH, ALL, True),
]

REGISTRY = {v.name: v for v in _VARIANTS}

GRIDS = {
    "baselines": ("front-de", "front-sp", "front-de-sp", "distill-c-de-sp"),
    "distill-modules": ("front-de", "front-de-sp", "distill-a-de", "distill-b-de",
                        "distill-c-de", "distill-c-de-sp"),
    "input-count": ("mtdn-inp0", "mtdn-inp2", "mtdn-inp3", "mtdn-full"),
}


def get_variant(name):
    try:
        return REGISTRY[name]
    except KeyError:
        raise KeyError(
            f"unknown variant {name!r}; registered: {', '.join(REGISTRY)}"
        ) from None


def grid_variants(grid):
    try:
        names = GRIDS[grid]
    except KeyError:
        raise KeyError(f"unknown grid {grid!r}; available: {', '.join(GRIDS)}") from None
    return [REGISTRY[n] for n in names]
