"""Synthetic benchmark models.

Topologies: ``chain(n)``, ``complete(n)`` and ``layered(width, depth)``
(layered links are directed forward).  Containers are named ``C1..Ck``;
generated models are traversed from the first container to the last.

Rule templates:

* ``pass_through``: every link carries a "passable" fact and one rule lets
  any passable link be crossed any number of times.
* ``no_link_retraversal``: crossing a link flips its "crossed" fact, so the
  same link never admits a second crossing in either direction.
* ``no_revisit``: entering a container flips its "visited" fact, so paths are
  node-simple.  The first container starts out visited.

Generation is deterministic for a given spec: the seed drives only the metric
annotations (per-link traversal chance, per-rule impacts).
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Optional

from .model import (
    CommonProperty,
    Container,
    CustomProperty,
    Fact,
    GenericRule,
    Link,
    Network,
    Position,
    PropertyCondition,
    RuleImpacts,
)

TEMPLATES = ("pass_through", "no_link_retraversal", "no_revisit")

_PASSABLE = 1
_CROSSED = 2
_VISITED = 3


@dataclass(frozen=True)
class SyntheticSpec:
    topology: str                      # chain | complete | layered
    n: Optional[int] = None            # chain/complete size
    width: Optional[int] = None        # layered
    depth: Optional[int] = None
    template: str = "pass_through"
    seed: int = 0

    def __post_init__(self):
        if self.topology in ("chain", "complete"):
            if self.n is None or self.n < 2:
                raise ValueError(f"{self.topology} needs n >= 2")
            if self.topology == "complete" and self.n < 3:
                raise ValueError("complete needs n >= 3")
        elif self.topology == "layered":
            if not self.width or not self.depth or self.width < 1 or self.depth < 1:
                raise ValueError("layered needs width >= 1 and depth >= 1")
        else:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")


def _edges(spec: SyntheticSpec) -> tuple[int, list[tuple[int, int, bool]]]:
    """Container count plus (from, to, directed) link endpoints."""
    if spec.topology == "chain":
        n = spec.n
        return n, [(i, i + 1, False) for i in range(1, n)]
    if spec.topology == "complete":
        n = spec.n
        return n, [(i, j, False) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    w, d = spec.width, spec.depth
    count = 2 + w * d
    layer = lambda k: [2 + (k - 1) * w + i for i in range(w)]  # containers of layer k
    edges = []
    for c in layer(1):
        edges.append((1, c, True))
    for k in range(1, d):
        for a in layer(k):
            for b in layer(k + 1):
                edges.append((a, b, True))
    for c in layer(d):
        edges.append((c, count, True))
    return count, edges


def generate_model(spec: SyntheticSpec) -> Network:
    rng = random.Random(spec.seed)
    count, edges = _edges(spec)

    props = [CommonProperty(_PASSABLE, "passable")]
    if spec.template == "no_link_retraversal":
        props.append(CommonProperty(_CROSSED, "crossed"))
    if spec.template == "no_revisit":
        props.append(CommonProperty(_VISITED, "visited"))

    next_fact = 1
    containers = []
    for c in range(1, count + 1):
        facts = ()
        if spec.template == "no_revisit":
            facts = (Fact(next_fact, f"visited_C{c}", c == 1, _VISITED),)
            next_fact += 1
        containers.append(Container(c, f"C{c}", facts))

    links = []
    for i, (a, b, directed) in enumerate(edges, start=1):
        facts = [Fact(next_fact, f"pass_L{i}", True, _PASSABLE)]
        next_fact += 1
        if spec.template == "no_link_retraversal":
            facts.append(Fact(next_fact, f"crossed_L{i}", False, _CROSSED))
            next_fact += 1
        chance = round(rng.uniform(0.5, 1.0), 4)
        links.append(
            Link(
                i, f"L{i}", a, b, directed,
                tuple(facts),
                (CustomProperty("traversal_chance", str(chance)),),
            )
        )

    impacts = RuleImpacts(
        availability=round(rng.uniform(0.0, 0.3), 4),
        confidentiality=round(rng.uniform(0.0, 0.3), 4),
        integrity=round(rng.uniform(0.0, 0.3), 4),
    )
    if spec.template == "pass_through":
        rules = (
            GenericRule(
                1, "traverse passable link",
                (PropertyCondition(Position.LINK, _PASSABLE, True),),
                (PropertyCondition(Position.LINK, _PASSABLE, True),),
                impacts=impacts,
            ),
        )
    elif spec.template == "no_link_retraversal":
        rules = (
            GenericRule(
                1, "cross link once",
                (
                    PropertyCondition(Position.LINK, _PASSABLE, True),
                    PropertyCondition(Position.LINK, _CROSSED, False),
                ),
                (PropertyCondition(Position.LINK, _CROSSED, True),),
                impacts=impacts,
            ),
        )
    else:
        rules = (
            GenericRule(
                1, "enter unvisited container",
                (
                    PropertyCondition(Position.LINK, _PASSABLE, True),
                    PropertyCondition(Position.END, _VISITED, False),
                ),
                (PropertyCondition(Position.END, _VISITED, True),),
                impacts=impacts,
            ),
        )

    return Network(
        containers=tuple(containers),
        links=tuple(links),
        common_properties=tuple(props),
        generic_rules=rules,
    )


def start_and_end(net: Network) -> tuple[int, int]:
    """Traversal convention for generated models: first to last container."""
    ids = sorted(c.id for c in net.containers)
    return ids[0], ids[-1]
