"""Persist a run to disk, then query the merged results by metric.

A run directory holds the variable-length path records ("Final paths"), a
fixed-width position index ("Index"), and one sort file per metric.  Sort
files rank positions by value, so a top-k query is a short sequential read
followed by k seeks.

The model is a diamond with two routes of different quality.  Links carry a
``traversal_chance`` custom property and the crossing rule carries impact
scores, so the two final paths separate on every metric.
"""

import tempfile

from attackpaths import (
    Container,
    CommonProperty,
    CustomProperty,
    Fact,
    GenericRule,
    Link,
    Network,
    Position,
    PropertyCondition,
    RuleImpacts,
    SortKey,
    TraversalConfig,
    run_single,
)

PASSABLE = 1


def link(lid, name, a, b, chance):
    return Link(lid, name, a, b, directed=True,
                facts=(Fact(100 + lid, f"pass_{name}", True, PASSABLE),),
                custom_properties=(CustomProperty("traversal_chance", str(chance)),))


net = Network(
    containers=(
        Container(1, "entry"),
        Container(2, "patched-host"),
        Container(3, "legacy-host"),
        Container(4, "target"),
    ),
    links=(
        link(1, "entry-patched", 1, 2, 0.9),
        link(2, "patched-target", 2, 4, 0.5),
        link(3, "entry-legacy", 1, 3, 0.8),
        link(4, "legacy-target", 3, 4, 0.95),
    ),
    common_properties=(CommonProperty(PASSABLE, "passable"),),
    generic_rules=(
        GenericRule(
            1, "cross",
            preconditions=(PropertyCondition(Position.LINK, PASSABLE, True),),
            postconditions=(PropertyCondition(Position.LINK, PASSABLE, True),),
            impacts=RuleImpacts(availability=0.2, confidentiality=0.1),
        ),
    ),
)

with tempfile.TemporaryDirectory() as out:
    store, summary = run_single(net, TraversalConfig(start=1, end=4), out)
    print(f"run finished: {summary.total_final_paths} final paths, "
          f"stop reason {summary.stop_reason.value}")
    print(f"merged store holds {store.count} records\n")

    chances = store.metric_values(SortKey.TRAVERSABILITY_CHANCE)
    avail = store.metric_values(SortKey.AVAILABILITY)

    print("paths by traversability chance, best first:")
    for rank, (pos, record) in enumerate(
            store.query_sorted(SortKey.TRAVERSABILITY_CHANCE, k=store.count), 1):
        hops = " -> ".join(
            net.containers_by_id[c.entity1.id].name
            for c in record.connections if c.link is not None)
        dest = net.containers_by_id[record.connections[-1].entity1.id].name
        print(f"  {rank}. chance {chances[pos]:.3f}  availability {avail[pos]:.3f}  "
              f"{hops} -> {dest}")
