"""Build a small model in code, validate it, and round-trip it through the
file format.

A model is a set of containers joined by links.  Both carry boolean facts,
and a fact may be tied to a common property so that generic rules can talk
about "whatever fact represents reachability here" without naming IDs.
"""

from attackpaths import (
    CommonProperty,
    Container,
    Fact,
    GenericRule,
    Link,
    Network,
    Position,
    PropertyCondition,
    dump_network,
    export_dot,
    load_network,
    validate_network,
)

REACHABLE = 1

net = Network(
    containers=(
        Container(1, "workstation"),
        Container(2, "jump-host"),
        Container(3, "database"),
    ),
    links=(
        Link(1, "office-lan", 1, 2, facts=(Fact(10, "lan-open", True, REACHABLE),)),
        Link(2, "dmz", 2, 3, directed=True,
             facts=(Fact(11, "dmz-open", True, REACHABLE),)),
    ),
    common_properties=(CommonProperty(REACHABLE, "reachable"),),
    generic_rules=(
        GenericRule(
            1, "cross an open segment",
            preconditions=(PropertyCondition(Position.LINK, REACHABLE, True),),
            postconditions=(PropertyCondition(Position.LINK, REACHABLE, True),),
        ),
    ),
)

print("validating:", validate_network(net) or "no violations")

text = dump_network(net)
print("\nserialized model:")
print(text)

assert load_network(text) == net
print("round trip: load(dump(net)) == net")

print("\ntopology as DOT (note dir=none on the undirected office LAN):")
print(export_dot(net))
