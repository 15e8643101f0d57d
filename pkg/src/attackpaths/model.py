"""Network model: containers and links carrying boolean facts, plus the rules
that fire while paths are traversed.

A model file is a JSON document with top-level sections ``common_properties``,
``containers``, ``links``, ``environment_facts``, ``normal_rules``,
``generic_rules`` and ``actions``.  Facts are boolean and may be associated
with at most one common property; fact identifiers are unique across the whole
network (containers, links and the environment share one fact ID space).
Normal and generic rules share one rule ID space.

Networks are immutable once built.  ``apply_fact_override`` and ``omit_rule``
return modified copies and never touch the original.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union


class Position(str, Enum):
    """Entity slot a generic-rule condition applies to."""

    START = "start"
    END = "end"
    LINK = "link"


class ModelError(Exception):
    pass


class ModelParseError(ModelError):
    pass


class ModelValidationError(ModelError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid model: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class CommonProperty:
    id: int
    name: str


@dataclass(frozen=True)
class CustomProperty:
    """Free-form key/value annotation. Never evaluated by rules."""

    key: str
    value: str


@dataclass(frozen=True)
class Fact:
    id: int
    name: str
    value: bool
    common_property: Optional[int] = None


@dataclass(frozen=True)
class Container:
    id: int
    name: str
    facts: tuple[Fact, ...] = ()
    custom_properties: tuple[CustomProperty, ...] = ()


@dataclass(frozen=True)
class Link:
    """Connects two containers. Bidirectional unless ``directed`` is set, in
    which case traversal is only allowed from ``endpoint_a`` to
    ``endpoint_b``."""

    id: int
    name: str
    endpoint_a: int
    endpoint_b: int
    directed: bool = False
    facts: tuple[Fact, ...] = ()
    custom_properties: tuple[CustomProperty, ...] = ()


@dataclass(frozen=True)
class PropertyCondition:
    """Generic-rule condition: the entity at ``position`` must hold a fact
    bound to ``common_property`` (with value ``value``, for preconditions)."""

    position: Position
    common_property: int
    value: bool


@dataclass(frozen=True)
class FactCondition:
    fact: int
    value: bool


@dataclass(frozen=True)
class PropertyAssignment:
    """Normal-rule postcondition hitting every fact bound to a property."""

    common_property: int
    value: bool


@dataclass(frozen=True)
class RuleImpacts:
    """Optional metric annotations, each in [0, 1]."""

    availability: float = 0.0
    confidentiality: float = 0.0
    integrity: float = 0.0


@dataclass(frozen=True)
class NormalRule:
    id: int
    name: str
    preconditions: tuple[FactCondition, ...]
    postconditions: tuple[Union[FactCondition, PropertyAssignment], ...] = ()
    action_ids: tuple[int, ...] = ()
    impacts: RuleImpacts = RuleImpacts()


@dataclass(frozen=True)
class GenericRule:
    id: int
    name: str
    preconditions: tuple[PropertyCondition, ...]
    postconditions: tuple[PropertyCondition, ...] = ()
    action_ids: tuple[int, ...] = ()
    impacts: RuleImpacts = RuleImpacts()


@dataclass(frozen=True)
class Action:
    id: int
    command: str
    enabled: bool = True


Rule = Union[NormalRule, GenericRule]


@dataclass(frozen=True)
class Network:
    containers: tuple[Container, ...] = ()
    links: tuple[Link, ...] = ()
    common_properties: tuple[CommonProperty, ...] = ()
    environment_facts: tuple[Fact, ...] = ()
    normal_rules: tuple[NormalRule, ...] = ()
    generic_rules: tuple[GenericRule, ...] = ()
    actions: tuple[Action, ...] = ()

    def __post_init__(self):
        # Lookup tables are derived state; build them defensively so that an
        # invalid network can still be constructed and handed to the validator.
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("containers_by_id", {c.id: c for c in self.containers})
        set_("links_by_id", {l.id: l for l in self.links})
        set_("properties_by_id", {p.id: p for p in self.common_properties})
        set_("actions_by_id", {a.id: a for a in self.actions})

        facts_by_id: dict[int, Fact] = {}
        fact_owner: dict[int, tuple[str, Optional[int]]] = {}
        container_base: dict[int, dict[int, bool]] = {}
        link_base: dict[int, dict[int, bool]] = {}
        container_prop_fact: dict[int, dict[int, int]] = {}
        link_prop_fact: dict[int, dict[int, int]] = {}
        facts_with_property: dict[int, list[int]] = {}

        def note_property(f: Fact) -> None:
            if f.common_property is not None:
                facts_with_property.setdefault(f.common_property, []).append(f.id)

        for c in self.containers:
            container_base[c.id] = {f.id: f.value for f in c.facts}
            pf = {}
            for f in c.facts:
                facts_by_id[f.id] = f
                fact_owner[f.id] = ("container", c.id)
                if f.common_property is not None:
                    pf[f.common_property] = f.id
                note_property(f)
            container_prop_fact[c.id] = pf
        for l in self.links:
            link_base[l.id] = {f.id: f.value for f in l.facts}
            pf = {}
            for f in l.facts:
                facts_by_id[f.id] = f
                fact_owner[f.id] = ("link", l.id)
                if f.common_property is not None:
                    pf[f.common_property] = f.id
                note_property(f)
            link_prop_fact[l.id] = pf
        env_base = {}
        for f in self.environment_facts:
            facts_by_id[f.id] = f
            fact_owner[f.id] = ("env", None)
            env_base[f.id] = f.value
            note_property(f)

        set_("facts_by_id", facts_by_id)
        set_("fact_owner", fact_owner)
        set_("container_base_values", container_base)
        set_("link_base_values", link_base)
        set_("container_prop_fact", container_prop_fact)
        set_("link_prop_fact", link_prop_fact)
        set_("env_base_values", env_base)
        set_("facts_with_property", {p: tuple(v) for p, v in facts_with_property.items()})

        adjacency: dict[int, list[tuple[int, int]]] = {c.id: [] for c in self.containers}
        for l in self.links:
            if l.endpoint_a in adjacency and l.endpoint_b in adjacency:
                adjacency[l.endpoint_a].append((l.id, l.endpoint_b))
                if not l.directed:
                    adjacency[l.endpoint_b].append((l.id, l.endpoint_a))
        set_("adjacency", {c: tuple(sorted(v)) for c, v in adjacency.items()})

        set_("normal_rules_sorted", tuple(sorted(self.normal_rules, key=lambda r: r.id)))
        set_("generic_rules_sorted", tuple(sorted(self.generic_rules, key=lambda r: r.id)))
        rules_by_id: dict[int, Rule] = {}
        for r in self.normal_rules + self.generic_rules:
            rules_by_id[r.id] = r
        set_("rules_by_id", rules_by_id)
        set_("generic_rule_ids", frozenset(r.id for r in self.generic_rules))


def validate_network(net: Network) -> list[str]:
    """Return a list of violations, empty when the network is well formed.

    Each violation names the offending identifier.
    """
    out: list[str] = []

    def check_ids(kind, items):
        seen = set()
        for it in items:
            if it.id < 0:
                out.append(f"{kind} id {it.id} is negative (negative ids are reserved)")
            if it.id in seen:
                out.append(f"duplicate {kind} id {it.id}")
            seen.add(it.id)
        return seen

    check_ids("container", net.containers)
    check_ids("link", net.links)
    check_ids("common property", net.common_properties)
    check_ids("action", net.actions)
    check_ids("rule", net.normal_rules + net.generic_rules)

    prop_ids = {p.id for p in net.common_properties}
    container_ids = {c.id for c in net.containers}
    action_ids = {a.id for a in net.actions}

    fact_seen: set[int] = set()

    def check_facts(owner_desc, facts):
        props_here: set[int] = set()
        for f in facts:
            if f.id < 0:
                out.append(f"fact id {f.id} ({owner_desc}) is negative")
            if f.id in fact_seen:
                out.append(f"duplicate fact id {f.id} ({owner_desc})")
            fact_seen.add(f.id)
            if f.common_property is not None:
                if f.common_property not in prop_ids:
                    out.append(
                        f"fact {f.id} references unknown common property {f.common_property}"
                    )
                elif f.common_property in props_here:
                    out.append(
                        f"{owner_desc} holds more than one fact on common property {f.common_property}"
                    )
                props_here.add(f.common_property)

    for c in net.containers:
        check_facts(f"container {c.id}", c.facts)
    for l in net.links:
        check_facts(f"link {l.id}", l.facts)
    check_facts("environment", net.environment_facts)

    for l in net.links:
        for end in (l.endpoint_a, l.endpoint_b):
            if end not in container_ids:
                out.append(f"link {l.id} references unknown container {end}")
        if l.endpoint_a == l.endpoint_b:
            out.append(f"link {l.id} connects container {l.endpoint_a} to itself")

    def check_rule_common(r):
        if not r.preconditions:
            out.append(f"rule {r.id} has no preconditions")
        for aid in r.action_ids:
            if aid not in action_ids:
                out.append(f"rule {r.id} references unknown action {aid}")
        for name in ("availability", "confidentiality", "integrity"):
            v = getattr(r.impacts, name)
            if not (0.0 <= v <= 1.0):
                out.append(f"rule {r.id} {name} impact {v} outside [0, 1]")

    for r in net.normal_rules:
        check_rule_common(r)
        for c in r.preconditions:
            if c.fact not in fact_seen:
                out.append(f"rule {r.id} precondition references unknown fact {c.fact}")
        for p in r.postconditions:
            if isinstance(p, FactCondition):
                if p.fact not in fact_seen:
                    out.append(f"rule {r.id} postcondition references unknown fact {p.fact}")
            else:
                if p.common_property not in prop_ids:
                    out.append(
                        f"rule {r.id} postcondition references unknown common property {p.common_property}"
                    )
    for r in net.generic_rules:
        check_rule_common(r)
        for c in r.preconditions + r.postconditions:
            if c.common_property not in prop_ids:
                out.append(
                    f"rule {r.id} condition references unknown common property {c.common_property}"
                )
    return out


# ---------------------------------------------------------------------------
# JSON serialization

def _fact_from_obj(obj, where) -> Fact:
    try:
        return Fact(
            id=int(obj["id"]),
            name=str(obj.get("name", "")),
            value=_as_bool(obj["value"], where),
            common_property=(int(obj["common_property"]) if "common_property" in obj else None),
        )
    except KeyError as e:
        raise ModelParseError(f"{where}: missing key {e.args[0]!r}") from None


def _as_bool(v, where) -> bool:
    if isinstance(v, bool):
        return v
    raise ModelParseError(f"{where}: expected a boolean, got {v!r}")


def _custom_props(obj, where):
    out = []
    for i, cp in enumerate(obj.get("custom_properties", [])):
        try:
            out.append(CustomProperty(key=str(cp["key"]), value=str(cp["value"])))
        except KeyError as e:
            raise ModelParseError(
                f"{where}.custom_properties[{i}]: missing key {e.args[0]!r}"
            ) from None
    return tuple(out)


def _impacts(obj, where) -> RuleImpacts:
    raw = obj.get("impacts", {})
    if not isinstance(raw, dict):
        raise ModelParseError(f"{where}.impacts: expected an object")
    known = {"availability", "confidentiality", "integrity"}
    for k in raw:
        if k not in known:
            raise ModelParseError(f"{where}.impacts: unknown key {k!r}")
    return RuleImpacts(**{k: float(v) for k, v in raw.items()})


def parse_network(text: str) -> Network:
    """Parse a model document without validating cross references."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelParseError(f"line {e.lineno}, column {e.colno}: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ModelParseError("top level must be an object")

    known = {
        "common_properties", "containers", "links", "environment_facts",
        "normal_rules", "generic_rules", "actions",
    }
    for k in doc:
        if k not in known:
            raise ModelParseError(f"unknown top-level section {k!r}")

    props = tuple(
        CommonProperty(id=int(p["id"]), name=str(p.get("name", "")))
        for p in doc.get("common_properties", [])
    )

    containers = []
    for i, c in enumerate(doc.get("containers", [])):
        where = f"containers[{i}]"
        containers.append(
            Container(
                id=int(c["id"]),
                name=str(c.get("name", "")),
                facts=tuple(
                    _fact_from_obj(f, f"{where}.facts[{j}]")
                    for j, f in enumerate(c.get("facts", []))
                ),
                custom_properties=_custom_props(c, where),
            )
        )

    links = []
    for i, l in enumerate(doc.get("links", [])):
        where = f"links[{i}]"
        try:
            links.append(
                Link(
                    id=int(l["id"]),
                    name=str(l.get("name", "")),
                    endpoint_a=int(l["from"]),
                    endpoint_b=int(l["to"]),
                    directed=bool(l.get("directed", False)),
                    facts=tuple(
                        _fact_from_obj(f, f"{where}.facts[{j}]")
                        for j, f in enumerate(l.get("facts", []))
                    ),
                    custom_properties=_custom_props(l, where),
                )
            )
        except KeyError as e:
            raise ModelParseError(f"{where}: missing key {e.args[0]!r}") from None

    env = tuple(
        _fact_from_obj(f, f"environment_facts[{i}]")
        for i, f in enumerate(doc.get("environment_facts", []))
    )

    normal = []
    for i, r in enumerate(doc.get("normal_rules", [])):
        where = f"normal_rules[{i}]"
        posts: list[Union[FactCondition, PropertyAssignment]] = []
        for j, p in enumerate(r.get("postconditions", [])):
            if "fact" in p:
                posts.append(FactCondition(int(p["fact"]), _as_bool(p["value"], where)))
            elif "property" in p:
                posts.append(PropertyAssignment(int(p["property"]), _as_bool(p["value"], where)))
            else:
                raise ModelParseError(
                    f"{where}.postconditions[{j}]: need either 'fact' or 'property'"
                )
        try:
            normal.append(
                NormalRule(
                    id=int(r["id"]),
                    name=str(r.get("name", "")),
                    preconditions=tuple(
                        FactCondition(int(p["fact"]), _as_bool(p["value"], where))
                        for p in r.get("preconditions", [])
                    ),
                    postconditions=tuple(posts),
                    action_ids=tuple(int(a) for a in r.get("actions", [])),
                    impacts=_impacts(r, where),
                )
            )
        except KeyError as e:
            raise ModelParseError(f"{where}: missing key {e.args[0]!r}") from None

    generic = []
    for i, r in enumerate(doc.get("generic_rules", [])):
        where = f"generic_rules[{i}]"

        def conds(key):
            out = []
            for j, c in enumerate(r.get(key, [])):
                try:
                    pos = Position(c["position"])
                except ValueError:
                    raise ModelParseError(
                        f"{where}.{key}[{j}]: position must be start, end or link"
                    ) from None
                except KeyError as e:
                    raise ModelParseError(
                        f"{where}.{key}[{j}]: missing key {e.args[0]!r}"
                    ) from None
                out.append(PropertyCondition(pos, int(c["property"]), _as_bool(c["value"], where)))
            return tuple(out)

        try:
            generic.append(
                GenericRule(
                    id=int(r["id"]),
                    name=str(r.get("name", "")),
                    preconditions=conds("preconditions"),
                    postconditions=conds("postconditions"),
                    action_ids=tuple(int(a) for a in r.get("actions", [])),
                    impacts=_impacts(r, where),
                )
            )
        except KeyError as e:
            raise ModelParseError(f"{where}: missing key {e.args[0]!r}") from None

    actions = tuple(
        Action(id=int(a["id"]), command=str(a["command"]), enabled=bool(a.get("enabled", True)))
        for a in doc.get("actions", [])
    )

    return Network(
        containers=tuple(containers),
        links=tuple(links),
        common_properties=props,
        environment_facts=env,
        normal_rules=tuple(normal),
        generic_rules=tuple(generic),
        actions=tuple(actions),
    )


def load_network(text: str) -> Network:
    """Parse and validate a model document."""
    net = parse_network(text)
    violations = validate_network(net)
    if violations:
        raise ModelValidationError(violations)
    return net


def load_network_file(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return load_network(fh.read())


def _fact_obj(f: Fact):
    obj = {"id": f.id, "name": f.name, "value": f.value}
    if f.common_property is not None:
        obj["common_property"] = f.common_property
    return obj


def dump_network(net: Network) -> str:
    """Render a network back to its document form.

    ``load_network(dump_network(net))`` returns an equal network.
    """
    doc: dict = {}
    if net.common_properties:
        doc["common_properties"] = [{"id": p.id, "name": p.name} for p in net.common_properties]
    if net.containers:
        doc["containers"] = []
        for c in net.containers:
            obj = {"id": c.id, "name": c.name}
            if c.facts:
                obj["facts"] = [_fact_obj(f) for f in c.facts]
            if c.custom_properties:
                obj["custom_properties"] = [{"key": p.key, "value": p.value} for p in c.custom_properties]
            doc["containers"].append(obj)
    if net.links:
        doc["links"] = []
        for l in net.links:
            obj = {"id": l.id, "name": l.name, "from": l.endpoint_a, "to": l.endpoint_b}
            if l.directed:
                obj["directed"] = True
            if l.facts:
                obj["facts"] = [_fact_obj(f) for f in l.facts]
            if l.custom_properties:
                obj["custom_properties"] = [{"key": p.key, "value": p.value} for p in l.custom_properties]
            doc["links"].append(obj)
    if net.environment_facts:
        doc["environment_facts"] = [_fact_obj(f) for f in net.environment_facts]

    def impacts_obj(r):
        out = {}
        for k in ("availability", "confidentiality", "integrity"):
            v = getattr(r.impacts, k)
            if v:
                out[k] = v
        return out

    if net.normal_rules:
        doc["normal_rules"] = []
        for r in net.normal_rules:
            obj = {
                "id": r.id,
                "name": r.name,
                "preconditions": [{"fact": c.fact, "value": c.value} for c in r.preconditions],
            }
            if r.postconditions:
                obj["postconditions"] = [
                    {"fact": p.fact, "value": p.value}
                    if isinstance(p, FactCondition)
                    else {"property": p.common_property, "value": p.value}
                    for p in r.postconditions
                ]
            if r.action_ids:
                obj["actions"] = list(r.action_ids)
            if impacts_obj(r):
                obj["impacts"] = impacts_obj(r)
            doc["normal_rules"].append(obj)
    if net.generic_rules:
        doc["generic_rules"] = []
        for r in net.generic_rules:
            def cond_objs(conds):
                return [
                    {"position": c.position.value, "property": c.common_property, "value": c.value}
                    for c in conds
                ]
            obj = {"id": r.id, "name": r.name, "preconditions": cond_objs(r.preconditions)}
            if r.postconditions:
                obj["postconditions"] = cond_objs(r.postconditions)
            if r.action_ids:
                obj["actions"] = list(r.action_ids)
            if impacts_obj(r):
                obj["impacts"] = impacts_obj(r)
            doc["generic_rules"].append(obj)
    if net.actions:
        doc["actions"] = [
            {"id": a.id, "command": a.command, "enabled": a.enabled} for a in net.actions
        ]
    return json.dumps(doc, indent=2) + "\n"


# ---------------------------------------------------------------------------
# Pure modification helpers

def apply_fact_override(net: Network, fact_id: int, value: bool) -> Network:
    """Return a copy of ``net`` with one fact's initial value replaced."""
    if fact_id not in net.fact_owner:
        raise ModelError(f"unknown fact {fact_id}")

    def fix(facts):
        return tuple(replace(f, value=value) if f.id == fact_id else f for f in facts)

    kind, owner = net.fact_owner[fact_id]
    if kind == "env":
        return replace(net, environment_facts=fix(net.environment_facts))
    if kind == "container":
        return replace(
            net,
            containers=tuple(
                replace(c, facts=fix(c.facts)) if c.id == owner else c for c in net.containers
            ),
        )
    return replace(
        net,
        links=tuple(replace(l, facts=fix(l.facts)) if l.id == owner else l for l in net.links),
    )


def omit_rule(net: Network, rule_id: int) -> Network:
    """Return a copy of ``net`` without the named rule (normal or generic)."""
    if rule_id not in net.rules_by_id:
        raise ModelError(f"unknown rule {rule_id}")
    return replace(
        net,
        normal_rules=tuple(r for r in net.normal_rules if r.id != rule_id),
        generic_rules=tuple(r for r in net.generic_rules if r.id != rule_id),
    )


def export_dot(net: Network) -> str:
    """Render the container/link topology as Graphviz DOT.

    Undirected links are drawn with ``dir=none``; containers and links appear
    in ascending ID order.
    """
    lines = ["digraph model {"]
    for c in sorted(net.containers, key=lambda c: c.id):
        lines.append(f'  c{c.id} [label="{c.name or c.id}"];')
    for l in sorted(net.links, key=lambda l: l.id):
        attrs = [f'label="{l.name or l.id}"']
        if not l.directed:
            attrs.append("dir=none")
        lines.append(f'  c{l.endpoint_a} -> c{l.endpoint_b} [{", ".join(attrs)}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def find_container(net: Network, key: str) -> int:
    """Resolve a container given by numeric ID or name."""
    if key.lstrip("-").isdigit() and int(key) in net.containers_by_id:
        return int(key)
    matches = [c.id for c in net.containers if c.name == key]
    if len(matches) == 1:
        return matches[0]
    if len(matches) > 1:
        raise ModelError(f"container name {key!r} is ambiguous")
    raise ModelError(f"unknown container {key!r}")


def find_fact(net: Network, key: str) -> int:
    """Resolve a fact given by numeric ID or name."""
    if key.lstrip("-").isdigit() and int(key) in net.facts_by_id:
        return int(key)
    matches = [f.id for f in net.facts_by_id.values() if f.name == key]
    if len(matches) == 1:
        return matches[0]
    if len(matches) > 1:
        raise ModelError(f"fact name {key!r} is ambiguous")
    raise ModelError(f"unknown fact {key!r}")
