import pytest

from attackpaths.model import dump_network, validate_network
from attackpaths.synth import SyntheticSpec, TEMPLATES, generate_model, start_and_end


class TestSpecs:
    def test_chain_shape(self):
        net = generate_model(SyntheticSpec("chain", n=6))
        assert len(net.containers) == 6
        assert len(net.links) == 5
        assert all(not l.directed for l in net.links)
        assert [(l.endpoint_a, l.endpoint_b) for l in net.links] == [
            (1, 2), (2, 3), (3, 4), (4, 5), (5, 6),
        ]

    def test_complete_shape(self):
        net = generate_model(SyntheticSpec("complete", n=5))
        assert len(net.containers) == 5
        assert len(net.links) == 10
        pairs = {(l.endpoint_a, l.endpoint_b) for l in net.links}
        assert len(pairs) == 10

    def test_layered_shape(self):
        net = generate_model(SyntheticSpec("layered", width=3, depth=2))
        assert len(net.containers) == 2 + 3 * 2
        # 3 in, 9 across, 3 out; every link directed forward.
        assert len(net.links) == 15
        assert all(l.directed for l in net.links)

    @pytest.mark.parametrize("bad", [
        dict(topology="chain"),
        dict(topology="chain", n=1),
        dict(topology="complete", n=2),
        dict(topology="layered", width=3),
        dict(topology="layered", width=0, depth=2),
        dict(topology="ring", n=4),
        dict(topology="chain", n=3, template="nope"),
    ])
    def test_invalid_specs(self, bad):
        with pytest.raises(ValueError):
            SyntheticSpec(**bad)


class TestTemplates:
    @pytest.mark.parametrize("template", TEMPLATES)
    def test_generated_models_validate(self, template):
        for spec in (
            SyntheticSpec("chain", n=4, template=template),
            SyntheticSpec("complete", n=4, template=template),
            SyntheticSpec("layered", width=2, depth=2, template=template),
        ):
            assert validate_network(generate_model(spec)) == []

    def test_no_revisit_marks_start(self):
        net = generate_model(SyntheticSpec("chain", n=4, template="no_revisit"))
        visited = {c.id: c.facts[0].value for c in net.containers}
        assert visited == {1: True, 2: False, 3: False, 4: False}

    def test_chance_annotations_in_range(self):
        net = generate_model(SyntheticSpec("complete", n=5, seed=9))
        for link in net.links:
            cps = {p.key: p.value for p in link.custom_properties}
            assert 0.5 <= float(cps["traversal_chance"]) <= 1.0


class TestDeterminism:
    def test_same_seed_same_model(self):
        spec = SyntheticSpec("layered", width=2, depth=3, seed=42)
        assert dump_network(generate_model(spec)) == dump_network(generate_model(spec))

    def test_different_seed_changes_annotations(self):
        a = generate_model(SyntheticSpec("chain", n=5, seed=1))
        b = generate_model(SyntheticSpec("chain", n=5, seed=2))
        assert dump_network(a) != dump_network(b)


def test_start_and_end_convention():
    net = generate_model(SyntheticSpec("layered", width=2, depth=2))
    assert start_and_end(net) == (1, 6)
