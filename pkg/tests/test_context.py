import pytest
from hypothesis import given, strategies as st

from predaspect.context import ContextSpec, extract_context
from predaspect.corpus import Instance, Token
from predaspect.errors import AspectError


def forms(instance, spec):
    return [instance.tokens[i].form for i in extract_context(instance, ContextSpec.parse(spec))]


def test_figure_caption(figure_instance):
    assert forms(figure_instance, "window:1") == ["Jane", "to"]
    assert forms(figure_instance, "dep-full") == ["Jane", "leave"]
    assert forms(figure_instance, "dep-head") == []  # target is the root
    assert forms(figure_instance, "dep-children") == ["Jane", "leave"]
    assert extract_context(figure_instance, ContextSpec("sentence")) == [0, 2, 3, 4]
    assert extract_context(figure_instance, ContextSpec("verb")) == []


def test_window_truncates_at_boundary(figure_instance):
    from dataclasses import replace

    first = replace(figure_instance, target=0)
    assert extract_context(first, ContextSpec.window(2)) == [1, 2]
    leave = replace(figure_instance, target=3)
    assert forms(leave, "dep-head") == ["decided"]
    assert forms(leave, "dep-children") == ["to", "early"]
    assert forms(leave, "dep-full") == ["decided", "to", "early"]


@pytest.mark.parametrize("text", ["window", "window:0", "window:x", "dep", "verb:2"])
def test_bad_specs(text):
    with pytest.raises(AspectError):
        ContextSpec.parse(text)


@pytest.mark.parametrize("text", ["verb", "window:3", "dep-head", "dep-children", "dep-full", "sentence"])
def test_spec_round_trip(text):
    assert str(ContextSpec.parse(text)) == text


@st.composite
def trees(draw):
    n = draw(st.integers(1, 14))
    order = draw(st.permutations(range(n)))
    heads = [None] * n
    # attach each node to an earlier node in a random order: always a tree
    for pos in range(1, n):
        heads[order[pos]] = order[draw(st.integers(0, pos - 1))]
    tokens = tuple(Token(i, f"t{i}", "NN", heads[i], "dep") for i in range(n))
    target = draw(st.integers(0, n - 1))
    return Instance("d", "s", tokens, target, "x", "v")


@given(trees(), st.integers(1, 20))
def test_window_properties(inst, k):
    out = extract_context(inst, ContextSpec.window(k))
    assert len(out) <= 2 * k
    assert out == sorted(set(out))
    assert all(abs(i - inst.target) <= k for i in out)
    assert inst.target not in out
    if k >= len(inst.tokens) - 1:
        assert out == extract_context(inst, ContextSpec("sentence"))


@given(trees())
def test_dependency_properties(inst):
    head = extract_context(inst, ContextSpec("dep-head"))
    children = extract_context(inst, ContextSpec("dep-children"))
    full = extract_context(inst, ContextSpec("dep-full"))
    assert not set(head) & set(children)
    assert sorted(head + children) == full
    assert inst.target not in full
    assert extract_context(inst, ContextSpec("dep-full")) == full
