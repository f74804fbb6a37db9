import math

import numpy as np
import pytest

from swarm_gather.core import (
    ConfigurationError,
    Constellation,
    StepOutcome,
    SystemParams,
    VisibilityGraph,
    build_visibility,
    centroid,
    constellation,
    diameter,
    is_connected,
)


def test_centroid_examples():
    assert np.allclose(centroid(constellation([(0, 0), (1, 0), (0, 1)])), (1 / 3, 1 / 3))
    assert np.allclose(centroid(constellation([(2, 3)])), (2, 3))
    assert np.allclose(centroid(constellation([(-1, 0), (1, 0)])), (0, 0))


def test_diameter_examples():
    assert diameter(constellation([(0, 0), (3, 4)])) == 5
    assert diameter(constellation([(7, 7)])) == 0
    assert diameter(constellation([(0, 0), (1, 0), (1, 1), (0, 1)])) == pytest.approx(math.sqrt(2))


class TestConstellation:
    def test_rejects_non_finite(self):
        with pytest.raises(ConfigurationError):
            constellation([(0, np.nan)])
        with pytest.raises(ConfigurationError):
            constellation([(np.inf, 0)])

    def test_immutable(self):
        c = constellation([(0, 0), (1, 1)])
        with pytest.raises(ValueError):
            c.positions[0, 0] = 5

    def test_input_is_copied(self):
        P = np.zeros((2, 2))
        c = Constellation(P)
        P[0, 0] = 9
        assert c.positions[0, 0] == 0

    def test_advance_keeps_agent_count(self):
        c = constellation([(0, 0), (1, 1)])
        nxt = c.advance([(0, 1), (1, 2)], 0.5)
        assert nxt.step == 1 and nxt.time == 0.5
        with pytest.raises(ConfigurationError):
            c.advance([(0, 0)])

    def test_needs_an_agent(self):
        with pytest.raises(ConfigurationError):
            Constellation(np.zeros((0, 2)))


class TestParams:
    @pytest.mark.parametrize(
        "kw",
        [dict(sigma=0), dict(V=0), dict(dt=0), dict(rho=0), dict(rho=1.5),
         dict(V=1, delta=1), dict(V=1, delta=2), dict(epsilon_gather=0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            SystemParams(**kw)

    def test_defaults(self):
        p = SystemParams()
        assert p.V == math.inf and p.rho == 1
        with pytest.raises(ConfigurationError):
            p.require_delta()
        with pytest.raises(ConfigurationError):
            p.require_finite_v()


class TestVisibility:
    def test_only_close_pair(self):
        c = constellation([(0, 0), (0.5, 0), (2, 0)])
        g = build_visibility(c, SystemParams(V=1.0))
        assert g.edges() == {(0, 1)}

    def test_infinite_range_is_complete(self):
        c = constellation([(0, 0), (50, 0), (0, 1e6)])
        g = build_visibility(c, SystemParams())
        assert g.edges() == {(0, 1), (0, 2), (1, 2)}

    def test_strict_at_range(self):
        g = build_visibility(constellation([(0, 0), (1, 0)]), SystemParams(V=1.0))
        assert g.edges() == set()

    def test_coincident_agents_carry_no_edge(self):
        c = constellation([(0, 0), (0, 0), (0.5, 0)])
        g = build_visibility(c, SystemParams(V=1.0))
        assert g.edges() == {(0, 2), (1, 2)}

    def test_hysteresis_keeps_old_edges_and_adds_close_ones(self):
        p = SystemParams(V=1.0, delta=0.2)
        c0 = constellation([(0, 0), (0.95, 0), (3, 0)])
        g0 = build_visibility(c0, p, "hysteresis")
        assert g0.edges() == {(0, 1)}
        c1 = constellation([(0, 0), (0.99, 0), (1.7, 0)])
        g1 = build_visibility(c1, p, "hysteresis", previous=g0)
        assert g1.edges() == {(0, 1), (1, 2)}
        # A pair entering the range but not the inner band is not added later.
        c2 = constellation([(0, 0), (0.99, 0), (1.9, 0)])
        g2 = build_visibility(c2, p, "hysteresis", previous=build_visibility(c0, p, "hysteresis"))
        assert (1, 2) not in g2.edges()

    def test_fixed_mode(self):
        c = constellation([(0, 0), (1, 0)])
        g = build_visibility(c, SystemParams(), "fixed", adjacency=[[0, 1], [1, 0]])
        assert g.edges() == {(0, 1)}
        with pytest.raises(ConfigurationError):
            build_visibility(c, SystemParams(), "fixed")

    def test_unknown_mode(self):
        with pytest.raises(ConfigurationError):
            build_visibility(constellation([(0, 0)]), SystemParams(), "radar")

    def test_graph_validation(self):
        with pytest.raises(ConfigurationError):
            VisibilityGraph([[0, 1], [0, 0]])
        with pytest.raises(ConfigurationError):
            VisibilityGraph([[1, 0], [0, 0]])


class TestConnectivity:
    def test_complete(self):
        g = build_visibility(constellation(np.random.default_rng(0).normal(size=(4, 2))), SystemParams())
        assert is_connected(g)

    def test_two_clusters(self):
        c = constellation([(0, 0), (0.1, 0), (5, 0), (5.1, 0)])
        assert not is_connected(build_visibility(c, SystemParams(V=1.0)))

    def test_path(self):
        c = constellation([(0, 0), (0.9, 0), (1.8, 0)])
        g = build_visibility(c, SystemParams(V=1.0))
        assert g.edges() == {(0, 1), (1, 2)} and is_connected(g)


def test_step_outcome_length_check():
    c = constellation([(0, 0), (1, 0)])
    with pytest.raises(ValueError):
        StepOutcome(c, np.zeros((2, 2)), np.ones(3, bool), np.zeros(2, bool))
    out = StepOutcome(c, np.zeros((2, 2)), np.ones(2, bool), np.zeros(2, bool))
    assert np.isnan(out.goal).all() and not out.chatter.any()
