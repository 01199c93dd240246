import numpy as np
import pytest

from gainfield.channel import (
    ChannelSet,
    CouplingProfile,
    ParseError,
    deserialize,
    generate_instance,
    local_view,
    read_instance,
    serialize,
    to_json,
    write_instance,
)


class TestCouplingProfile:
    def test_chain_geometric_values(self):
        v = CouplingProfile().variances(4)
        assert v[0, 0] == 1.0
        assert v[0, 1] == pytest.approx(0.1)
        assert v[0, 2] == pytest.approx(1e-3)
        assert v[0, 3] == pytest.approx(1e-5)
        assert np.allclose(v, v.T)

    def test_uniform(self):
        v = CouplingProfile("uniform", cross_scale=0.3).variances(3)
        assert v[1, 1] == 1.0
        assert v[0, 2] == 0.3

    def test_custom_requires_table(self):
        with pytest.raises(ValueError):
            CouplingProfile("custom")

    def test_custom_table_size_checked(self):
        p = CouplingProfile("custom", table=np.ones((3, 3)))
        with pytest.raises(ValueError):
            p.variances(4)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            CouplingProfile("weird")


class TestGeneration:
    def test_shapes_and_default_setup(self):
        cs = generate_instance(4, 2, sigma2=1e-2, seed=0)
        assert cs.h.shape == (4, 4, 2)
        assert cs.sigma2 == 1e-2
        assert cs.gains.shape == (4, 4)
        assert np.all(cs.gains > 0)

    def test_deterministic(self):
        a = generate_instance(4, 2, seed=123)
        b = generate_instance(4, 2, seed=123)
        assert np.array_equal(a.h, b.h)
        c = generate_instance(4, 2, seed=124)
        assert not np.array_equal(a.h, c.h)

    def test_links_are_independent_streams(self):
        cs = generate_instance(3, 2, seed=5)
        # No two links may share a draw sequence.
        flat = cs.h.reshape(9, -1)
        for i in range(9):
            for j in range(i + 1, 9):
                assert not np.allclose(flat[i], flat[j])

    def test_empirical_variance_matches_profile(self):
        # ~1e5 draws per link class; E|z|^2 must match the profile.
        direct, cross = [], []
        for s in range(1600):
            cs = generate_instance(2, 64, seed=s)
            direct.append(cs.h[0, 0])
            cross.append(cs.h[0, 1])
        direct = np.concatenate(direct)
        cross = np.concatenate(cross)
        assert direct.size >= 100_000
        assert np.mean(np.abs(direct) ** 2) == pytest.approx(1.0, rel=0.05)
        assert np.mean(np.abs(cross) ** 2) == pytest.approx(0.1, rel=0.05)
        # Real and imaginary parts carry half the variance each.
        assert np.var(direct.real) == pytest.approx(0.5, rel=0.05)

    def test_direct_gain_floor_regenerates(self):
        cs = generate_instance(2, 2, seed=9, min_direct_gain=3.0)
        assert cs.gains[0, 0] >= 3.0 and cs.gains[1, 1] >= 3.0
        plain = generate_instance(2, 2, seed=9)
        # At least one direct link must have been redrawn.
        assert not np.array_equal(cs.h, plain.h)
        again = generate_instance(2, 2, seed=9, min_direct_gain=3.0)
        assert np.array_equal(cs.h, again.h)

    def test_immutable(self):
        cs = generate_instance(2, 2, seed=1)
        with pytest.raises(ValueError):
            cs.h[0, 0, 0] = 0
        with pytest.raises(ValueError):
            cs.gains[0, 0] = 0

    def test_bad_dimensions(self):
        with pytest.raises(ValueError):
            generate_instance(0, 2)
        with pytest.raises(ValueError):
            generate_instance(4, 100)

    def test_bad_noise(self):
        with pytest.raises(ValueError):
            generate_instance(2, 2, sigma2=0.0)


class TestLocalView:
    def test_contents(self):
        cs = generate_instance(4, 2, seed=3)
        view = local_view(cs, 1)
        assert np.array_equal(view.outgoing, cs.h[1])
        want = np.array([np.vdot(cs.h[l, 1], cs.h[l, 1]).real for l in range(4)])
        assert np.allclose(view.incoming_gains, want, atol=1e-14)
        assert view.sigma2 == cs.sigma2

    def test_no_incoming_vectors_exposed(self):
        cs = generate_instance(3, 2, seed=4)
        view = local_view(cs, 0)
        # Structurally only outgoing vectors and incoming scalars.
        assert view.outgoing.shape == (3, 2)
        assert view.incoming_gains.shape == (3,)

    def test_out_of_range(self):
        cs = generate_instance(2, 2, seed=0)
        with pytest.raises(ValueError):
            local_view(cs, 2)


class TestSerialization:
    def test_binary_round_trip_bit_exact(self):
        cs = generate_instance(4, 2, sigma2=1e-2, seed=42)
        back = deserialize(serialize(cs))
        assert np.array_equal(back.h, cs.h)
        assert back.sigma2 == cs.sigma2
        assert back.seed == cs.seed
        assert back.profile.kind == cs.profile.kind

    def test_header_fields(self):
        cs = generate_instance(4, 2, sigma2=0.01, seed=7)
        buf = serialize(cs)
        assert buf[:8] == b"GFCHSET1"
        back = deserialize(buf)
        assert (back.n_users, back.n_antennas) == (4, 2)
        assert back.sigma2 == 0.01

    def test_json_round_trip_exact(self):
        cs = generate_instance(3, 2, seed=11)
        back = deserialize(to_json(cs))
        assert np.array_equal(back.h, cs.h)
        assert back.seed == 11

    def test_custom_profile_round_trip(self):
        table = np.array([[1.0, 0.5], [0.25, 1.0]])
        cs = generate_instance(2, 2, seed=1,
                               profile=CouplingProfile("custom", table=table))
        back = deserialize(serialize(cs))
        assert np.array_equal(back.profile.table, table)
        back_j = deserialize(to_json(cs))
        assert np.array_equal(back_j.profile.table, table)

    def test_truncation_reports_offset(self):
        buf = serialize(generate_instance(2, 2, seed=0))
        with pytest.raises(ParseError) as err:
            deserialize(buf[: len(buf) - 5])
        assert err.value.offset > 0
        assert "offset" in str(err.value)

    def test_bad_magic(self):
        buf = bytearray(serialize(generate_instance(2, 2, seed=0)))
        buf[0] ^= 0xFF
        with pytest.raises(ParseError):
            deserialize(bytes(buf))

    def test_trailing_garbage_rejected(self):
        buf = serialize(generate_instance(2, 2, seed=0)) + b"xx"
        with pytest.raises(ParseError):
            deserialize(buf)

    def test_bad_json(self):
        with pytest.raises(ParseError):
            deserialize('{"format": "nope"}')
        with pytest.raises(ParseError):
            deserialize("{not json")

    def test_file_round_trip(self, tmp_path):
        cs = generate_instance(4, 2, seed=5)
        p_bin = tmp_path / "inst.chan"
        p_json = tmp_path / "inst.json"
        write_instance(cs, str(p_bin))
        write_instance(cs, str(p_json))
        assert np.array_equal(read_instance(str(p_bin)).h, cs.h)
        assert np.array_equal(read_instance(str(p_json)).h, cs.h)


class TestChannelSetValidation:
    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            ChannelSet(h=np.zeros((2, 3, 2)), sigma2=1.0, seed=0,
                       profile=CouplingProfile())
