import ast
import inspect

import numpy as np
import pytest

from fedmark.errors import (
    AuthenticationError,
    ConfigurationError,
    DimensionError,
    FormatError,
    InputError,
    SchemeMismatchError,
)
from fedmark.he import (
    ct_add,
    ct_from_bytes,
    ct_scale,
    ct_to_bytes,
    decrypt,
    encrypt,
    he_keygen,
    secure_aggregate,
)
from fedmark.nn.arch import Gradient


def eps_for(scale_bits: int) -> float:
    return 2.0 ** (1 - scale_bits)


@pytest.fixture
def key():
    return he_keygen(20, seed=1)


def enc(key, vec):
    return encrypt(key, Gradient(np.asarray(vec, dtype=np.float64)))


class TestKeygen:
    def test_deterministic(self):
        a, b = he_keygen(16, seed=9), he_keygen(16, seed=9)
        assert a.secret_material == b.secret_material
        assert a.fingerprint == b.fingerprint

    def test_different_seeds_differ(self):
        assert he_keygen(16, seed=1).secret_material != he_keygen(16, seed=2).secret_material

    @pytest.mark.parametrize("bits", [7, 41, 0])
    def test_scale_bounds(self, bits):
        with pytest.raises(ConfigurationError):
            he_keygen(bits, seed=0)

    def test_roundtrip_precision_at_scale_20(self):
        key = he_keygen(20, seed=3)
        x = np.random.default_rng(0).uniform(-1, 1, 500)
        back = decrypt(key, enc(key, x)).values
        assert np.abs(back - x).max() <= 2.0**-19


class TestEncryptDecrypt:
    def test_zero_roundtrip(self, key):
        back = decrypt(key, enc(key, np.zeros(64))).values
        assert np.all(back == 0.0)

    def test_random_roundtrip_within_eps(self, key):
        x = np.random.default_rng(1).uniform(-1, 1, 300)
        back = decrypt(key, enc(key, x)).values
        assert np.abs(back - x).max() <= eps_for(20)

    def test_wrong_key_never_silent(self, key):
        other = he_keygen(20, seed=999)
        ct = enc(key, np.ones(8))
        with pytest.raises(AuthenticationError):
            decrypt(other, ct)

    def test_payload_uncorrelated_with_plaintext(self, key):
        x = np.random.default_rng(2).uniform(-1, 1, 2000)
        ct = enc(key, x)
        payload = np.array([float(v % (1 << 62)) for v in ct.payload])
        r = np.corrcoef(payload, x)[0, 1]
        assert abs(r) < 0.1

    def test_dim_binding(self):
        key = he_keygen(20, seed=5, dim=10)
        with pytest.raises(DimensionError):
            enc(key, np.zeros(11))

    def test_nonfinite_rejected(self, key):
        with pytest.raises(InputError):
            enc(key, np.array([1.0, np.inf]))


class TestHomomorphism:
    def test_additive_inverse(self, key):
        x = np.random.default_rng(3).uniform(-1, 1, 100)
        s = decrypt(key, ct_add(enc(key, x), enc(key, -x))).values
        assert np.abs(s).max() <= 2 * eps_for(20)

    def test_scale_zero(self, key):
        x = np.random.default_rng(4).uniform(-1, 1, 50)
        assert np.all(decrypt(key, ct_scale(enc(key, x), 0.0)).values == 0.0)

    def test_scale_three_equals_triple_add(self, key):
        x = np.random.default_rng(5).uniform(-1, 1, 50)
        ct = enc(key, x)
        a = decrypt(key, ct_scale(ct, 3.0)).values
        b = decrypt(key, ct_add(ct_add(ct, ct), ct)).values
        np.testing.assert_allclose(a, b, atol=3 * eps_for(20))

    def test_add_matches_plaintext(self, key):
        rng = np.random.default_rng(6)
        x, y = rng.uniform(-1, 1, 80), rng.uniform(-1, 1, 80)
        s = decrypt(key, ct_add(enc(key, x), enc(key, y))).values
        assert np.abs(s - (x + y)).max() <= 2 * eps_for(20)

    @pytest.mark.parametrize("c", [0.37, -2.5, 1e-4, 7.0, 1 / 3])
    def test_scale_matches_plaintext(self, key, c):
        x = np.random.default_rng(7).uniform(-1, 1, 80)
        out = decrypt(key, ct_scale(enc(key, x), c)).values
        assert np.abs(out - c * x).max() <= abs(c) * eps_for(20)

    def test_scheme_mismatch(self):
        k1, k2 = he_keygen(20, seed=1), he_keygen(20, seed=2)
        with pytest.raises(SchemeMismatchError):
            ct_add(enc(k1, np.ones(4)), enc(k2, np.ones(4)))

    def test_dim_mismatch(self, key):
        with pytest.raises(DimensionError):
            ct_add(enc(key, np.ones(4)), enc(key, np.ones(5)))

    def test_level_counter(self, key):
        ct = enc(key, np.ones(4))
        assert ct.level == 0
        assert ct_scale(ct, 2.0).level == 1
        assert ct_add(ct_scale(ct, 2.0), ct).level == 1


class TestSecureAggregate:
    def test_cancellation(self, key):
        g = np.random.default_rng(8).uniform(-1, 1, 60)
        agg = secure_aggregate([enc(key, g), enc(key, -g)], [1.0, 1.0])
        assert np.abs(decrypt(key, agg).values).max() <= 2 * 2 * eps_for(20)

    def test_weighted_mean_scalars(self, key):
        agg = secure_aggregate([enc(key, [0.0]), enc(key, [4.0])], [1.0, 3.0])
        assert decrypt(key, agg).values[0] == pytest.approx(3.0, abs=2 * 2 * eps_for(20))

    def test_matches_plaintext_fedavg(self, key):
        rng = np.random.default_rng(9)
        grads = [rng.uniform(-1, 1, 400) for _ in range(10)]
        weights = rng.uniform(0.5, 5.0, 10)
        agg = decrypt(key, secure_aggregate([enc(key, g) for g in grads], weights)).values
        truth = sum(w * g for w, g in zip(weights, grads)) / weights.sum()
        rel = np.abs(agg - truth).max() / np.abs(truth).max()
        assert rel <= 1e-3

    def test_empty(self):
        with pytest.raises(InputError):
            secure_aggregate([], [])

    def test_zero_total_weight(self, key):
        with pytest.raises(InputError):
            secure_aggregate([enc(key, np.ones(3))], [0.0])

    def test_negative_weight(self, key):
        with pytest.raises(InputError):
            secure_aggregate([enc(key, np.ones(3))], [-1.0])

    def test_large_dimension_fedavg(self, key):
        rng = np.random.default_rng(10)
        d = 100_000
        grads = [rng.uniform(-0.1, 0.1, d) for _ in range(3)]
        agg = decrypt(key, secure_aggregate([enc(key, g) for g in grads], [1, 2, 3])).values
        truth = (grads[0] + 2 * grads[1] + 3 * grads[2]) / 6
        rel = np.abs(agg - truth).max() / np.abs(truth).max()
        assert rel <= 1e-3


class TestWireFormat:
    def test_round_trip_fresh(self, key):
        x = np.random.default_rng(11).uniform(-1, 1, 32)
        ct = enc(key, x)
        back = ct_from_bytes(ct_to_bytes(ct))
        assert np.array_equal(
            decrypt(key, back).values, decrypt(key, ct).values
        )
        assert back.mask_ledger == ct.mask_ledger

    def test_round_trip_aggregated(self, key):
        rng = np.random.default_rng(12)
        agg = secure_aggregate(
            [enc(key, rng.uniform(-1, 1, 16)) for _ in range(4)], [1, 2, 3, 4]
        )
        back = ct_from_bytes(ct_to_bytes(agg))
        assert np.array_equal(decrypt(key, back).values, decrypt(key, agg).values)

    def test_bad_magic(self):
        with pytest.raises(FormatError):
            ct_from_bytes(b"NOPE" + b"\x00" * 64)

    def test_truncated(self, key):
        raw = ct_to_bytes(enc(key, np.ones(16)))
        with pytest.raises(FormatError):
            ct_from_bytes(raw[: len(raw) - 8])


class TestServerBlindness:
    """The aggregation path must be structurally unable to decrypt."""

    @pytest.mark.parametrize("module_name", ["fedmark.he.aggregate", "fedmark.fl.server"])
    def test_no_decryption_capability(self, module_name):
        import importlib

        module = importlib.import_module(module_name)
        tree = ast.parse(inspect.getsource(module))
        names = set()
        for node in ast.walk(tree):
            if isinstance(node, ast.Name):
                names.add(node.id)
            elif isinstance(node, ast.Attribute):
                names.add(node.attr)
            elif isinstance(node, ast.ImportFrom):
                names.update(alias.name for alias in node.names)
            elif isinstance(node, ast.Import):
                names.update(alias.name for alias in node.names)
        forbidden = {"decrypt", "secret_material", "he_keygen", "HEKeyPair", "_mask_stream"}
        assert not (names & forbidden), f"{module_name} touches {names & forbidden}"

    def test_server_rejects_plaintext(self):
        from fedmark.fl.server import aggregate_round

        with pytest.raises(TypeError):
            aggregate_round([np.ones(4)], [1.0])
