import numpy as np
import pytest

from kslab.noise import NoiseStream, PermutedNoise


class TestCounterKeying:
    def test_block_row_is_pure_function_of_key(self):
        s = NoiseStream(1234)
        # particle i's draw must not depend on the block size
        big = s.normals(0, 5, 64, 2)
        small = s.normals(0, 5, 8, 2)
        assert np.array_equal(big[:8], small)
        for i in (0, 3, 7, 63):
            assert np.array_equal(s.particle_normals(0, 5, i, 2), big[i])

    def test_replay_identical(self):
        s = NoiseStream(99)
        a = s.normals(2, 17, 32, 3)
        b = s.normals(2, 17, 32, 3)
        assert np.array_equal(a, b)

    def test_distinct_keys_differ(self):
        s = NoiseStream(7)
        base = s.normals(0, 0, 16, 2)
        assert not np.array_equal(base, s.normals(0, 1, 16, 2))
        assert not np.array_equal(base, s.normals(1, 0, 16, 2))
        assert not np.array_equal(base, NoiseStream(8).normals(0, 0, 16, 2))

    def test_seed_wraps_to_uint64(self):
        a = NoiseStream(2**64 + 5).normals(0, 0, 4, 2)
        b = NoiseStream(5).normals(0, 0, 4, 2)
        assert np.array_equal(a, b)


class TestStatistics:
    def test_moments(self):
        s = NoiseStream(2024)
        z = np.concatenate([s.normals(0, k, 512, 2).ravel() for k in range(16)])
        n = z.size
        assert abs(z.mean()) < 4 / np.sqrt(n)
        assert abs(z.std() - 1.0) < 4 / np.sqrt(n)

    def test_independence_across_keys(self):
        s = NoiseStream(31337)
        n = 4096
        a = np.array([s.normals(0, k, 1, 1)[0, 0] for k in range(n)])
        b = np.array([s.normals(1, k, 1, 1)[0, 0] for k in range(n)])
        c = np.array([s.normals(0, k + n, 1, 1)[0, 0] for k in range(n)])
        for pair in ((a, b), (a, c), (b, c)):
            corr = np.corrcoef(pair[0], pair[1])[0, 1]
            assert abs(corr) <= 4 / np.sqrt(n)

    def test_independence_within_block(self):
        s = NoiseStream(555)
        block = s.normals(0, 0, 8192, 2)
        corr = np.corrcoef(block[:, 0], block[:, 1])[0, 1]
        assert abs(corr) <= 4 / np.sqrt(block.shape[0])

    def test_values_finite(self):
        z = NoiseStream(0).normals(0, 0, 10000, 3)
        assert np.all(np.isfinite(z))


class TestPermutedNoise:
    def test_rows_relabelled(self):
        s = NoiseStream(11)
        perm = np.array([2, 0, 3, 1])
        p = PermutedNoise(s, perm)
        base = s.normals(0, 4, 4, 2)
        seen = p.normals(0, 4, 4, 2)
        assert np.array_equal(seen, base[perm])

    def test_bad_size(self):
        p = PermutedNoise(NoiseStream(1), np.array([1, 0]))
        with pytest.raises(ValueError):
            p.normals(0, 0, 3, 2)
