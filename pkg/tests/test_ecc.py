import itertools

import numpy as np

from hmrsim.ecc import CODE_BITS, EccStatus, ecc_decode, ecc_encode


def _words(n, seed):
    rng = np.random.default_rng(seed)
    return [int(w) for w in rng.integers(0, 1 << 32, size=n, dtype=np.uint64)]


def test_clean_codeword_decodes_ok():
    for word in (0, 1, 0xFFFF_FFFF, 0xDEAD_BEEF):
        result = ecc_decode(ecc_encode(word))
        assert result.word == word
        assert result.status == EccStatus.OK


def test_every_single_flip_is_corrected():
    for word in _words(1000, seed=1):
        cw = ecc_encode(word)
        for bit in range(CODE_BITS):
            result = ecc_decode(cw ^ (1 << bit))
            assert result.status == EccStatus.CORRECTED
            assert result.word == word
            assert result.bit == bit


def test_every_double_flip_is_flagged():
    pairs = list(itertools.combinations(range(CODE_BITS), 2))
    assert len(pairs) == 741
    for word in _words(100, seed=2):
        cw = ecc_encode(word)
        for a, b in pairs:
            assert ecc_decode(cw ^ (1 << a) ^ (1 << b)).status == EccStatus.UNCORRECTABLE


def test_codeword_fits_39_bits():
    assert ecc_encode(0xFFFF_FFFF) < 1 << CODE_BITS
