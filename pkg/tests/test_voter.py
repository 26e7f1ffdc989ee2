import numpy as np

from hmrsim.core import BUNDLE_FIELDS, GATED, BackupPorts, OutputBundle
from hmrsim.hmr import check_pair, majority, vote_ports, vote_triple


def _random_bundle(rng) -> OutputBundle:
    return OutputBundle(*(int(rng.integers(0, 1 << width)) for _, width in BUNDLE_FIELDS))


def _bitwise_oracle(a: int, b: int, c: int) -> int:
    out = 0
    for bit in range(32):
        ones = (a >> bit & 1) + (b >> bit & 1) + (c >> bit & 1)
        out |= int(ones >= 2) << bit
    return out


def test_majority_matches_per_bit_oracle():
    rng = np.random.default_rng(7)
    for _ in range(10_000):
        a, b, c = (int(x) for x in rng.integers(0, 1 << 32, size=3, dtype=np.uint64))
        assert majority(a, b, c) == _bitwise_oracle(a, b, c)


def test_checker_gates_iff_inputs_differ():
    rng = np.random.default_rng(8)
    for i in range(10_000):
        a = _random_bundle(rng)
        b = a if i % 2 else _random_bundle(rng)
        result = check_pair(a, b)
        assert result.error == (a != b)
        assert result.output == (GATED if a != b else a)


def test_single_dissenter_is_outvoted():
    good = OutputBundle(0x100, 1, 0x1000_0000, 42, 1, 0xF)
    bad = good._replace(wdata=43)
    for slot in range(3):
        bundles = [good, good, good]
        bundles[slot] = bad
        vote = vote_triple(*bundles)
        assert vote.error
        assert vote.output == good
        assert vote.dissenter == slot
        assert not vote.group_failure


def test_unanimous_vote_has_no_error():
    b = OutputBundle(0x40)
    assert vote_triple(b, b, b) == (b, False, None, False)


def test_three_way_disagreement_is_a_group_failure():
    a = OutputBundle(0x1)
    b = OutputBundle(0x2)
    c = OutputBundle(0x4)
    vote = vote_triple(a, b, c)
    assert vote.error
    assert vote.group_failure
    assert vote.dissenter is None


def test_two_slots_off_the_majority_is_a_group_failure():
    good = OutputBundle(0x100, 1, 0x1000_0000, 42, 1, 0xF)
    vote = vote_triple(good._replace(wdata=43), good._replace(addr=0x1000_0004), good)
    assert vote.output == good
    assert vote.dissenter is None
    assert vote.group_failure


def test_vote_ports_prefers_agreeing_pair():
    good = BackupPorts(0x44, ((5, 1),))
    bad = BackupPorts(0x44, ((5, 9),))
    assert vote_ports([good, good]) == (good, False)
    assert vote_ports([bad, good, good]) == (good, True)
    assert vote_ports([good, bad]) == (good, True)
