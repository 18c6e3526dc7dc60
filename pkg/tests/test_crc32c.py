from brclake.crc32c import crc32c


def test_rfc3720_vectors():
    # Known-answer vectors from the iSCSI CRC32C appendix
    assert crc32c(b"") == 0
    assert crc32c(b"123456789") == 0xE3069283
    assert crc32c(bytes(32)) == 0x8A9136AA
    assert crc32c(b"\xff" * 32) == 0x62A8AB43
    assert crc32c(bytes(range(32))) == 0x46DD794E


def test_incremental_equals_whole():
    data = bytes(range(256)) * 7
    split = crc32c(data[100:], crc32c(data[:100]))
    assert split == crc32c(data)


def test_single_bit_sensitivity():
    data = bytes(1000)
    base = crc32c(data)
    for bit in (0, 3999, 7001):
        flipped = bytearray(data)
        flipped[bit // 8] ^= 1 << (bit % 8)
        assert crc32c(bytes(flipped)) != base
