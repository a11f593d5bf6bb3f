"""Independent SHA-1 oracle, hand-rolled from the algorithm definition.

Used to cross-check the library's digest path (which goes through hashlib)
and to recompute PCR folds in tests. Deliberately kept separate from the
package under test.
"""

import struct

_H0 = (0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476, 0xC3D2E1F0)
_MASK = 0xFFFFFFFF


def _rol(value, bits):
    return ((value << bits) | (value >> (32 - bits))) & _MASK


def sha1(data: bytes) -> bytes:
    """20-byte SHA-1 digest of data."""
    h0, h1, h2, h3, h4 = _H0

    length = len(data) * 8
    data = data + b"\x80"
    while len(data) % 64 != 56:
        data += b"\x00"
    data += struct.pack(">Q", length)

    for block_start in range(0, len(data), 64):
        w = list(struct.unpack(">16I", data[block_start : block_start + 64]))
        for t in range(16, 80):
            w.append(_rol(w[t - 3] ^ w[t - 8] ^ w[t - 14] ^ w[t - 16], 1))

        a, b, c, d, e = h0, h1, h2, h3, h4
        for t in range(80):
            if t < 20:
                f = (b & c) | ((~b) & d)
                k = 0x5A827999
            elif t < 40:
                f = b ^ c ^ d
                k = 0x6ED9EBA1
            elif t < 60:
                f = (b & c) | (b & d) | (c & d)
                k = 0x8F1BBCDC
            else:
                f = b ^ c ^ d
                k = 0xCA62C1D6
            temp = (_rol(a, 5) + f + e + k + w[t]) & _MASK
            e, d, c, b, a = d, c, _rol(b, 30), a, temp

        h0 = (h0 + a) & _MASK
        h1 = (h1 + b) & _MASK
        h2 = (h2 + c) & _MASK
        h3 = (h3 + d) & _MASK
        h4 = (h4 + e) & _MASK

    return struct.pack(">5I", h0, h1, h2, h3, h4)


def sha1_hex(data: bytes) -> str:
    return sha1(data).hex()


def fold_pcr(measurements) -> bytes:
    """Left-fold extend semantics: acc := sha1(acc || m), acc starts all-zero."""
    acc = b"\x00" * 20
    for m in measurements:
        acc = sha1(acc + m)
    return acc
