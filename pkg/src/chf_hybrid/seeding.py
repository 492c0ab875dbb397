"""Fan one master seed out into independent named streams.

``derive_seed(master, "member", i)`` hashes the master seed, a CRC of the
stream name and an index through splitmix64 and keeps 31 bits, so every
consumer (shuffle, ensemble members, tuner, posterior sampling, ...) gets
a reproducible seed that does not collide with the others.
"""
import zlib

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(master: int, stream: str, index: int = 0) -> int:
    tag = zlib.crc32(stream.encode())
    h = splitmix64((int(master) & _MASK) ^ (tag << 32))
    return splitmix64((h + int(index)) & _MASK) & 0x7FFFFFFF
