"""Default terrain classes.

Three known terrains (ranked concrete > grass > marble rocks) plus two
terrains that never appear in pre-adaptation data: ``pebble_pavement`` looks
nothing like concrete but feels almost the same, and ``bush`` feels unlike
anything known.
"""

from .world import ChannelSignature, TerrainClass, TextureNoise

CONCRETE, GRASS, MARBLE_ROCKS, PEBBLE_PAVEMENT, BUSH = range(5)

KNOWN_IDS = (CONCRETE, GRASS, MARBLE_ROCKS)
DEFAULT_RANKING = [CONCRETE, GRASS, MARBLE_ROCKS]


def _sig(freqs, amps, noise):
    return tuple(ChannelSignature(f, a, noise) for f, a in zip(freqs, amps))


_CONCRETE_FREQS = (22.0, 25.0, 30.0, 4.0, 6.0, 2.0)
_CONCRETE_AMPS = (0.2, 0.2, 0.3, 0.1, 0.15, 0.05)

TERRAINS = {
    CONCRETE: TerrainClass(
        CONCRETE, "concrete", (0.72, 0.71, 0.68), TextureNoise(0.06, 6.0, 2),
        _sig(_CONCRETE_FREQS, _CONCRETE_AMPS, 0.05), friction_slip=0.05,
    ),
    GRASS: TerrainClass(
        GRASS, "grass", (0.22, 0.52, 0.18), TextureNoise(0.18, 10.0, 3),
        _sig((8.0, 9.0, 12.0, 3.0, 4.0, 1.5), (0.4, 0.4, 0.5, 0.3, 0.3, 0.4), 0.08),
        friction_slip=0.2,
    ),
    MARBLE_ROCKS: TerrainClass(
        MARBLE_ROCKS, "marble_rocks", (0.42, 0.38, 0.35), TextureNoise(0.35, 5.0, 3),
        _sig((14.0, 16.0, 18.0, 5.0, 7.0, 3.0), (1.0, 1.0, 1.4, 0.6, 0.8, 0.2), 0.15),
        friction_slip=0.35,
    ),
    # concrete's signature, nudged
    PEBBLE_PAVEMENT: TerrainClass(
        PEBBLE_PAVEMENT, "pebble_pavement", (0.55, 0.48, 0.40), TextureNoise(0.30, 12.0, 2),
        _sig(tuple(f + 0.5 for f in _CONCRETE_FREQS), tuple(a * 1.1 for a in _CONCRETE_AMPS), 0.06),
        friction_slip=0.08,
    ),
    BUSH: TerrainClass(
        BUSH, "bush", (0.15, 0.35, 0.12), TextureNoise(0.30, 8.0, 3),
        _sig((40.0, 45.0, 50.0, 10.0, 12.0, 8.0), (2.5, 2.5, 3.0, 1.5, 2.0, 1.5), 0.3),
        friction_slip=0.5,
    ),
}


def known_terrains():
    return {i: TERRAINS[i] for i in KNOWN_IDS}
