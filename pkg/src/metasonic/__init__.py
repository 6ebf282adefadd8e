"""Desk-scale simulator for ultrasonic (inaudible) voice-command injection.

Subpackages cover the transmit/receive signal chain (:mod:`metasonic.signals`),
psychoacoustic leakage auditing and the parametric shield model
(:mod:`metasonic.acoustics`), array field synthesis and layout ranking
(:mod:`metasonic.field`), the hotspot-scan feedback protocol
(:mod:`metasonic.feedback`), the attack control loop (:mod:`metasonic.attack`),
the scripted world model (:mod:`metasonic.sim`), and a CLI
(:mod:`metasonic.cli`).
"""

__version__ = "0.1.0"

from . import acoustics, attack, feedback, field, signals, sim  # noqa: F401
