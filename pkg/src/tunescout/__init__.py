"""tunescout: on-device continuous music recognition.

A low-cost gatekeeper detector decides when music is present, a neural
fingerprinter emits one compact embedding per second, and a partitioned,
product-quantized fingerprint database with density-adaptive sequence
matching identifies the song. Everything runs offline.
"""

__version__ = "0.1.0"
