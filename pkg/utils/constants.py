"""
Frozen constants of the matcher and the template representation.

DEFAULT_THRESHOLD is the verifier operating point: the midpoint of the largest
genuine score and the smallest impostor score of the calibration oracle
(scripts/calibrate_threshold.py, CALIBRATION_TRIALS trials each, seed
CALIBRATION_SEED). Re-run the script before changing it.
"""

TEMPLATE_DIM = 64
FIXED_POINT_SCALE = 1024
INT16_MIN = -32768
INT16_MAX = 32767

# Genuine re-capture noise and impostor spread, in fixed-point units.
GENUINE_NOISE = 16
TEMPLATE_SPREAD = 1024

# Genuine scores are bounded by TEMPLATE_DIM * GENUINE_NOISE**2 = 16384.
# Oracle run: genuine max 8594, impostor min 20432467.
DEFAULT_THRESHOLD = 10_220_530

CALIBRATION_TRIALS = 100_000
CALIBRATION_SEED = 20190101

HASH_SIZE = 32
BLOCK_VERSION = 1
CHAIN_MAGIC = b"BBC1"
