# Configuration for the herd unwrapping toolkit
import os
from dotenv import load_dotenv

load_dotenv()


def _env_float(name, default):
    value = os.getenv(name)
    return float(value) if value not in (None, "") else default


def _env_int(name, default):
    value = os.getenv(name)
    return int(value) if value not in (None, "") else default


# Recording
DEFAULT_FPS = _env_float("UNWRAP_FPS", 29.97)

# Track cleaning (animal keypoints)
CONFIDENCE_THRESHOLD = _env_float("UNWRAP_CONFIDENCE_THRESHOLD", 0.9)
JUMP_FACTOR = _env_float("UNWRAP_JUMP_FACTOR", 2.0)
BODY_VECTOR_SIGMA = _env_float("UNWRAP_BODY_VECTOR_SIGMA", 2.0)

# Landmark (tree) track filtering
LANDMARK_MIN_SAMPLES = _env_int("UNWRAP_LANDMARK_MIN_SAMPLES", 400)
LANDMARK_MAX_JUMP = _env_float("UNWRAP_LANDMARK_MAX_JUMP", 10.0)

# Unwrapping
KEYFRAME_STRIDE = _env_int("UNWRAP_KEYFRAME_STRIDE", 20)
MIN_CHAIN_PAIRS = _env_int("UNWRAP_MIN_CHAIN_PAIRS", 3)

# Herd metrics
SAVGOL_WINDOW = _env_int("UNWRAP_SAVGOL_WINDOW", 7)
SAVGOL_ORDER = _env_int("UNWRAP_SAVGOL_ORDER", 2)
BIN_FRAMES = _env_int("UNWRAP_BIN_FRAMES", 30)

# Output
VERSION = "1.0.0"
FLOAT_DIGITS = 9
THREADS = _env_int("UNWRAP_THREADS", 0)
LOG_LEVEL = os.getenv("UNWRAP_LOG_LEVEL", "WARNING")

CONTRACTS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "contracts")
