import os
from dotenv import load_dotenv

# ---------------------------
# Load environment
# ---------------------------
load_dotenv()

RUNS_DIR = os.getenv("GAZEMOTION_RUNS_DIR", "runs")
DATA_DIR = os.getenv("GAZEMOTION_DATA_DIR", "data")
LOG_LEVEL = os.getenv("GAZEMOTION_LOG_LEVEL", "INFO")

THREADS = int(os.getenv("GAZEMOTION_THREADS", "1"))
DEFAULT_SEED = int(os.getenv("GAZEMOTION_SEED", "0"))

if THREADS < 1:
    raise ValueError("GAZEMOTION_THREADS must be >= 1")
