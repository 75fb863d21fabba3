import os
from dotenv import load_dotenv

# Load .env from config folder
env_path = os.path.join(os.path.dirname(__file__), '..', 'config', '.env')
load_dotenv(env_path)

# Output
OUT_DIR = os.getenv("STRATO_OUT_DIR", "results")

# Logging
LOG_LEVEL = os.getenv("STRATO_LOG_LEVEL", "INFO").upper()

# Parallelism
WORKERS = max(1, int(os.getenv("STRATO_WORKERS", "1") or 1))
FFT_WORKERS = max(1, int(os.getenv("STRATO_FFT_WORKERS", "1") or 1))
