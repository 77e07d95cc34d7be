"""Application settings."""

import os
from dotenv import load_dotenv

load_dotenv()

# Logging
LOG_LEVEL = os.getenv("DETEXT_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = os.getenv("DETEXT_LOG_FORMAT", "json")  # json or text

# Paths
DATA_DIR = os.getenv("DETEXT_DATA_DIR", "data")
OUT_DIR = os.getenv("DETEXT_OUT_DIR", "runs")

# Serving
BENCH_WARMUP = int(os.getenv("DETEXT_BENCH_WARMUP", "50"))
TWO_PASS_K = int(os.getenv("DETEXT_TWO_PASS_K", "300"))  # "hundreds of documents"

# Prometheus exporter (disabled unless a port is given)
METRICS_PORT = int(os.getenv("DETEXT_METRICS_PORT") or 0) or None

# Model defaults
DEFAULT_NUM_FILTERS = 64
DEFAULT_WORD_DIM = 64
DEFAULT_HIDDEN_SIZE = 200
DEFAULT_MAX_SOURCE_LEN = 16
DEFAULT_MAX_TARGET_LEN = 32
DEFAULT_MIN_COUNT = 1
DEFAULT_NUM_MERGES = 500

# Training defaults
DEFAULT_EPOCHS = 2
DEFAULT_BATCH_QUERIES = 256
DEFAULT_LR = 1e-3
DEFAULT_LR_BERT = 1e-5

# Masked-LM pretraining
DEFAULT_MASK_PROB = 0.15
DEFAULT_PRETRAIN_STEPS = 200
DEFAULT_PRETRAIN_BATCH = 32
