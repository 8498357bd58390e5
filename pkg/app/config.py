import os
from dotenv import load_dotenv

load_dotenv()


def _env(key: str, default: str | None = None) -> str:
    val = os.getenv(key, default)
    if val is None:
        raise RuntimeError(f"Missing required env var: {key}")
    return val


def _int(key: str, default: str) -> int:
    # int(x, 0) понимает и "0x6666", и "26214"
    return int(_env(key, default), 0)


TPP_ETHERTYPE = _int("TPP_ETHERTYPE", "0x6666")
TPP_UDP_PORT = _int("TPP_UDP_PORT", "0x6666")
TPP_VERSION = _int("TPP_VERSION", "1")
TPP_MAX_INSTRUCTIONS = _int("TPP_MAX_INSTRUCTIONS", "5")
TPP_DEFAULT_HOPS = _int("TPP_DEFAULT_HOPS", "5")

MTU = _int("MTU", "1500")
MAX_MTU = 9000
if not (64 <= MTU <= MAX_MTU):
    raise RuntimeError(f"MTU must be within [64, {MAX_MTU}], got {MTU}")

DEFAULT_QUEUE_BYTES = _int("DEFAULT_QUEUE_BYTES", "150000")
# Размер буферной ячейки: occupancy-слова памяти коммутатора считают ячейки,
# а не байты (150 kB не помещаются в 16-битное слово).
CELL_BYTES = _int("CELL_BYTES", "64")
LINK_UTIL_INTERVAL_MS = float(os.getenv("LINK_UTIL_INTERVAL_MS", "1"))
QUEUE_SAMPLE_INTERVAL_MS = float(os.getenv("QUEUE_SAMPLE_INTERVAL_MS", "1"))

SIM_SEED = _int("SIM_SEED", "1")
OUTPUT_DIR = os.getenv("OUTPUT_DIR", "out")

DB_PATH = os.getenv("DB_PATH", "tppcp.db")

LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
PORT = int(os.getenv("PORT", "8000"))
