#!/usr/bin/env python3
"""Check a run config and the data it points at before starting an experiment."""

import argparse
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from config.settings import DATA_DIR, LOG_FORMAT, LOG_LEVEL, METRICS_PORT, OUT_DIR, TWO_PASS_K
from detext.errors import ConfigError
from detext.run_config import SPLITS, RunConfig, load_run_config


def check_env_file():
    """Report whether a .env file is present (optional)."""
    env_path = Path(__file__).parent.parent / ".env"
    if env_path.exists():
        print("✅ .env file exists")
    else:
        print("ℹ️  no .env file, using defaults")
    return True


def show_settings():
    """Print the effective environment settings."""
    settings = {
        "DETEXT_LOG_LEVEL": LOG_LEVEL,
        "DETEXT_LOG_FORMAT": LOG_FORMAT,
        "DETEXT_DATA_DIR": DATA_DIR,
        "DETEXT_OUT_DIR": OUT_DIR,
        "DETEXT_TWO_PASS_K": TWO_PASS_K,
        "DETEXT_METRICS_PORT": METRICS_PORT or "disabled",
    }
    for name, value in settings.items():
        print(f"✅ {name} = {value}")
    if LOG_FORMAT not in ("json", "text"):
        print("❌ DETEXT_LOG_FORMAT must be json or text")
        return False
    return True


def check_run_config(path):
    """Validate the run config; returns it, or None on failure."""
    try:
        config = load_run_config(path)
    except ConfigError as e:
        print(f"❌ {e.message}")
        return None
    print(f"✅ run config {'defaults' if path is None else path} is valid")
    print(f"   encoder={config.model.encoder.value} ltr={config.train.ltr.value} "
          f"lr={config.train.lr:g} lr_bert={config.train.lr_bert:g} seed={config.seed}")
    return config


def check_data(config: RunConfig):
    """Check that every split file exists."""
    ok = True
    for split in SPLITS:
        path = config.data.split_path(split)
        if path.exists():
            print(f"✅ {split}: {path}")
        else:
            print(f"❌ {split}: {path} not found (run `detext gen` first)")
            ok = False
    return ok


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("config", nargs="?", help="TOML run config")
    args = parser.parse_args()

    print("🔍 DeText Configuration Check\n")
    results = []

    print("🔐 Environment:")
    results.append(check_env_file())
    results.append(show_settings())
    print()

    print("📄 Run config:")
    config = check_run_config(args.config)
    results.append(config is not None)
    print()

    if config is not None:
        print("📁 Data:")
        results.append(check_data(config))
        print()

    passed = sum(results)
    total = len(results)
    print(f"📊 Summary: {passed}/{total} checks passed")
    if passed == total:
        print("✅ All checks passed! Ready to run.")
        return 0
    print("⚠️  Some checks failed. Please fix issues before running.")
    return 1


if __name__ == "__main__":
    sys.exit(main())
