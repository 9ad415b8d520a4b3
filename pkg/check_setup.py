#!/usr/bin/env python3
"""Check setup and diagnose issues."""
import importlib
import sys
from pathlib import Path
from typing import List, Optional

from config import Config, load_run_config
from errors import ConfigurationError

REQUIRED_MODULES = ("numpy", "scipy", "pandas", "networkx", "dotenv", "sklearn", "statsmodels")


def check_file(filepath: str, description: str) -> bool:
    """Check if a file exists."""
    exists = Path(filepath).exists()
    status = "✅" if exists else "❌"
    print(f"{status} {description}: {filepath}")
    return exists


def check_module(module_name: str) -> bool:
    """Check if a Python module is installed."""
    try:
        module = importlib.import_module(module_name)
    except ImportError:
        print(f"❌ {module_name} is NOT installed")
        return False
    print(f"✅ {module_name} {getattr(module, '__version__', '')} is installed".rstrip())
    return True


def check_config(path: Optional[str]) -> bool:
    """Check that a run config loads and validates."""
    try:
        rc = load_run_config(path)
    except ConfigurationError as e:
        print(f"❌ Run config: {e}")
        return False
    print(f"✅ Run config: seed={rc.seed} n_users={rc.ecosystem.n_users} output_dir={rc.output_dir}")
    return True


def main(argv: Optional[List[str]] = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    config_path = argv[0] if argv else Config.DEFAULT_CONFIG

    print("🔍 Creator Feedback Lab - Setup Diagnostic")
    print("=" * 50)
    print()

    print("📦 Checking Python modules...")
    modules_ok = all([check_module(name) for name in REQUIRED_MODULES])
    print()

    print("📁 Checking files...")
    check_file(".env", "Environment file (optional)")
    config_ok = bool(config_path) and check_file(config_path, "Run config")
    if config_ok:
        config_ok = check_config(config_path)
    elif not config_path:
        print("❌ No run config given (pass a path or set FEEDLAB_CONFIG)")
    print()
    print("=" * 50)

    if not modules_ok or not config_ok:
        print()
        print("❌ Setup incomplete!")
        print()
        print("To fix:")
        print("1. Run: ./setup.sh")
        print("2. Or manually:")
        print("   - source venv/bin/activate")
        print("   - pip install -e '.[dev]'")
        print("   - cp .env.example .env")
        return 1

    print()
    print("✅ Setup looks good!")
    print()
    print("To run the pipeline:")
    print(f"  ./run.sh {config_path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
