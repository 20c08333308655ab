#!/usr/bin/env python3
"""
Test runner for the Tubelet Detection Engine
"""

import sys
import subprocess
from pathlib import Path


def run_tests(include_slow: bool = False):
    """Run unit tests, then the integration pipeline tests"""
    print("🧪 Tubelet Detection Engine Test Suite")
    print("=" * 50)

    # Ensure we're in the project root
    project_root = Path(__file__).parent.parent

    try:
        print("\n📦 Running Unit Tests...")
        result = subprocess.run([
            sys.executable, "-m", "pytest",
            "tests/unit/",
            "-v", "--tb=short"
        ], cwd=project_root)

        if result.returncode != 0:
            print("❌ Unit tests failed!")
            return False

        print("✅ Unit tests passed!")

        print("\n🔗 Running Integration Tests...")
        marker = "integration" if include_slow else "integration and not slow"
        result = subprocess.run([
            sys.executable, "-m", "pytest",
            "tests/integration/",
            "-v", "--tb=short", "-m", marker
        ], cwd=project_root)

        if result.returncode != 0:
            print("❌ Integration tests failed!")
            return False

        print("✅ Integration tests passed!")
        if not include_slow:
            print("\n⚠️  Skipped slow training scenarios (run with --slow)")

        print("\n🎉 All selected tests passed!")
        return True

    except subprocess.CalledProcessError as e:
        print(f"❌ Test execution failed: {e}")
        return False


if __name__ == "__main__":
    success = run_tests(include_slow="--slow" in sys.argv[1:])
    sys.exit(0 if success else 1)
