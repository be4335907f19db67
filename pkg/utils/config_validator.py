"""
Configuration validation utilities for the nonlocal smoothness lab.

Validates the LAB_* environment variables and provides helpful error messages.
"""
import os
import sys

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def _positive_int(value):
    return int(value) >= 1


def _non_negative_int(value):
    return int(value) >= 0


def _positive_float(value):
    return float(value) > 0


def _even_grid(value):
    return int(value) >= 8 and int(value) % 2 == 0


def _grid(value):
    return int(value) >= 8


class ConfigValidator:
    """Validates configuration and provides helpful error messages"""

    # (name, default, parser, check, requirement)
    OPTIONAL_CONFIG = [
        ("LAB_OUTPUT_DIR", "out", str, None, "a directory path"),
        ("LAB_THREADS", "1", int, _positive_int, "an integer >= 1"),
        ("LAB_SEED", "0", int, _non_negative_int, "an integer >= 0"),
        ("LAB_RE_WINDOW", "8.0", float, _positive_float, "a number > 0"),
        ("LAB_GRID_N_OMEGA", "256", int, _even_grid, "an even integer >= 8"),
        ("LAB_GRID_N_T", "512", int, _grid, "an integer >= 8"),
        ("LAB_TRUNCATION_T", "12.0", float, _positive_float, "a number > 0"),
        ("LAB_LOG_LEVEL", "INFO", str, lambda v: v.upper() in LOG_LEVELS, f"one of {', '.join(LOG_LEVELS)}"),
    ]

    @staticmethod
    def collect_errors():
        """Return a list of error messages for invalid LAB_* values"""
        errors = []
        for var_name, default, parser, check, requirement in ConfigValidator.OPTIONAL_CONFIG:
            value = os.environ.get(var_name, default).strip()
            if not value:
                errors.append(
                    f"❌ {var_name} is empty\n"
                    f"   → Expected {requirement}\n"
                    f"   → Unset it to use the default '{default}'"
                )
                continue
            try:
                parser(value)
                ok = check is None or check(value)
            except ValueError:
                ok = False
            if not ok:
                errors.append(
                    f"❌ {var_name} must be {requirement}\n"
                    f"   → Current value: '{value}'\n"
                    f"   → Example: {var_name}={default}"
                )
        return errors

    @staticmethod
    def validate_all():
        """
        Validate all configuration.
        Returns True if valid, exits with error message if invalid.
        """
        errors = ConfigValidator.collect_errors()

        if errors:
            print("\n" + "="*70)
            print("⚠️  CONFIGURATION ERRORS DETECTED")
            print("="*70 + "\n")

            for error in errors:
                print(error)
                print()

            print("="*70)
            print("📖 For configuration options, see SETUP.md")
            print("="*70 + "\n")

            sys.exit(1)

        return True

    @staticmethod
    def print_config_summary():
        """Print a summary of the effective configuration"""
        print("\n" + "="*70)
        print("📋 Configuration Summary")
        print("="*70)

        get = os.environ.get
        print(f"  Output dir:      {get('LAB_OUTPUT_DIR', 'out')}")
        print(f"  Work pool:       {get('LAB_THREADS', '1')} worker(s), seed {get('LAB_SEED', '0')}")
        print(f"  Re window:       ±{get('LAB_RE_WINDOW', '8.0')}")
        print(f"  Default grid:    {get('LAB_GRID_N_OMEGA', '256')} (omega) x {get('LAB_GRID_N_T', '512')} (t), "
              f"T = {get('LAB_TRUNCATION_T', '12.0')}")
        print(f"  Log level:       {get('LAB_LOG_LEVEL', 'INFO').upper()}")

        print("="*70 + "\n")


if __name__ == "__main__":
    ConfigValidator.validate_all()
    ConfigValidator.print_config_summary()
