"""
Version of the nonlocal smoothness lab, resolved once at import.

Run manifests record both the version and where it came from, so outputs
produced from a dirty checkout can be told apart from pinned runs.

Order:
    APP_VERSION    pinned by the caller
    git describe   working copy (tag, or CalVer-dev-<hash> without tags)
    CalVer-dev     no git available
"""
import os
import subprocess
from datetime import datetime
from typing import Optional, Tuple

REPO_DIR = os.path.dirname(os.path.abspath(__file__))


def _calver_dev(suffix: str = "") -> str:
    stamp = datetime.now().strftime('%Y.%m.%d')
    return f"{stamp}-dev-{suffix}" if suffix else f"{stamp}-dev"


def _from_git() -> Optional[str]:
    try:
        result = subprocess.run(
            ['git', 'describe', '--tags', '--always', '--dirty'],
            capture_output=True, text=True, timeout=1, cwd=REPO_DIR,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    if result.returncode != 0:
        return None
    tag = result.stdout.strip()
    # bare abbreviated hash: the repository has no tags yet
    if '-' not in tag and len(tag) == 7:
        return _calver_dev(tag)
    return tag or None


def resolve_version() -> Tuple[str, str]:
    """(version, source) with source one of 'env', 'git', 'fallback'"""
    pinned = os.environ.get('APP_VERSION')
    if pinned:
        return pinned, 'env'
    described = _from_git()
    if described:
        return described, 'git'
    return _calver_dev(), 'fallback'


__version__, __version_source__ = resolve_version()
__license__ = "MIT"
