"""Regenerate the shipped synthetic panel (src/syncon/data/smoking_synthetic.csv)."""

from pathlib import Path

from syncon.fixtures import FIXTURE_NAME, smoking_like_panel
from syncon.panel import save_panel

if __name__ == "__main__":
    dest = Path(__file__).resolve().parents[1] / "src" / "syncon" / "data" / FIXTURE_NAME
    save_panel(smoking_like_panel(), dest)
    print(dest)
