"""Write the built-in scenarios to scripts/scenarios/*.ini as editable starting points."""

from pathlib import Path

from tabsim.scenarios import SCENARIOS

HERE = Path(__file__).resolve().parent / "scenarios"


def main():
    HERE.mkdir(exist_ok=True)
    for name, text in SCENARIOS.items():
        (HERE / f"{name}.ini").write_text(text, encoding="utf-8")
        print(HERE / f"{name}.ini")


if __name__ == "__main__":
    main()
