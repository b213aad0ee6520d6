import sys

from src.aer_io import load_dataset


def main() -> None:
    root = sys.argv[1] if len(sys.argv) > 1 else "data/synth"
    recordings, class_names = load_dataset(root)
    print(f"Dataset: {root}")
    for label, name in enumerate(class_names):
        members = [r for r in recordings if r.label == label]
        events = sum(len(r) for r in members)
        rates = [r.mean_rate * 1e6 for r in members if r.mean_rate > 0]
        mean_rate = sum(rates) / len(rates) if rates else 0.0
        print(f"[{label}] {name} - recordings:{len(members)} events:{events} mean rate:{mean_rate:,.0f}/s")


if __name__ == "__main__":
    main()
