"""Write a synthetic copy corpus (target equals source) next to this script."""
import os
import random

LETTERS = "abcdefghijklmno"


def write(path, lines):
    with open(path, "w", encoding="utf-8") as f:
        f.writelines(line + "\n" for line in lines)


def main():
    here = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
    os.makedirs(here, exist_ok=True)
    rng = random.Random(0)
    for name, n in (("train", 5000), ("valid", 200), ("test", 200)):
        lines = [" ".join(rng.choice(LETTERS) for _ in range(rng.randint(5, 12))) for _ in range(n)]
        write(os.path.join(here, f"{name}.src"), lines)
        write(os.path.join(here, f"{name}.tgt"), lines)
    print(f"wrote copy corpus to {here}")


if __name__ == "__main__":
    main()
