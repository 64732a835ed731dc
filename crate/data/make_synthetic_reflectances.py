"""Regenerates synthetic_reflectances.csv (deterministic, no dependencies)."""
import math

wl = list(range(400, 701))
names, cols = [], []


def logistic(z):
    return 1 / (1 + math.exp(-z))


for s in range(16):
    a = [0.9 * math.sin(0.37 * s + 1.1 * k) + 0.2 for k in range(4)]
    col = []
    for l in wl:
        x = (l - 400) / 300
        z = (
            a[0] * math.cos(2 * math.pi * x * (1 + s % 3))
            + a[1] * math.sin(2 * math.pi * x * (0.5 + 0.25 * (s % 4)))
            + a[2] * (2 * x - 1)
            + a[3] * math.cos(math.pi * x * (s % 5))
        )
        col.append(0.02 + 0.96 * logistic(1.8 * z))
    names.append(f"smooth{s + 1:02d}")
    cols.append(col)
for g in (0.05, 0.2, 0.5, 0.85):
    names.append(f"gray{int(round(g * 100)):02d}")
    cols.append([g] * len(wl))

with open("synthetic_reflectances.csv", "w") as fh:
    fh.write("wavelength," + ",".join(names) + "\n")
    for i, l in enumerate(wl):
        fh.write(str(l) + "," + ",".join(f"{c[i]:.6f}" for c in cols) + "\n")
