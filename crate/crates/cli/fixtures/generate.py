"""Regenerates the toy fixtures (deterministic)."""
import csv, json, math, random

rng = random.Random(20240611)


def cut(z, cuts):
    return 1 + sum(z > c for c in cuts)


def write(name, header, rows, levels):
    with open(name + ".csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    items = [{"name": h, "levels": levels[h]} for h in header if not h.startswith("x_")]
    with open(name + ".schema.json", "w") as f:
        json.dump({"items": items}, f, indent=2)
        f.write("\n")


# Single fitted fixture: three correlated items, one covariate.
rows = []
for _ in range(200):
    age = round(rng.gauss(0, 1), 4)
    f = rng.gauss(0, 1)
    z = [0.7 * f + 0.3 * age + 0.7 * rng.gauss(0, 1) for _ in range(3)]
    rows.append([cut(z[0], [-0.8, 0.0, 0.8]), cut(z[1], [-1.0, -0.3, 0.3, 1.0]), cut(z[2], [-0.6, 0.2, 0.9]), age])
write("toy", ["y1", "y2", "y3", "x_age"], rows, {"y1": 4, "y2": 5, "y3": 4})

# Nested pipeline: anchor (fim), target (mds), other instrument (oasis).
n = 120
anchor, target, other, later = [], [], [], []
for _ in range(n):
    age = round(rng.gauss(0, 1), 4)
    f = rng.gauss(0, 1)
    fim = [cut(0.8 * f + 0.6 * rng.gauss(0, 1), [-1.0, -0.3, 0.3, 1.0]) for _ in range(2)]
    hh = 1 if rng.random() < 1 / (1 + math.exp(-(0.6 * (sum(fim) - 6) - 0.2))) else 0
    mds = [cut(-0.8 * f + 0.6 * rng.gauss(0, 1), [-0.7, 0.0, 0.7]) for _ in range(2)]
    oas = [cut(0.8 * f + 0.6 * rng.gauss(0, 1), [-0.7, 0.0, 0.7]) for _ in range(2)]
    f2 = f + 0.3 + 0.2 * hh + 0.4 * rng.gauss(0, 1)
    mds2 = [cut(-0.8 * f2 + 0.6 * rng.gauss(0, 1), [-0.7, 0.0, 0.7]) for _ in range(2)]
    oas2 = [cut(0.8 * f2 + 0.6 * rng.gauss(0, 1), [-0.7, 0.0, 0.7]) for _ in range(2)]
    # Target scores are mostly, not exclusively, absent for the hh group.
    miss = rng.random() < (0.85 if hh else 0.10)
    miss_later = rng.random() < (0.85 if hh else 0.10)
    anchor.append(fim + [age, hh])
    target.append((["", ""] if miss else mds) + [age, hh])
    other.append(oas + [age, hh])
    later.append((["", ""] if miss_later else mds2) + oas2 + [age, hh])
levels = {"fim1": 5, "fim2": 5, "mds1": 4, "mds2": 4, "oasis1": 4, "oasis2": 4}
write("anchor", ["fim1", "fim2", "x_age", "x_hh"], anchor, levels)
write("target", ["mds1", "mds2", "x_age", "x_hh"], target, levels)
write("other", ["oasis1", "oasis2", "x_age", "x_hh"], other, levels)
write("later", ["mds1", "mds2", "oasis1", "oasis2", "x_age", "x_hh"], later, levels)
