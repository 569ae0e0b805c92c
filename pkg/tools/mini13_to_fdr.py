"""Build the small CI feeder from the IEEE 13 node test feeder tables.

Usage::

    python tools/mini13_to_fdr.py > src/feedervolt/data/mini13.fdr

Changes from the published case: the 633-634 transformer and the 671-692
switch become short lines, delta loads are split into wye equivalents, the
distributed 632-671 load sits at 670, and the substation regulator is kept
as a ganged LTC while a three-phase LVR (632 -> 670) feeds the 671 side so
that taps respond to load and PV. Three 1 MW PV farms sit at 634, 675, 680.
"""

import sys

FT_TO_KM = 0.0003048
MILE_TO_KM = 1.609344
ZIPV = "0.24 0.36 0.40 0.24 0.36 0.40 0.80"

# phases, upper triangle of Z in ohm/mile
CONFIGS = {
    601: ("ABC", ["0.3465+j1.0179", "0.1560+j0.5017", "0.1580+j0.4236",
                  "0.3375+j1.0478", "0.1535+j0.3849", "0.3414+j1.0348"]),
    602: ("ABC", ["0.7526+j1.1814", "0.1580+j0.4236", "0.1560+j0.5017",
                  "0.7475+j1.1983", "0.1535+j0.3849", "0.7436+j1.2112"]),
    603: ("BC", ["1.3294+j1.3471", "0.2066+j0.4591", "1.3238+j1.3569"]),
    604: ("AC", ["1.3238+j1.3569", "0.2066+j0.4591", "1.3294+j1.3471"]),
    605: ("C", ["1.3292+j1.3475"]),
    606: ("ABC", ["0.7982+j0.4463", "0.3192+j0.0328", "0.2849-j0.0143",
                  "0.7891+j0.4041", "0.3192+j0.0328", "0.7982+j0.4463"]),
    607: ("A", ["1.3425+j0.5124"]),
}

SEGMENTS = """
650r 632 2000 601
632 633 500 602
633 634 50 602
632 645 500 603
645 646 300 603
670 671 2000 601
671 680 1000 601
671 684 300 604
684 611 300 605
684 652 800 607
671 692 10 606
692 675 500 606
"""

# bus, phase, kW, kVAR
LOADS = """
634 A 160 110
634 B 120 90
634 C 120 90
645 B 170 125
646 B 115 66
646 C 115 66
652 A 128 86
670 A 17 10
670 B 66 38
670 C 117 68
671 A 385 220
671 B 385 220
671 C 385 220
675 A 485 190
675 B 68 60
675 C 290 212
692 A 85 76
692 C 85 75
611 C 170 80
"""

CAPS = [("675", "ABC", 600), ("611", "C", 100)]
REGS = [
    ("650", "650r", "ABC", 0.0167, 1.0300),
    ("632", "670", "A", 0.0167, 1.0200),
    ("632", "670", "B", 0.0167, 1.0200),
    ("632", "670", "C", 0.0167, 1.0200),
]
PV = [("634", "pv1"), ("675", "pv2"), ("680", "pv3")]


def full_matrix(phases, upper):
    n = len(phases)
    m = [[None] * n for _ in range(n)]
    k = 0
    for i in range(n):
        for j in range(i, n):
            m[i][j] = m[j][i] = upper[k]
            k += 1
    return m


def per_km(entry):
    sign = "-" if "-j" in entry else "+"
    re_s, im_s = entry.split(sign + "j")
    return f"{float(re_s) / MILE_TO_KM:.6f}{sign}j{float(im_s) / MILE_TO_KM:.6f}"


def main(out=sys.stdout):
    segs = [line.split() for line in SEGMENTS.strip().splitlines()]
    phases = {"650": "ABC", "650r": "ABC", "670": "ABC"}
    for _, t, _, cfg in segs:
        phases[t] = CONFIGS[int(cfg)][0]
    w = out.write
    w("# 13-bus mini feeder (IEEE 13 node based), 4.16 kV, generated by tools/mini13_to_fdr.py\n\n")
    order = ["650", "650r"]
    for f, t, _, _ in segs:
        for b in (f, t):
            if b not in order:
                order.append(b)
    for b in order:
        w(f"bus {b} {phases[b]} 4.16\n")
    w("\n")
    for f, t, ft, cfg in segs:
        ph, upper = CONFIGS[int(cfg)]
        z = full_matrix(ph, [per_km(e) for e in upper])
        entries = " ".join(z[i][j] for i in range(len(ph)) for j in range(len(ph)))
        w(f"line {f} {t} {ph} {float(ft) * FT_TO_KM:.6f} {entries}\n")
    w("\n")
    for f, t, ph, band, setpt in REGS:
        w(f"reg {f} {t} {ph} {band} {setpt}\n")
    w("\n")
    for row in LOADS.strip().splitlines():
        b, ph, p, q = row.split()
        w(f"load {b} {ph} {p} {q} {ZIPV}\n")
    w("\n")
    for b, ph, kvar in CAPS:
        w(f"cap {b} {ph} {kvar}\n")
    for b, prof in PV:
        w(f"pv {b} ABC 1000 {prof}\n")
    w("\ndvc 633 1000\n")


if __name__ == "__main__":
    main()
