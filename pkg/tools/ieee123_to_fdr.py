"""Convert the published IEEE 123 node test feeder tables to ``.fdr`` format.

Usage::

    python tools/ieee123_to_fdr.py > src/feedervolt/data/ieee123.fdr

Tables below follow the public test-feeder data (line segment data, line
configurations in ohm/mile, spot loads, shunt capacitors, regulators). Open
switches and the 61-610 service transformer are left out; closed switches
become 10 ft configuration-1 segments. Regulators are split out to their own
output buses (``150r``, ``9r``, ``25r``, ``160r``) as in the usual OpenDSS
rendering. All loads use the ZIP coefficients of the case study. Five 1 MW
three-phase PV farms sit at 18, 47, 54, 76 and 101.
"""

import sys

FT_TO_KM = 0.0003048
MILE_TO_KM = 1.609344
ZIPV = "0.24 0.36 0.40 0.24 0.36 0.40 0.80"

# config: phases, then upper triangle of Z (ohm/mile) row-major over the listed phases
CONFIGS = {
    1: ("ABC", ["0.4576+j1.0780", "0.1560+j0.5017", "0.1535+j0.3849",
                "0.4666+j1.0482", "0.1580+j0.4236", "0.4615+j1.0651"]),
    2: ("ABC", ["0.4666+j1.0482", "0.1580+j0.4236", "0.1560+j0.5017",
                "0.4615+j1.0651", "0.1535+j0.3849", "0.4576+j1.0780"]),
    3: ("ABC", ["0.4615+j1.0651", "0.1535+j0.3849", "0.1580+j0.4236",
                "0.4576+j1.0780", "0.1560+j0.5017", "0.4666+j1.0482"]),
    4: ("ABC", ["0.4615+j1.0651", "0.1580+j0.4236", "0.1535+j0.3849",
                "0.4666+j1.0482", "0.1560+j0.5017", "0.4576+j1.0780"]),
    5: ("ABC", ["0.4666+j1.0482", "0.1560+j0.5017", "0.1580+j0.4236",
                "0.4576+j1.0780", "0.1535+j0.3849", "0.4615+j1.0651"]),
    6: ("ABC", ["0.4576+j1.0780", "0.1535+j0.3849", "0.1560+j0.5017",
                "0.4615+j1.0651", "0.1580+j0.4236", "0.4666+j1.0482"]),
    7: ("AC", ["0.4576+j1.0780", "0.1535+j0.3849", "0.4615+j1.0651"]),
    8: ("AB", ["0.4576+j1.0780", "0.1535+j0.3849", "0.4615+j1.0651"]),
    9: ("A", ["1.3292+j1.3475"]),
    10: ("B", ["1.3292+j1.3475"]),
    11: ("C", ["1.3292+j1.3475"]),
    12: ("ABC", ["1.5209+j0.7521", "0.5198+j0.2775", "0.4924+j0.2157",
                 "1.5329+j0.7162", "0.5198+j0.2775", "1.5209+j0.7521"]),
}

# from, to, length (ft), config
SEGMENTS = """
1 2 175 10
1 3 250 11
1 7 300 1
3 4 200 11
3 5 325 11
5 6 250 11
7 8 200 1
8 12 225 10
8 9 225 9
8 13 300 1
9r 14 425 9
13 34 150 11
13 18 825 2
14 11 250 9
14 10 250 9
15 16 375 11
15 17 350 11
18 19 250 9
18 21 300 2
19 20 325 9
21 22 525 10
21 23 250 2
23 24 550 11
23 25 275 2
25r 26 350 7
25 28 200 2
26 27 275 7
26 31 225 11
27 33 500 9
28 29 300 2
29 30 350 2
30 250 200 2
31 32 300 11
34 15 100 11
35 36 650 8
35 40 250 1
36 37 300 9
36 38 250 10
38 39 325 10
40 41 325 11
40 42 250 1
42 43 500 10
42 44 200 1
44 45 200 9
44 47 250 1
45 46 300 9
47 48 150 4
47 49 250 4
49 50 250 4
50 51 250 4
52 53 200 1
53 54 125 1
54 55 275 1
54 57 350 3
55 56 275 1
57 58 250 10
57 60 750 3
58 59 250 10
60 61 550 5
60 62 250 12
62 63 175 12
63 64 350 12
64 65 425 12
65 66 325 12
67 68 200 9
67 72 275 3
67 97 250 3
68 69 275 9
69 70 325 9
70 71 275 9
72 73 275 11
72 76 200 3
73 74 350 11
74 75 400 11
76 77 400 6
76 86 700 3
77 78 100 6
78 79 225 6
78 80 475 6
80 81 175 6
81 82 250 6
81 84 675 11
82 83 250 6
84 85 475 11
86 87 450 6
87 88 175 9
87 89 275 6
89 90 225 10
89 91 225 6
91 92 300 11
91 93 225 6
93 94 275 9
93 95 300 6
95 96 200 10
97 98 275 3
98 99 550 3
99 100 300 3
100 450 800 3
101 102 225 11
101 105 275 3
102 103 325 11
103 104 700 11
105 106 225 10
105 108 325 3
106 107 575 10
108 109 450 9
108 300 1000 3
109 110 300 9
110 111 575 9
110 112 125 9
112 113 525 9
113 114 325 9
135 35 375 4
149 1 400 1
152 52 400 1
160r 67 350 6
197 101 250 3
150r 149 10 1
13 152 10 1
18 135 10 1
60 160 10 1
97 197 10 1
"""

# bus, phase, kW, kVAR (wye equivalents of the published spot loads)
LOADS = """
1 A 40 20
2 B 20 10
4 C 40 20
5 C 20 10
6 C 40 20
7 A 20 10
9 A 40 20
10 A 20 10
11 A 40 20
12 B 20 10
16 C 40 20
17 C 20 10
19 A 40 20
20 A 40 20
22 B 40 20
24 C 40 20
28 A 40 20
29 A 40 20
30 C 40 20
31 C 20 10
32 C 20 10
33 A 40 20
34 C 40 20
35 A 40 20
37 A 40 20
38 B 20 10
39 B 20 10
41 C 20 10
42 A 20 10
43 B 40 20
45 A 20 10
46 A 20 10
47 A 35 25
47 B 35 25
47 C 35 25
48 A 70 50
48 B 70 50
48 C 70 50
49 A 35 25
49 B 70 50
49 C 35 20
50 C 40 20
51 A 20 10
52 A 40 20
53 A 40 20
55 A 20 10
56 B 20 10
58 B 20 10
59 B 20 10
60 A 20 10
62 C 40 20
63 A 40 20
64 B 75 35
65 A 35 25
65 B 35 25
65 C 70 50
66 C 75 35
68 A 20 10
69 A 40 20
70 A 20 10
71 A 40 20
73 C 40 20
74 C 40 20
75 C 40 20
76 A 105 80
76 B 70 50
76 C 70 50
77 B 40 20
79 A 40 20
80 B 40 20
82 A 40 20
83 C 20 10
84 C 20 10
85 C 40 20
86 B 20 10
87 B 40 20
88 A 40 20
90 B 40 20
92 C 40 20
94 A 40 20
95 B 20 10
96 B 20 10
98 A 40 20
99 B 40 20
100 C 40 20
102 C 20 10
103 C 40 20
104 C 40 20
106 B 40 20
107 B 40 20
109 A 40 20
111 A 20 10
112 A 20 10
113 A 40 20
114 A 20 10
"""

CAPS = [("83", "ABC", 600), ("88", "A", 50), ("90", "B", 50), ("92", "C", 50)]

# from, to (output bus), phases, band (pu), setpoint (pu)
REGS = [
    ("150", "150r", "ABC", 0.0167, 1.0300),
    ("9", "9r", "A", 0.0167, 1.0000),
    ("25", "25r", "A", 0.0083, 1.0000),
    ("25", "25r", "C", 0.0083, 1.0000),
    ("160", "160r", "A", 0.0167, 1.0150),
    ("160", "160r", "B", 0.0167, 1.0150),
    ("160", "160r", "C", 0.0167, 1.0150),
]

PV = [("18", "pv1"), ("47", "pv2"), ("54", "pv3"), ("76", "pv4"), ("101", "pv5")]


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
    re_s, im_s = entry.split("+j")
    return f"{float(re_s) / MILE_TO_KM:.6f}+j{float(im_s) / MILE_TO_KM:.6f}"


def main(out=sys.stdout):
    segs = [line.split() for line in SEGMENTS.strip().splitlines()]
    phases = {"150": "ABC", "150r": "ABC"}
    # bus phases follow the feeding segment; resolve in file order (parents listed first)
    for f, t, _, cfg in segs:
        phases[t] = CONFIGS[int(cfg)][0]
    phases["9r"] = "A"
    phases["25r"] = "AC"
    phases["160r"] = "ABC"

    w = out.write
    w("# IEEE 123 node test feeder, 4.16 kV, generated by tools/ieee123_to_fdr.py\n")
    w("# source: substation bus 150 behind the three-phase LTC (150 -> 150r)\n\n")
    order = ["150", "150r"]
    for f, t, _, _ in segs:
        for b in (f, t):
            if b not in order:
                order.append(b)
    for extra in ("9r", "25r", "160r"):
        if extra not in order:
            order.append(extra)
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
    w("\ndvc 8 1000\n")


if __name__ == "__main__":
    main()
