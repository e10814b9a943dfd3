"""Bundled reference values used as regression targets by reproduce-tables.

BP thresholds and optimal repetition ratios for the 4-state rate-1/2
component code at rates {3/4, 1/2, 1/3} (uncoupled and coupling memories
1/3/5), and MAP thresholds of the uncoupled ensembles at lambda = 1/q for
2-, 4- and 8-state components.  Ratio entries are either a point value or a
(lo, hi) plateau.  ``feasible`` marks cells the bundled manifest runs at desk
scale; 8-state MAP cells take hours (128-subset chains) and stay opt-in.
"""

from fractions import Fraction

# (rate, q) -> {column: (lambda, eps_bp)}; columns 0 = uncoupled, else memory m.
BP_REFERENCE = {
    ("3/4", 2): {0: ((0.287, 0.313), 0.2115), 1: (0.5, 0.2326), 3: (0.5, 0.2352), 5: (0.5, 0.2352)},
    ("3/4", 4): {0: (0.172, 0.2268), 1: ((0.201, 0.206), 0.2380), 3: (0.24, 0.2430), 5: (0.25, 0.2443)},
    ("3/4", 6): {0: (0.13, 0.2218), 1: (0.14, 0.2406), 3: ((0.152, 0.154), 0.2442), 5: ((0.162, 0.163), 0.2457)},
    ("1/2", 2): {0: ((0.184, 0.213), 0.4698), 1: (0.44, 0.4907), 3: (0.5, 0.4938), 5: (0.5, 0.4938)},
    ("1/2", 4): {0: (0.147, 0.4849), 1: ((0.187, 0.189), 0.4940), 3: (0.23, 0.4969), 5: (0.25, 0.4978)},
    ("1/2", 6): {0: (0.12, 0.4747), 1: (0.131, 0.4952), 3: ((0.150, 0.151), 0.4974), 5: ((0.156, 0.160), 0.4982)},
    ("1/3", 2): {0: ((0.088, 0.124), 0.6446), 1: ((0.37, 0.39), 0.6627), 3: (0.5, 0.6647), 5: (0.5, 0.6647)},
    ("1/3", 4): {0: ((0.107, 0.108), 0.6583), 1: ((0.162, 0.172), 0.6642), 3: ((0.216, 0.229), 0.6656), 5: (0.25, 0.6660)},
    ("1/3", 6): {0: ((0.104, 0.105), 0.6512), 1: ((0.121, 0.122), 0.6648), 3: ((0.138, 0.146), 0.6658), 5: ((0.151, 0.158), 0.6661)},
}

# (rate, states) -> {q: eps_map}, with lambda = 1/q.
MAP_REFERENCE = {
    ("9/10", 2): {2: 0.0751, 3: 0.0846, 4: 0.0888, 5: 0.0913, 6: 0.0928, 50: 0.0992},
    ("9/10", 4): {2: 0.0882, 3: 0.0932, 4: 0.0952, 5: 0.0963, 6: 0.0970, 50: 0.0996},
    ("9/10", 8): {2: 0.0940, 3: 0.0966, 4: 0.0977, 5: 0.0982, 6: 0.0986, 50: 0.0998},
    ("4/5", 2): {2: 0.1582, 3: 0.1747, 4: 0.1819, 5: 0.1859, 6: 0.1884, 50: 0.1987},
    ("4/5", 4): {2: 0.1848, 3: 0.1915, 4: 0.1941, 5: 0.1955, 6: 0.1964, 50: 0.1996},
    ("4/5", 8): {2: 0.1930, 3: 0.1962, 4: 0.1975, 5: 0.1981, 6: 0.1985, 50: 0.1998},
    ("3/4", 2): {2: 0.2027, 3: 0.2217, 4: 0.2298, 5: 0.2343, 6: 0.2372, 50: 0.2486},
    ("3/4", 4): {2: 0.2352, 3: 0.2418, 4: 0.2444, 5: 0.2457, 6: 0.2466, 50: 0.2496},
    ("3/4", 8): {2: 0.2435, 3: 0.2466, 4: 0.2477, 5: 0.2483, 6: 0.2486, 50: 0.2498},
    ("2/3", 2): {2: 0.2811, 3: 0.3027, 4: 0.3116, 5: 0.3165, 6: 0.3196, 50: 0.3318},
    ("2/3", 4): {2: 0.3209, 3: 0.3266, 4: 0.3288, 5: 0.3299, 6: 0.3306, 50: 0.3330},
    ("2/3", 8): {2: 0.3282, 3: 0.3307, 4: 0.3316, 5: 0.3321, 6: 0.3323, 50: 0.3332},
    ("1/2", 2): {2: 0.4520, 3: 0.4727, 4: 0.4809, 5: 0.4854, 6: 0.4881, 50: 0.4987},
    ("1/2", 4): {2: 0.4938, 3: 0.4968, 4: 0.4979, 5: 0.4985, 6: 0.4988, 50: 0.4998},
    ("1/2", 8): {2: 0.4976, 3: 0.4989, 4: 0.4993, 5: 0.4995, 6: 0.4996, 50: 0.4999},
    ("1/3", 2): {2: 0.6352, 3: 0.6493, 4: 0.6548, 5: 0.6576, 6: 0.6594, 50: 0.6659},
    ("1/3", 4): {2: 0.6647, 3: 0.6657, 4: 0.6661, 5: 0.6662, 6: 0.6663, 50: 0.6666},
    ("1/3", 8): {2: 0.6659, 3: 0.6663, 4: 0.6665, 5: 0.6665, 6: 0.6665, 50: 0.6666},
}

BP_TOL = 5e-4
MAP_TOL = 1e-3


def lam_point(entry):
    """Representative repetition ratio of a reference cell (plateau midpoint)."""
    lam = entry[0]
    return 0.5 * (lam[0] + lam[1]) if isinstance(lam, tuple) else lam


def bp_cells(memories=(0, 1), rates=None):
    """Flat list of (rate, q, m, lambda, eps_ref) reference threshold cells."""
    out = []
    for (rate, q), cols in BP_REFERENCE.items():
        if rates and rate not in rates:
            continue
        for m, entry in cols.items():
            if m in memories:
                out.append((Fraction(rate), q, m, lam_point(entry), entry[1]))
    return out


def map_cells(states=(2, 4), rates=None, q_values=None):
    out = []
    for (rate, s), cols in MAP_REFERENCE.items():
        if s not in states:
            continue
        if rates and rate not in rates:
            continue
        for q, eps in cols.items():
            if q_values and q not in q_values:
                continue
            out.append((Fraction(rate), s, q, eps))
    return out
