"""Shared test corpora."""

# (expression, variables); sampled with u1 in [0.5, 1.5], everything else in [-1, 1]
DIFF_CORPUS = [
    ("u2^2/u1", ("u1", "u2")),
    ("u2*u3/u1", ("u1", "u2", "u3")),
    ("u1^1.4*exp(u5/u1)", ("u1", "u5")),
    ("sin(x1)*u2", ("x1", "u2")),
    ("cos(x2*x3) + x4^3", ("x2", "x3", "x4")),
    ("exp(-x1^2)*sqrt(u1)", ("x1", "u1")),
    ("ln(u1) - u5/u1", ("u1", "u5")),
    ("(u2 + u3)^2/(2*u1)", ("u1", "u2", "u3")),
    ("sin(x1 + x2)*cos(x3 - x4)", ("x1", "x2", "x3", "x4")),
    ("x1*x2*x3*x4*u1*u2", ("x1", "x2", "x3", "x4", "u1", "u2")),
    ("sqrt(u1^2 + u2^2 + u3^2)", ("u1", "u2", "u3")),
    ("u4^3 - 3*u4*u1 + 2", ("u1", "u4")),
    ("exp(sin(x1))*u5", ("x1", "u5")),
    ("1/(1 + x1^2)", ("x1",)),
    ("u1^u1", ("u1",)),
    ("-(u2^2)/u1^2 + u3", ("u1", "u2", "u3")),
    ("cos(u5)^2 + sin(u5)^2", ("u5",)),
    ("x2/u1 - x3*ln(u1 + 1)", ("x2", "x3", "u1")),
    ("(x1 - 2)^2*(x2 + 3)^-1", ("x1", "x2")),
    ("u1*exp(0.5*x1)*sin(2*x2 - x4)", ("u1", "x1", "x2", "x4")),
]

# closed-form payloads per family (group axioms, >= 3 each where the family has a payload)
FAMILY_CORPUS = {
    "XI1": [{"f": "1"}, {"f": "x1"}, {"f": "1 + 0.5*x1"}, {"f": "1 + x1^2"}],
    "XI5": [{"f": "x2*x3"}, {"f": "sin(x1 + x4)"}, {"f": "1 + x1*x2"}],
    "XI6": [{"f": "x2*x3"}, {"f": "sin(x1 + x4)"}, {"f": "1 + x1*x2"}],
    "XI7": [{"f": "x2*x3"}, {"f": "cos(x1)"}, {"f": "x4 - x1"}],
    "XI8": [{"f": "x1*x2"}, {"f": "exp(x3)"}, {"f": "x2 + x4^2"}],
    "XI9": [{"f": "0.3*x1*x2 + x4"}, {"f": "cos(x3)"}, {"f": "x1"}],
    "XI10": [{"f": "x1"}, {"f": "x1*x3^2"}, {"f": "exp(x2)"}],
    "XI11": [{"g1": "x2", "g2": "-x1", "g3": "0", "g4": "0"},
             {"g1": "x2*x3", "g2": "x1*x4", "g3": "sin(x1)", "g4": "x2"},
             {"g1": "x4^2", "g2": "x2", "g3": "-x3", "g4": "x1"}],
    "XI12": [{}],
    "EULER_COMPOSED": [
        {"m1": "0", "m2": "0.7*a", "m3": "0"},
        {"m1": "0.2*a", "m2": "0.5*((x1 + a)^2 - x1^2)", "m3": "0.3*a"},
        {"m1": "0.1*(sin(x1 + a) - sin(x1))", "m2": "0.5*a", "m3": "(x1 + a)^3/3 - x1^3/3"},
    ],
}

DIVERGENCE_FREE = [
    ("x2", "-x1", "0", "0"),
    ("x2*x3", "x1*x4", "sin(x1)", "x2"),
    ("x4^2", "x2", "-x3", "x1"),
    ("1", "2", "3", "4"),
    ("sin(x2)*x3", "x1^2 - x2*x4", "cos(x1)", "x4^2/2 + x2"),
]

DIVERGENCE_VIOLATIONS = [
    ("x1", "0", "0", "0"),
    ("0", "x2^2", "0", "0"),
    ("sin(x1)", "cos(x2)", "0", "0"),
    ("x2", "x2", "x3", "x4"),
    ("0", "0", "0", "exp(x4)"),
]
