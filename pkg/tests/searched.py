"""Published searched subnets, transcribed as compact block strings.

Tokens: ``U3/5/R`` unified FFN (E / K / act), ``F2/3/G`` fused FFN,
``M2/R`` attention block (V expansion / act).  An attention token always
precedes the FFN it is attached to.
"""

from hybridnas.subnet import FFNChoice, MHSAChoice, StageArch, SubnetArch

ACT = {"R": "relu", "G": "gelu"}

SEARCHED = {
    "cortex_150ms": ("R", [
        (32, "F2/3/R F2/3/R"),
        (40, "F2/3/R F2/3/R"),
        (96, "U3/3/R M2/R U3/3/R M2/R F2/3/R M2/R U4/3/R U2/5/R M2/R U3/3/R"),
        (248, "M2/R F3/3/R M2/G F3/3/G M2/R U3/3/R M2/G F3/3/G"),
    ], "4/R"),
    "cortex_150ms_5m": ("R", [
        (32, "F3/3/R F3/3/R"),
        (64, "U2/3/R F2/3/R"),
        (96, "U3/5/R M2/R U3/5/R M2/R U3/5/R M2/R U4/5/R U4/5/R M2/R U3/5/R"),
        (224, "M2/G U3/5/G M2/G U3/5/G M2/R U4/5/R M2/R U3/5/R"),
    ], "4/R"),
    "cortex_95ms": ("R", [
        (24, "F2/3/R F2/3/R"),
        (40, "U2/3/R F2/3/R"),
        (96, "U3/3/R M2/R U3/3/R M2/R U3/3/R M2/R U4/3/R U2/3/R M2/R U3/3/R"),
        (224, "M2/R U3/3/R M2/R U3/3/R M2/R U3/3/R M2/R U3/3/R"),
    ], "2/R"),
    "nano_20ms": ("R", [
        (32, "F3/3/R F3/3/R"),
        (64, "F3/3/G F3/3/G"),
        (96, "F3/3/R F3/3/R F3/3/R F3/3/R F3/3/G F3/3/G F3/3/R F3/3/G F3/3/G"),
        (224, "F3/3/G M2/G F3/3/G F3/3/G F3/3/G F3/3/R M2/G F3/3/G"),
    ], "2/G"),
    "nano_20ms_5m": ("R", [
        (32, "F4/3/G F3/3/R"),
        (64, "F2/3/G F2/3/G"),
        (120, "U3/5/R U3/5/R M2/G U2/5/G U2/5/R M2/G U3/5/G U3/5/R"),
        (248, "M2/G U3/5/G M2/G U3/5/G U3/5/G M2/R U3/5/R"),
    ], "2/R"),
    "nano_13ms": ("R", [
        (32, "U2/3/R F3/3/R"),
        (64, "U2/3/R U2/3/R"),
        (96, "F3/3/R F3/3/R F3/3/R F3/3/R F3/3/G F3/3/G"),
        (224, "M2/R F2/3/R F2/3/G M2/G F3/3/G F2/3/G"),
    ], "2/R"),
}


def _stage(width, text):
    ffns, mhsa, pending = [], [], None
    for tok in text.split():
        if tok[0] == "M":
            e, a = tok[1:].split("/")
            pending = MHSAChoice(int(e), ACT[a])
            continue
        e, k, a = tok[1:].split("/")
        ffns.append(FFNChoice("unified" if tok[0] == "U" else "fused", int(e), int(k), ACT[a]))
        mhsa.append(pending)
        pending = None
    assert pending is None
    return StageArch(width, tuple(ffns), tuple(mhsa))


def searched(name) -> SubnetArch:
    stem, stages, ds = SEARCHED[name]
    e, a = ds.split("/")
    return SubnetArch(ACT[stem], tuple(_stage(w, t) for w, t in stages),
                      (None, None, MHSAChoice(int(e), ACT[a])))
