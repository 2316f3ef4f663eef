"""Independent accounting oracle.

Walks the JSON form of a subnet, materializes every layer's weight tensor
shape and output size, and sums.  Shares no code with ``hybridnas.subnet``.
"""

from math import prod

N_HEAD, QK_DIM = 8, 16


def _conv(cin, cout, k, out_hw, groups=1):
    w = (cout, cin // groups, k, k)
    return {"params": prod(w) + cout, "macs": prod(w) * out_hw * out_hw}


def _linear(cin, cout, tokens):
    return {"params": cin * cout + cout, "macs": cin * cout * tokens}


def _attention(c, e, hw):
    n = hw * hw
    d = N_HEAD * QK_DIM
    dv = d * e
    layers = [_linear(c, d, n), _linear(c, d, n), _linear(c, dv, n), _linear(dv, c, n)]
    layers.append({"params": 0, "macs": n * n * d})   # Q K^T
    layers.append({"params": 0, "macs": n * n * dv})  # A V
    return layers


def layers(doc):
    hw = doc["input_resolution"]
    out = []
    c0 = doc["stages"][0]["width"]
    hw //= 2
    out.append(_conv(3, c0 // 2, 3, hw))
    hw //= 2
    out.append(_conv(c0 // 2, c0, 3, hw))
    prev = c0
    for i, st in enumerate(doc["stages"]):
        c = st["width"]
        if i > 0:
            hw //= 2
            out.append(_conv(prev, c, 3, hw))
            emb = doc["embeds"][i - 1]
            if emb is not None:
                out.extend(_attention(c, emb["expansion"], hw))
        for blk in st["blocks"]:
            if blk["mhsa"] is not None:
                out.extend(_attention(c, blk["mhsa"]["expansion"], hw))
            f = blk["ffn"]
            h = c * f["expansion"]
            if f["type"] == "unified":
                out += [_conv(c, h, 1, hw), _conv(h, h, f["kernel"], hw, groups=h), _conv(h, c, 1, hw)]
            else:
                out += [_conv(c, h, f["kernel"], hw), _conv(h, c, 1, hw)]
        prev = c
    out.append(_linear(prev, doc["num_classes"], 1))
    return out


def params(doc):
    return sum(l["params"] for l in layers(doc))


def flops(doc):
    return 2 * sum(l["macs"] for l in layers(doc))
