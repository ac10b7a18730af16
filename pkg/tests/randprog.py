"""Hypothesis strategies producing small valid PIL programs."""

from hypothesis import strategies as st

_OPS = ("+", "-", "*", "/", "%", "==", "!=", "<", "<=", ">", ">=", "&&", "||")


@st.composite
def expr(draw, names, depth=2, pkt=True):
    if depth == 0 or draw(st.integers(0, 3)) == 0:
        if names and draw(st.booleans()):
            return draw(st.sampled_from(names))
        return str(draw(st.integers(-300, 300)))
    kind = draw(st.integers(0, 5))
    if kind == 0 and pkt:
        return f"pkt[{draw(st.integers(0, 3))}]"
    if kind == 1:
        return f"(-{draw(expr(names, depth - 1, pkt))})"
    if kind == 2:
        return f"!({draw(expr(names, depth - 1, pkt))})"
    a = draw(expr(names, depth - 1, pkt))
    b = draw(expr(names, depth - 1, pkt))
    return f"({a} {draw(st.sampled_from(_OPS))} {b})"


@st.composite
def block(draw, names, counter, depth, pad):
    out = []
    for _ in range(draw(st.integers(1, 4))):
        kind = draw(st.integers(0, 5 if depth else 3))
        if kind == 0:
            counter[0] += 1
            v = f"v{counter[0]}"
            out.append(f"{pad}var {v}: int = {draw(expr(names))};")
            names = names + [v]
        elif kind == 1 and names:
            out.append(f"{pad}{draw(st.sampled_from(names))} = {draw(expr(names))};")
        elif kind == 2:
            counter[0] += 1
            b = f"b{counter[0]}"
            n = draw(st.integers(1, 6))
            out.append(f"{pad}var {b}: bytes[{n}];")
            out.append(f"{pad}{b}[{draw(st.integers(0, n - 1))}] = {draw(expr(names, 1))};")
            out.append(f"{pad}send({b});")
        elif kind == 3:
            out.append(f'{pad}send("ok");')
        elif kind == 4:
            out.append(f"{pad}if ({draw(expr(names))}) {{")
            out.extend(draw(block(names, counter, depth - 1, pad + "    ")))
            if draw(st.booleans()):
                out.append(f"{pad}}} else {{")
                out.extend(draw(block(names, counter, depth - 1, pad + "    ")))
            out.append(f"{pad}}}")
        else:
            counter[0] += 1
            i = f"i{counter[0]}"
            out.append(f"{pad}var {i}: int = 0;")
            out.append(f"{pad}while ({i} < {draw(st.integers(0, 3))}) {{")
            out.extend(draw(block(names, counter, depth - 1, pad + "    ")))
            out.append(f"{pad}    {i} = {i} + 1;")
            out.append(f"{pad}}}")
    return out


@st.composite
def programs(draw):
    counter = [0]
    lines = []
    gl = [f"g{k}" for k in range(draw(st.integers(0, 2)))]
    for g in gl:
        lines.append(f"global {g}: int = {draw(st.integers(-5, 5))};")
    lines.append("fn helper(a: int, b: int) {")
    lines.append(f"    return {draw(expr(['a', 'b'], pkt=False))};")
    lines.append("}")
    lines.append("fn handle(pkt: bytes) {")
    lines.append("    if (len(pkt) < 4) { return; }")
    lines.append(f"    var r: int = helper({draw(expr(gl, 1))}, 2);")
    lines.extend(draw(block(gl + ["r"], counter, 2, "    ")))
    lines.append("}")
    return "\n".join(lines) + "\n"
