"""Check a small hand-written server with both symbolic engines and show
the path conditions symex explored."""

from fusegrey.bmc import BmcConfig, bmc_run
from fusegrey.packet import SymbolicPacket
from fusegrey.pil import load_program
from fusegrey.symex import ExploreConfig, explore

SOURCE = """
global hits: int = 0;

fn handle(pkt: bytes) {
    var table: bytes[8];
    if (len(pkt) < 2) { return; }
    if (pkt[0] == 0x7f) {
        var i: int = pkt[1] - 0x30;
        table[i] = 1;
        hits = hits + 1;
    }
    send(table);
}
"""


def main():
    prog = load_program(SOURCE)
    # both bytes of a two-byte request are symbolic
    session = [SymbolicPacket(b"\x00\x00", ((0, "sym_0"), (1, "sym_1")))]

    sx = explore(prog, session, ExploreConfig())
    print(f"symex: {len(sx.paths)} paths, {sx.queries} solver queries")
    for p in sx.paths:
        print(f"    {p.packets[0]!r:>12}  {p.outcome}")
    # violations are recorded as findings; the path itself continues under
    # the negated check
    for w in sx.findings:
        print(f"    {w.finding.kind} at stmt {w.finding.stmt} with {w.packets[0]!r}")

    bm = bmc_run(prog, session, BmcConfig(unwind=4))
    print(f"bmc:   {bm.verdict}")
    for w in bm.findings:
        print(f"    {w.finding.kind} at stmt {w.finding.stmt} with {w.packets[0]!r}")


if __name__ == "__main__":
    main()
