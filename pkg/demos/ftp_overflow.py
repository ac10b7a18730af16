"""Run a full campaign on the vulnerable FTP server and print each witness
session next to the replay verdict."""

import sys
import tempfile
from pathlib import Path

from fusegrey.pipeline import CampaignConfig, read_witness, run_hybrid, validate_witness


def main(out=None):
    out = Path(out or tempfile.mkdtemp(prefix="ftp-"))
    rep = run_hybrid(CampaignConfig("ftp-vuln", rng_seed=1, out_dir=str(out)))
    print(f"coverage: {len(rep.data['coverage']['functions_covered'])}/"
          f"{rep.data['coverage']['functions_total']} functions")
    for f in rep.findings:
        print(f"{f['kind']} at stmt {f['stmt']} in {f['function']} (found by {', '.join(f['found_by'])})")
        for ref in f["witnesses"]:
            d = out / ref["witness"]
            w, _ = read_witness(d)
            for pkt in w.packets:
                print(f"    {ref['engine']:5s} {pkt[:48]!r}{'...' if len(pkt) > 48 else ''}")
            print(f"    replay: {validate_witness('ftp-vuln', d).reason}")
    return rep.exit_code


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:2]))
