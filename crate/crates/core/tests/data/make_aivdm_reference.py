"""Regenerates aivdm_real_reference.csv from aivdm_real.nmea using pyais.

    python3 make_aivdm_reference.py

One row per complete message, keyed by the 1-based line of its first
fragment. Position fields are left empty for message types the crate does
not decode as positions.
"""
import csv
import pathlib

from pyais import decode

HERE = pathlib.Path(__file__).parent
POSITION_TYPES = {1, 2, 3, 18, 19}


def messages(lines):
    pending = {}
    for lineno, line in enumerate(lines, start=1):
        fields = line.split(",")
        total, index, seq, channel = int(fields[1]), int(fields[2]), fields[3], fields[4]
        if total == 1:
            yield lineno, [line]
            continue
        key = (seq, channel)
        first, parts = pending.setdefault(key, (lineno, []))
        parts.append(line)
        if index == total:
            del pending[key]
            if len(parts) == total:
                yield first, parts


def main():
    lines = [l.strip() for l in (HERE / "aivdm_real.nmea").read_text().splitlines() if l.strip()]
    with open(HERE / "aivdm_real_reference.csv", "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["line", "fragments", "msg_type", "mmsi", "nav_status", "lat", "lon", "sog", "cog"])
        for lineno, parts in messages(lines):
            msg = decode(*parts)
            row = [lineno, len(parts), msg.msg_type, msg.mmsi]
            if msg.msg_type in POSITION_TYPES:
                status = int(msg.status) if msg.msg_type in (1, 2, 3) else ""
                row += [status, f"{msg.lat:.6f}", f"{msg.lon:.6f}", f"{msg.speed:.1f}", f"{msg.course:.1f}"]
            else:
                row += ["", "", "", "", ""]
            out.writerow(row)


if __name__ == "__main__":
    main()
