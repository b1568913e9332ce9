#!/usr/bin/env python3
"""Convert the ABC rendition of the Essen folksong database into EsAC records.

The ABC files distributed with music21 keep one melodic phrase per text line,
write the EsAC tonic in the K: field and spell every pitch explicitly, so the
conversion is lossless for pitch, duration, bar grouping and phrase lines.

Output grammar (one record):

    CUT[<title>]
    KEY[<id> <unit> <tonic> <meter>]
    MEL[<phrase 1>
    <phrase 2> //]

Durations are written additively: each `_` adds one base unit.
"""

import argparse
import pathlib
import re
import sys

LETTERS = "CDEFGAB"
NATURAL = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
MAJOR = [0, 2, 4, 5, 7, 9, 11]
SHARP_ORDER = "FCGDAEB"
FLAT_ORDER = "BEADGCF"
# fifths of the key signature for each K: value (major, then minor).
MAJOR_FIFTHS = {"C": 0, "G": 1, "D": 2, "A": 3, "E": 4, "B": 5, "F#": 6,
                "F": -1, "Bb": -2, "Eb": -3, "Ab": -4, "Db": -5, "Gb": -6}
MINOR_FIFTHS = {"A": 0, "E": 1, "B": 2, "F#": 3, "C#": 4,
                "D": -1, "G": -2, "C": -3, "F": -4, "Bb": -5}
GERMAN = {"H": "B", "Es": "Eb", "As": "Ab", "Des": "Db", "Fis": "F#", "Cis": "C#"}

NOTE_RE = re.compile(r"(\^\^|\^|__|_|=)?([A-Ga-g])([,']*)(\d*)|(z)(\d*)|(\|)|(-)")


class ConvertError(Exception):
    pass


def parse_key(field):
    field = field.strip()
    minor = field.endswith("m") and not field.endswith("dim")
    root = field[:-1] if minor else field
    root = GERMAN.get(root, root)
    table = MINOR_FIFTHS if minor else MAJOR_FIFTHS
    if root not in table:
        raise ConvertError(f"unsupported key {field!r}")
    fifths = table[root]
    sig = {}
    if fifths > 0:
        for letter in SHARP_ORDER[:fifths]:
            sig[letter] = 1
    elif fifths < 0:
        for letter in FLAT_ORDER[:-fifths]:
            sig[letter] = -1
    return root, sig


def tonic_pc(root):
    pc = NATURAL[root[0]]
    for ch in root[1:]:
        pc += 1 if ch == "#" else -1
    return pc % 12


def parse_body(lines, sig):
    """Return phrases as lists of bars; each bar is a list of [pitch|None, units]."""
    phrases = []
    pending_tie = None
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        bars = [[]]
        bar_acc = {}
        pos = 0
        while pos < len(line):
            if line[pos].isspace():
                pos += 1
                continue
            m = NOTE_RE.match(line, pos)
            if not m:
                raise ConvertError(f"unexpected {line[pos]!r} in {line!r}")
            pos = m.end()
            if m.group(7):
                bar_acc = {}
                if bars[-1]:
                    bars.append([])
                continue
            if m.group(8):
                # a tie after a rest or at the start of a line carries nothing
                if bars[-1] and bars[-1][-1][0] is not None:
                    pending_tie = bars[-1][-1]
                continue
            if m.group(5):
                units = int(m.group(6) or 1)
                bars[-1].append([None, units, None])
                pending_tie = None
                continue
            acc, letter, octs, length = m.group(1), m.group(2), m.group(3), m.group(4)
            units = int(length or 1)
            upper = letter.upper()
            octave = 0 if letter.isupper() else 1
            octave += octs.count("'") - octs.count(",")
            key = (upper, octave)
            if acc:
                alter = {"^^": 2, "^": 1, "__": -2, "_": -1, "=": 0}[acc]
                bar_acc[key] = alter
            alter = bar_acc.get(key, sig.get(upper, 0))
            pitch = 60 + 12 * octave + NATURAL[upper] + alter
            if pending_tie is not None and pending_tie[0] == pitch:
                pending_tie[1] += units
                pending_tie = None
                continue
            pending_tie = None
            bars[-1].append([pitch, units, upper])
        bars = [b for b in bars if b]
        if bars:
            phrases.append(bars)
    return phrases


def degree_token(pitch, letter, root):
    base = 60 + tonic_pc(root)
    deg = (LETTERS.index(letter) - LETTERS.index(root[0])) % 7
    natural = base + MAJOR[deg]
    octave = round((pitch - natural) / 12)
    alter = pitch - natural - 12 * octave
    if abs(alter) > 1:
        raise ConvertError(f"pitch {pitch} not expressible from tonic {root}")
    prefix = ("+" * octave) if octave > 0 else ("-" * -octave)
    suffix = {-1: "b", 0: "", 1: "#"}[alter]
    return f"{prefix}{deg + 1}{suffix}"


def convert_record(collection, text, seen):
    header = {}
    body = []
    in_body = False
    for line in text.splitlines():
        if not in_body and re.match(r"^[A-Za-z]:", line):
            tag, value = line[0], line[2:].strip()
            header.setdefault(tag, value)
            if tag == "K":
                in_body = True
            continue
        if in_body:
            body.append(line)
    for tag in "NMLK":
        if tag not in header:
            raise ConvertError(f"missing {tag}: field")
    ident = f"{collection}:{header['N']}"
    # Some collections reuse an N: number for different songs.
    seen[ident] = seen.get(ident, 0) + 1
    if seen[ident] > 1:
        ident = f"{ident}-{seen[ident]}"
    root, sig = parse_key(header["K"])
    unit = header["L"]
    m = re.fullmatch(r"1/(\d+)", unit)
    if not m:
        raise ConvertError(f"unsupported unit {unit!r}")
    unit = f"{int(m.group(1)):02d}"
    meter = header["M"].replace(" ", "")
    if meter.lower() == "none":
        meter = "FREI"
    phrases = parse_body(body, sig)
    if not phrases:
        raise ConvertError("empty melody")
    lines = []
    for bars in phrases:
        groups = []
        for bar in bars:
            toks = []
            for pitch, units, letter in bar:
                head = "0" if pitch is None else degree_token(pitch, letter, root)
                toks.append(head + "_" * (units - 1))
            groups.append("".join(toks))
        lines.append(" ".join(groups))
    title = header.get("T", "").replace("[", "(").replace("]", ")")
    mel = "\n".join(lines)
    return f"CUT[{title}]\nKEY[{ident} {unit} {root} {meter}]\nMEL[{mel} //]\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", type=pathlib.Path)
    ap.add_argument("-o", "--output", type=pathlib.Path, required=True)
    args = ap.parse_args()
    written = skipped = 0
    seen = {}
    with args.output.open("w", encoding="utf-8") as out:
        for path in sorted(args.inputs):
            text = path.read_text(encoding="latin-1")
            for rec in re.split(r"\n(?=X:)", text):
                if not rec.strip().startswith("X:"):
                    continue
                try:
                    out.write(convert_record(path.stem, rec, seen))
                    out.write("\n")
                    written += 1
                except ConvertError as err:
                    skipped += 1
                    print(f"{path.name}: {err}", file=sys.stderr)
    print(f"wrote {written} records, skipped {skipped}", file=sys.stderr)


if __name__ == "__main__":
    main()
