"""Reference token-sort ratios from Python's difflib.

Mirrors fuzzywuzzy's pure-Python path: ASCII-only, non-word characters to
spaces, lowercase, sorted tokens, SequenceMatcher ratio, rounded to an
integer percent with round-half-even.
"""
import difflib
import json
import re
import sys


def process(s):
    s = "".join(c for c in s if ord(c) < 128)
    s = re.sub(r"(?ui)\W", " ", s).lower().strip()
    return " ".join(sorted(s.split()))


def token_sort_ratio(a, b):
    a, b = process(a), process(b)
    if a == b:
        return 100
    if not a or not b:
        return 0
    return int(round(100 * difflib.SequenceMatcher(None, a, b).ratio()))


PAIRS = [
    ("six in the evening", "six in the evening"),
    ("6 pm", "san jose"),
    ("World Gourmet", "world gourmet"),
    ("the evening six in", "six in the evening"),
    ("6:30 pm", "6 30 pm"),
    ("Acacia Lakes Apartments", "Acacia Lake Apartments"),
    ("San Francisco", "San Fransisco"),
    ("March 8th", "March 8"),
    ("7:30 pm", "half past 7 in the evening"),
    ("Taqueria Lolita", "Taqueria Lolitas"),
    ("123 Lincoln Avenue", "123 Lincoln Ave"),
    ("Pasta Moon!", "pasta   moon"),
    ("café du monde", "cafe du monde"),
    ("", "x"),
    ("!!!", "..."),
    ("aaaaaaaaab", "aaaaaaaaac"),
    ("the 13th", "13th"),
    ("Golden Dragon Restaurant", "Golden Dragon"),
    ("1 in the afternoon", "1 pm"),
    ("Saravana Bhavan", "Saravanaa Bhavan"),
    ("x" * 150 + " y" * 60, "x" * 149 + " y" * 61),
    ("ab" * 120, "ba" * 120),
]

if __name__ == "__main__":
    json.dump([[a, b, token_sort_ratio(a, b)] for a, b in PAIRS], sys.stdout, ensure_ascii=False)
