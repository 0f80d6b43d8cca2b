"""Word-level tokenization, vocabulary, and the rule-based lemmatizer."""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter

_WORD_RE = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")

BOS, EOS, PAD, SEP, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS = {"<bos>": BOS, "<eos>": EOS, "<pad>": PAD, "<sep>": SEP, "<unk>": UNK}
N_SPECIALS = len(SPECIAL_TOKENS)


def normalize(text: str) -> str:
    """Lowercase, drop punctuation, collapse whitespace."""
    return " ".join(tokenize(text))


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens; punctuation acts as a separator."""
    return _WORD_RE.findall(text.lower())


class VocabularyError(ValueError):
    pass


class Vocabulary:
    """Token/id bijection with reserved special ids 0-4."""

    def __init__(self, token_to_id: dict[str, int], frequencies: dict[str, int],
                 min_freq: int):
        self._token_to_id = dict(token_to_id)
        self._id_to_token = {i: t for t, i in self._token_to_id.items()}
        self.frequencies = dict(frequencies)
        self.min_freq = min_freq
        if len(self._id_to_token) != len(self._token_to_id):
            raise VocabularyError("token/id mapping is not a bijection")

    def __len__(self) -> int:
        return N_SPECIALS + len(self._token_to_id)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    @classmethod
    def build(cls, corpus: list[str], min_freq: int = 1) -> "Vocabulary":
        """Assign ids by descending frequency, then lexicographically."""
        if not corpus:
            raise VocabularyError("cannot build a vocabulary from an empty corpus")
        if min_freq < 1:
            raise VocabularyError("min_freq must be a positive integer")
        counts = Counter()
        for line in corpus:
            counts.update(tokenize(line))
        kept = sorted(
            (t for t, c in counts.items() if c >= min_freq),
            key=lambda t: (-counts[t], t),
        )
        token_to_id = {t: N_SPECIALS + i for i, t in enumerate(kept)}
        return cls(token_to_id, {t: counts[t] for t in kept}, min_freq)

    def token_id(self, token: str) -> int:
        return self._token_to_id.get(token, UNK)

    def encode(self, text: str, frame: bool = True) -> list[int]:
        ids = [self._token_to_id.get(t, UNK) for t in tokenize(text)]
        return [BOS] + ids + [EOS] if frame else ids

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            token = self._id_to_token.get(int(i))
            if token is not None:
                words.append(token)
            elif int(i) == UNK:
                words.append("<unk>")
        return " ".join(words)

    def to_json_dict(self) -> dict:
        return {
            "specials": dict(SPECIAL_TOKENS),
            "min_freq": self.min_freq,
            "tokens": [
                [t, self._token_to_id[t], self.frequencies.get(t, 0)]
                for t in sorted(self._token_to_id, key=self._token_to_id.get)
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Vocabulary":
        if payload.get("specials") != dict(SPECIAL_TOKENS):
            raise VocabularyError("special-token block does not match the reserved ids")
        token_to_id = {t: i for t, i, _ in payload["tokens"]}
        freqs = {t: f for t, _, f in payload["tokens"]}
        return cls(token_to_id, freqs, payload.get("min_freq", 1))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, indent=1)

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))

    def content_hash(self) -> str:
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


# -- lemmatizer -----------------------------------------------------------

VOWELS = set("aeiou")

# Irregular inflections; every value must be a fixed point of lemmatize_word.
IRREGULAR = {
    "am": "be", "are": "be", "is": "be", "was": "be", "were": "be",
    "been": "be", "being": "be",
    "has": "have", "had": "have", "having": "have",
    "does": "do", "did": "do", "done": "do", "doing": "do",
    "goes": "go", "went": "go", "gone": "go",
    "ran": "run", "sat": "sit", "stood": "stand", "stands": "stand",
    "swam": "swim", "swum": "swim", "swung": "swing", "swang": "swing",
    "bent": "bend", "knelt": "kneel", "leapt": "leap", "lept": "leap",
    "fell": "fall", "fallen": "fall", "rose": "rise", "risen": "rise",
    "rising": "rise", "spun": "spin", "slid": "slide", "sliding": "slide",
    "struck": "strike", "striking": "strike", "swept": "sweep",
    "crept": "creep", "held": "hold", "took": "take", "taken": "take",
    "taking": "take", "came": "come", "coming": "come",
    "brought": "bring", "caught": "catch", "threw": "throw",
    "thrown": "throw", "flew": "fly", "flown": "fly",
    "lay": "lie", "lain": "lie", "lying": "lie", "lies": "lie",
    "dying": "die", "died": "die", "dies": "die", "tying": "tie",
    "made": "make", "making": "make", "got": "get", "gotten": "get",
    "getting": "get", "kept": "keep",
    "said": "say", "says": "say", "saying": "say",
    "changing": "change", "changed": "change",
    "seen": "see", "saw": "see", "seeing": "see",
    "began": "begin", "begun": "begin", "beginning": "begin",
    "bought": "buy", "built": "build", "chose": "choose", "chosen": "choose",
    "drew": "draw", "drawn": "draw", "drove": "drive", "driven": "drive",
    "driving": "drive", "ate": "eat", "eaten": "eat", "felt": "feel",
    "found": "find", "gave": "give", "given": "give", "giving": "give",
    "grew": "grow", "grown": "grow", "heard": "hear", "hid": "hide",
    "hidden": "hide", "hiding": "hide", "knew": "know", "known": "know",
    "led": "lead", "lost": "lose", "losing": "lose", "meant": "mean",
    "met": "meet", "paid": "pay", "rode": "ride", "ridden": "ride",
    "riding": "ride", "sang": "sing", "sung": "sing", "shook": "shake",
    "shaken": "shake", "shaking": "shake", "sped": "speed", "spent": "spend",
    "spoke": "speak", "spoken": "speak", "sprang": "spring", "sprung": "spring",
    "stepped": "step", "stepping": "step", "stuck": "stick", "taught": "teach",
    "told": "tell", "thought": "think", "understood": "understand",
    "wore": "wear", "worn": "wear", "won": "win", "wrote": "write",
    "written": "write", "writing": "write", "woke": "wake", "woken": "wake",
    "waving": "wave", "waved": "wave", "using": "use", "used": "use",
    "uses": "use", "focusing": "focus", "focused": "focus",
    "men": "man", "women": "woman", "children": "child", "feet": "foot",
    "teeth": "tooth", "mice": "mouse", "people": "person",
    "bodies": "body", "shoes": "shoe", "toes": "toe",
}

# Words the suffix rules would mangle; returned unchanged.
PROTECTED = {
    "during", "thing", "things", "something", "nothing", "anything",
    "everything", "morning", "evening", "spring", "string", "swing",
    "bring", "sing", "king", "ring", "wing", "being", "ceiling",
    "gas", "plus", "thus", "yes", "ness", "less", "its", "his", "hers",
    "this", "theirs", "left",
    "across", "towards", "backwards", "forwards", "upwards", "downwards",
    "sideways", "always", "perhaps", "jacks", "torso",
    "also", "into", "onto", "speed", "indeed", "proceed", "need",
}

ES_STEM_ENDINGS = ("ch", "sh", "ss", "x", "z", "o")
KEEP_DOUBLE = {"ll", "ss", "zz", "ff"}


def _restore_stem(stem: str) -> str:
    """Undouble a trailing consonant or restore a dropped silent e."""
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in VOWELS \
            and stem[-2:] not in KEEP_DOUBLE:
        return stem[:-1]
    if len(stem) < 3:
        return stem
    last = stem[-1]
    if last == "v" or (last == "u" and stem[-2] not in VOWELS):
        return stem + "e"
    if last in "cgszk":
        if stem[-2] in VOWELS and stem[-3] not in VOWELS:
            return stem + "e"  # single vowel + consonant: mak, pos, lik
        if last in "sz" and stem[-2] in VOWELS and stem[-3] in VOWELS:
            return stem + "e"  # vowel pair + sibilant: rais, paus
        if last == "c" and stem[-2] in "nr":
            return stem + "e"  # danc, bounc, forc
        if last == "s" and stem[-2] in "nlr":
            return stem + "e"  # sens, puls, curs
    return stem


def _has_vowel(s: str) -> bool:
    return any(ch in VOWELS for ch in s) or "y" in s


def lemmatize_word(word: str) -> str:
    """Base form of a single lowercase word via exceptions then suffix rules."""
    if word in IRREGULAR:
        return IRREGULAR[word]
    if word in PROTECTED or len(word) <= 3 or not word.isalpha():
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ied") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("ing") and len(word) > 4:
        stem = word[:-3]
        if _has_vowel(stem):
            return _restore_stem(stem)
        return word
    if word.endswith("ed") and len(word) > 3 and not word.endswith("eed"):
        stem = word[:-2]
        if _has_vowel(stem):
            return _restore_stem(stem)
        return word
    if word.endswith("es"):
        stem = word[:-2]
        if stem.endswith(ES_STEM_ENDINGS):
            return stem
        return word[:-1]
    if word.endswith("s") and not word.endswith(("ss", "us", "is")):
        return word[:-1]
    return word


def lemmatize(text: str) -> str:
    """Replace every word in the text by its lemma.

    Whitespace word count and punctuation positions are preserved; casing
    is lowered to match the tokenizer's normalization.
    """
    pieces = [
        _WORD_RE.sub(lambda m: lemmatize_word(m.group(0)), piece.lower())
        for piece in text.split()
    ]
    return " ".join(pieces)
