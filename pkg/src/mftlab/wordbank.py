"""Closed phrase bank shared by the tokenizer and the problem generator.

Everything the generator can ever emit is listed here, so the vocabulary can
be built without touching a dataset.
"""

NAMES = [
    "Anna", "Ben", "Carla", "David", "Emma", "Frank", "Grace", "Henry",
    "Ivy", "Jack", "Karen", "Liam", "Mia", "Noah", "Olivia", "Peter",
]

ITEMS = [
    "apples", "eggs", "books", "coins", "marbles", "pencils", "shells",
    "stickers", "cards", "stamps", "buttons", "beads",
]

# Connectives, verbs and question scaffolding used by the templates.
WORDS = [
    "has", "gets", "more", "loses", "every", "one", "of", "her", "his",
    "turns", "into", "shares", "them", "equally", "between", "friends",
    "How", "many", "does", "have", "now", "first", "then", "so", "finally",
    "the", "answer", "is", "The", "likes", "counts", "looks", "at",
]

SYMBOLS = ["+", "-", "*", "/", "=", "<", ">", "(", ")", ".", ",", "?"]

ANSWER_DELIM = "####"

PAD = "[PAD]"
BOS = "[BOS]"
EOS = "[EOS]"
MASK = "[MASK]"

NUM_MIN = 0
NUM_MAX = 999
