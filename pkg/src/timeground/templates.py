"""Prompt template resources.

Templates are versioned; callers may override any of them through config.
"""

TEMPLATE_VERSION = "1"

SYSTEM_TEXT = "You are a helpful assistant."

SEQUENCE_PREAMBLE = "This is a sequence interleaved with timestamps and frames."

COARSE_TASK = (
    SEQUENCE_PREAMBLE + "\n"
    "Your task is to identify the specific timestamp(s) when the given query appears."
)

FINE_TASK = (
    SEQUENCE_PREAMBLE + "\n"
    "Your task is to identify the temporal window (start and end timestamps) "
    "when the given query appears."
)

# Appended after the interleaved frames; filled with task text and query.
GROUNDING_TAIL = "{task}\nQuery: {query}\nAnswer:"

QA_SYSTEM_TEXT = "You are a helpful assistant."

# {options} expands to one "(X) text" line per option.
QA_TAIL = "Question: {question}\nOptions:\n{options}\nPlease only give the best option.\nBest Option:"

DECOMPOSE_SYSTEM_TEXT = "You are Qwen, created by Alibaba Cloud. You are a helpful assistant."

DECOMPOSE_INSTRUCTIONS = """\
Analyze the given query and:
1. Identify ONLY concrete, specific objects (nouns) that are:
   - Tangible physical items
   - Clearly named (not pronouns/ambiguous)
2. STRICTLY EXCLUDE:
   - All human references (person, he, she, they, etc.)
   - Ambiguous terms (something, anything, things, etc.)
   - Pronouns (it, they, them)
   - Abstract concepts
3. For each valid object, generate EXACTLY ONE question:
   "When does [OBJECT] appear?"

Negative Examples (BAD):
Input: "Someone left some items on the furniture"
Wrong Output:
-When does the furniture appear?
-When does some items appear?  # <-- AMBIGUOUS TERM SHOULD BE EXCLUDED

Positive Examples (GOOD):
Input: "The machine processed the raw materials during the night"
Output:
-When does the machine appear?
-When does the raw materials appear?
-When does the night appear?"""

DECOMPOSE_USER = "Analyze: {query}"
