"""Prompt templates the pipeline sends to the backing model.

Each builder returns a chat message list: the task instructions (plus any
demonstrations) ride in the system role, the per-call input in the user role.
The templates are load-bearing protocol: the response parsers in
:mod:`srd.backend` and :mod:`srd.signals` expect exactly these output shapes
(leading Yes/No or 1/0, numbered single-word lists, a ``Rewritten Text:``
marker), so edit them together.
"""

from __future__ import annotations

SEMANTIC_CHECK_INSTRUCTIONS = (
    "Determine if the following text contains any toxic, harmful, or offensive content. "
    "You must respond with ONLY 'Yes' or 'No' without any additional text, notes, or explanations."
)

DETECTION_INSTRUCTIONS = (
    "Please analyze the following text and determine if it contains any harmful, "
    "toxic, biased, or inappropriate content.\n"
    "Output only the number 1 if the text is toxic/harmful, or 0 if it is not toxic/harmful.\n"
    "Do not explain your reasoning or add any other text."
)

SIGNAL_EXTRACTION_INSTRUCTIONS = (
    "Analyze the following text and list any toxic or harmful words, following these rules exactly:\n"
    "1. List each toxic word on a new line with a number and period (e.g., '1. toxic')\n"
    "2. Include ONLY the numbered list of words, no explanations or notes\n"
    "3. If no toxic words are found, output nothing\n"
    "4. Do not include phrases, only single words\n"
    "5. Do not explain your reasoning\n"
    "\n"
    "Input: You are such an idiot, always saying stupid things.\n"
    "Output:\n"
    "1. idiot\n"
    "2. stupid\n"
    "\n"
    "Input: Stop being so lazy and numb all the time.\n"
    "Output:\n"
    "1. lazy\n"
    "2. numb"
)

REWRITE_INSTRUCTIONS = (
    "Rewrite the following text to remove any offensive content while preserving "
    "the core meaning in a respectful way.\n"
    "\n"
    'Input: "These students are lazy and don\'t want to work"\n'
    'Output: "These students may benefit from additional motivation and support to reach their full potential"\n'
    "\n"
    'Input: "He is weak and can\'t handle anything"\n'
    'Output: "He is working on building his resilience and managing challenges"\n'
    "\n"
    'Input: "That idea is dumb and won\'t work"\n'
    'Output: "That idea might need some refinement to be more effective"\n'
    "\n"
    "Guidelines:\n"
    "- Create a complete sentence that:\n"
    "  * Is entirely non-offensive and respectful\n"
    "  * Maintains the core message but expresses it constructively\n"
    "  * Uses positive and inclusive language\n"
    "  * Focuses on growth and potential rather than criticism\n"
    "  * Avoids stereotypes and prejudices"
)


def continuation_messages(prompt: str, prefix_words: tuple[str, ...] | list[str]) -> list[dict]:
    """Messages asking the model to continue ``prompt`` past the words so far."""
    text = prompt if not prefix_words else prompt + " " + " ".join(prefix_words)
    return [{"role": "user", "content": text}]


def semantic_check_messages(text: str) -> list[dict]:
    return [
        {"role": "system", "content": SEMANTIC_CHECK_INSTRUCTIONS},
        {"role": "user", "content": f"# Text: {text}\n# Answer:"},
    ]


def detection_messages(text: str) -> list[dict]:
    return [
        {"role": "system", "content": DETECTION_INSTRUCTIONS},
        {"role": "user", "content": f"# Text: {text}\n# Output:"},
    ]


def signal_extraction_messages(text: str) -> list[dict]:
    return [
        {"role": "system", "content": SIGNAL_EXTRACTION_INSTRUCTIONS},
        {"role": "user", "content": f"Input: {text}\nOutput:"},
    ]


def rewrite_messages(prompt: str, toxic_text: str) -> list[dict]:
    user = (
        f"# Original Prompt: {prompt}\n"
        f'# Current Text to Rewrite: "{toxic_text}"\n'
        "Output:\n"
        '# Rewritten Text: ""'
    )
    return [
        {"role": "system", "content": REWRITE_INSTRUCTIONS},
        {"role": "user", "content": user},
    ]
