"""Prompt templates for every model-facing task.

Placeholders use single-brace names ({problem_statement}); substitution is
verbatim and a missing binding is an error, so a prompt can never leave with
an unresolved hole. Literal double-brace text (for example the {{poc_code
here}} format example) is not a placeholder and passes through untouched.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import TemplateError

FILE_LOC = """Please look through the following GitHub problem description and Repository structure, and provide a list of files that one would need to edit to fix the problem.

### GitHub Problem Description ###
{problem_statement}
###

### Repository Structure ###
{structure}
###

After analyzing the problem, provide the full path and return at most {file_number} files.
The returned files should be separated by new lines, ordered by most to least important, and wrapped with ```
For example:
```
file1.py
file2.py
```"""

LINE_LOC = """Please review the following GitHub problem description and relevant files, and provide a set of locations that need to be edited to fix the issue.
The locations should include exact line numbers that require modification.
Pay attention! You should identify the method responsible for the core functionality of the issue. Focus on areas that define or enforce foundational behavior rather than case-specific issues.

### GitHub Problem Description ###
{problem_statement}

###
{file_contents}

###

{last_search_results}

After analyzing the problem, please provide the class name, function or method name, or the exact line numbers that need to be edited.
If you want to provide the line number, please give me a number in the middle every time.
If you need to edit multiple classes or functions, please provide all the function names or the line numbers in the class.
You should always include a class or function; do not provide just the line numbers without the class or function name.
If you want to include a class rather than a function, you should always provide the line numbers for the class.
Here is the format you need to strictly follow, don't return any code content or other suggestions, don't forget the "```":
### Examples:
```
full_path1/file1.py
class: MyClass1
line: 51

full_path2/file2.py
function: MyClass2.my_method
line: 12

full_path3/file3.py
function: my_function
line: 24
line: 156
```"""

PATCH_GEN = """We are currently solving the following issue within our repository.

You are a maintainer of the project. Analyze the bug thoroughly and infer the underlying real problem, using your inherent knowledge of the project. Focus on resolving the root logic issue rather than suppressing symptoms.

Note that if the issue description mentions file names or arguments for reproduction, the fix must be generalized and not restricted to specific arguments. If the issue description includes a recommended fix, adapt it to align with the codebase's style and standards. Ensure your fix maintains structural integrity, considering interactions across code sections, nested structures, function calls, and data dependencies. Prefer solutions resilient to future structural changes or extensions.

The following is the issue description:

--- BEGIN ISSUE ---
{problem_statement}
--- END ISSUE ---

Below are the code segments from multiple files relevant to this issue. Each file is clearly marked. Decide carefully and only modify necessary segments. Preserve original indentation and formatting standards strictly.

--- BEGIN FILES ---
{content}
--- END FILES ---

Now, carefully analyze the files above. Determine which specific file segments require modifications and provide your edits using the following structured format for easy parsing:

<<< MODIFIED FILE: path/to/filename >>>
```python
<<<<<<< SEARCH
from flask import Flask
=======
import math
from flask import Flask
>>>>>>> REPLACE
```
<<< END MODIFIED FILE >>>
...

Please note that the *SEARCH/REPLACE* edit REQUIRES PROPER INDENTATION. If you would like to add the line '        print(x)', you must fully write that out, with all those spaces before the code!
Wrap the *SEARCH/REPLACE* edit in blocks ```python...```."""

PATCH_CRITIQUE = """Please continue working on this code patching work. You need to review the patch thoroughly to determine if it successfully fixes the issue without introducing any new bugs, and while handling all possible edge cases.
If you determine that the patch is correct and complete, tell me you confirm that the patch succeeded.
If you think the patch is incomplete, give me the reason and potential fixing suggestions.

You need to think:
1. What edge cases can break the patch? Consider complex cases such as nested structures and recursive patterns. For example, if the patch fixes an issue with an empty string, consider whether None, an empty list, or partially empty data structures might also trigger the bug.
2. Why the patch is incomplete or correct, whether the interaction between the patched part and other parts of the codebase can be handled properly
3. whether the patch only fixes the issue for the specific case mentioned in the issue description or for all similar cases
4. whether the patch follows the codebase's style and standards, using the proper variable types, error or warning types, and adhering to the established format

If the patch is perfect, tell me why. If the patch is unfinished or wrong, give me the reason and patch suggestions.
At the end, you should give me the critical result from you, if yes, give me "Conclusion: Right", otherwise give me "Conclusion: Wrong"."""

_POC_ASSERT_RULES = """Always include assertions in the PoC to make the failure obvious when the script is executed.
The assertion should fail if the bug is present, and pass if the bug is not present.

"""

_POC_GEN_BODY = """When generating a PoC script, follow these steps **in order**:

{assert_rules}**Try to extract an existing PoC from the issue description**
   * Scan the **GitHub issue description** for Python code blocks or inline snippets that appear to reproduce the bug.
   * If such a snippet exists, **use it verbatim as the base PoC** and only make the minimal edits needed to run:
       - Remove interactive prompts (`>>>`, `$`, `In [ ]:`) and any captured output lines.
       - Add any missing `import` statements.
       - Convert Python2 syntax to Python3, if present.
       - Merge multiple fragments into a single runnable file in their original order.

**If no valid PoC can be extracted, write one yourself**
   * Use the *specific* classes, functions, or code paths named in the issue to trigger the bug.
   * Keep the script minimal—just enough to demonstrate the failure (e.g., an `assert`, an expected exception, or a visibly incorrect result).

**General rules for both cases**
   * The PoC **must be a single, self-contained Python3 file**.
   * If the issue description includes other languages or shell commands, recreate their behavior in Python (e.g., with `subprocess` or file operations).
   * If the snippet refers to external files, create them programmatically inside the script.
   * Always include `print()` or `assert` statements so the failure is obvious when the script is executed.

**Output format**
Return **exactly** Python code wrapped in triple backticks, with no other text.

```python
{{poc_code here}}
```
### Context Provided to You
{last_time_poc_code}

{execution_output}

### GitHub Issue Description
--- Begin Issue Description ---
{problem_statement}
--- End Issue Description ---"""

POC_GEN_ASSERT = _POC_GEN_BODY.replace("{assert_rules}", _POC_ASSERT_RULES)
POC_GEN_NO_ASSERT = _POC_GEN_BODY.replace("{assert_rules}", "")

POC_JUDGE = """You are a code reviewer for a GitHub project. Your task is to evaluate whether a patch successfully resolves an issue described in a GitHub issue.

You will be given the issue description, the PoC (Proof of Concept) code that demonstrates the issue, and the PoC execution output before and after the patch.

Your goal is to determine if the patch resolves the issue. Please respond with "Yes" or "No" and provide a brief explanation of your reasoning.
You should not assume that there is other output that is not shown in the Poc Output. The Poc Output is the only output you should consider. You should not assume that a plot is generated by the Poc.

- "Yes" means the patch successfully fixed the issue.
- "No" means the patch did not successfully fix the issue, either because the issue still exists or because the patch introduced new issues.

### Raw Issue Description ###
{issue_description}

### Poc code ###
Here is the PoC code that demonstrates the issue:
{poc_code}

### Poc Output before the patch ###
{old_execution_output}

### Poc Output after the patch ###
{new_execution_output}

**Response Format:**

Example 1:
<judgement> Yes </judgement>
<explanation> The patch successfully fixed the issue since ... </explanation>
Example 2:
<judgement> No </judgement>
<explanation> The patch did not successfully fix the issue since ... </explanation>"""


@dataclass(frozen=True)
class TemplateSpec:
    template_id: str
    text: str
    model_tag: str
    temperature: float


# Sampling temperatures: 0.0 where one canonical answer is wanted
# (localization, critique, judging), 0.8 where diversity is the point
# (candidate patches, PoCs).
TEMPLATES: dict[str, TemplateSpec] = {
    spec.template_id: spec
    for spec in (
        TemplateSpec("file_loc", FILE_LOC, "loc-gen", 0.0),
        TemplateSpec("line_loc", LINE_LOC, "loc-gen", 0.0),
        TemplateSpec("patch_gen", PATCH_GEN, "loc-gen", 0.8),
        TemplateSpec("patch_critique", PATCH_CRITIQUE, "loc-gen", 0.0),
        TemplateSpec("poc_gen_assert", POC_GEN_ASSERT, "val-assert", 0.8),
        TemplateSpec("poc_gen_no_assert", POC_GEN_NO_ASSERT, "val-no-assert", 0.8),
        TemplateSpec("poc_judge", POC_JUDGE, "val-no-assert", 0.0),
    )
}

# Single-brace lowercase names only; {{literal braces}} and spaced text are
# not placeholders.
_PLACEHOLDER = re.compile(r"(?<!\{)\{([a-z_]+)\}(?!\})")


def template_text(template_id: str) -> str:
    return TEMPLATES[template_id].text


def placeholders(template_id: str) -> list[str]:
    """Placeholder names in first-appearance order, deduplicated."""
    seen: list[str] = []
    for m in _PLACEHOLDER.finditer(TEMPLATES[template_id].text):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return seen


def substitute(text: str, bindings: dict[str, str]) -> str:
    """Replace every placeholder from ``bindings``; missing one is an error."""

    def _sub(m: re.Match) -> str:
        name = m.group(1)
        if name not in bindings:
            raise TemplateError(name)
        return str(bindings[name])

    return _PLACEHOLDER.sub(_sub, text)
