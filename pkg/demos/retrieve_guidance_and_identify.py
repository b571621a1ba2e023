"""
Retrieval, guidance, and the final verdict
==========================================

Given a database of historical reasoning graphs, classifying a new target
report takes three moves: retrieve the stored graphs whose pruned
descriptions resemble the target, turn them into numbered guidance steps,
and ask for a Yes/No verdict whose probability comes from the first-token
logprobs. Everything below runs on the deterministic stub backend.

Run it directly:  python3 demos/retrieve_guidance_and_identify.py
"""

import math
import re

from vulrtex.corpus import CanonicalIR
from vulrtex.gateway import Gateway, StubBackend, StubRule
from vulrtex.graph import Action, Observation, ReasoningGraph
from vulrtex.identifier import generate_guidance, identify
from vulrtex.retrieval import retrieve_relevant

# ------------------------------------------------------------------------
# Three historical graphs, assembled by hand. Each one is the record of a
# past investigation: a root reading of the report, a tool step, a verdict.
# ------------------------------------------------------------------------

def history(ir_id, opening, finding, closing, verdict, cwe=None):
    g = ReasoningGraph(ir_id)
    g.add_observation(Observation("O1", opening))
    g.add_observation(Observation("O2.1", finding))
    g.add_observation(Observation("O3.1", closing, verdict=verdict, cwe_id=cwe))
    g.add_action(Action("A1.1", "O1", "O2.1", "ScrAnalyzer", "[SCR1]"))
    g.add_action(Action("A2.1", "O2.1", "O3.1", "AgentTerminator"))
    g.validate()
    return g


database = [
    history("hist/forum#7",
            "a stored xss payload in the comment form",
            "the screenshot shows the alert firing on the thread page",
            "script injection confirmed in the comment body", "vul", "CWE-79"),
    history("hist/shop#12",
            "checkout crashes when the cart is empty",
            "the screenshot shows a plain null pointer traceback",
            "an availability bug, not an injection", "not_vul"),
    history("hist/wiki#3",
            "the search page runs a script tag pasted into the query",
            "the screenshot shows the injected script executing on the page",
            "reflected xss, the payload executes from the search parameter",
            "vul", "CWE-79"),
]

target = CanonicalIR(
    id="demo/blog#55",
    title="preview pane runs scripts from the draft body",
    content=("a draft containing a script tag executes in the preview pane; "
             "the payload also survives into the published page"))

# Retrieval prunes every stored graph for this target, scores each pruned
# description against the flattened target text, and keeps everything
# strictly above theta_sim, best first.
relevant = retrieve_relevant(database, target, theta_sim=0.05, walks=2, seed=17)
print(f"retrieved {len(relevant)} of {len(database)} graphs:")
for r in relevant:
    print(f"  {r.origin_ir}: similarity {r.similarity:.3f}")

# ------------------------------------------------------------------------
# Guidance asks the LLM to compress the retrieved descriptions into
# STEP-n lines; identification appends them to the verdict prompt. Both
# calls are scripted here. The identify rule pins the first-token
# logprobs, which is where p("Yes") comes from.
# ------------------------------------------------------------------------

p_yes = 0.86
rules = [
    StubRule(r"According to the following relevant reasoning graphs",
             "STEP-1: check whether the preview pane escapes the draft body\n"
             "STEP-2: compare against the stored xss investigations\n"
             "STEP-3: name the CWE if the script provably executes"),
    StubRule(re.escape('"id": "demo/blog#55"'),
             "Yes. The preview pane executes the draft payload, CWE-79.",
             first_token_logprobs={"Yes": math.log(p_yes),
                                   "No": math.log(1.0 - p_yes)}),
]
gateway = Gateway(StubBackend(rules), max_retries=0, backoff_base=0.0)

guide = generate_guidance(relevant, target, gateway)
print("\nguidance steps:")
for i, step in enumerate(guide.steps, 1):
    print(f"  STEP-{i}: {step}")

prediction = identify(target, guide, gateway, theta_out=0.55)
print(f"\nverdict for {prediction.ir_id}:")
print(f"  p(Yes) = {prediction.p_yes:.4f}  (threshold {prediction.theta_out})")
print(f"  vulnerable: {prediction.verdict}, cwe: {prediction.cwe_id}")
