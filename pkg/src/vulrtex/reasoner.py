"""Agent loop that turns one issue report into a reasoning graph.

Each frontier observation gets a reasoning prompt; the parsed step either
explores more rich-text elements (tool actions to child observations) or
decides, which routes the node to a shared terminal carrying the verdict.
Newly terminated paths are checked against the golden-knowledge store and
factually corrected in place when matching records exist.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace

from .corpus import KIND_SCR, CanonicalIR
from .errors import GatewayExhausted, ToolBackendUnavailable, VulrtexError
from .gateway import Gateway, LlmRequest
from .graph import (
    AGENT_TERMINATOR,
    CODE_ANALYZER,
    ROOT_ID,
    SCR_ANALYZER,
    TOOLS,
    UNDECIDED,
    VUL,
    NOT_VUL,
    Action,
    Observation,
    Path,
    ReasoningGraph,
    describe_path,
    extract_terminated_paths,
)
from .knowledge import KnowledgeStore, retrieve_golden
from .prompts import build_correction_prompt, build_reason_prompt
from .tools import ToolKit

log = logging.getLogger(__name__)

GOLDEN_PROMPT_CAP = 5

_VERDICT_RE = re.compile(r"vulnerability identified:\s*(yes|no|undecided)", re.IGNORECASE)
_CWE_RE = re.compile(r"CWE-\d+")
_ACTION_RE = re.compile(r"^\s*Action:\s*([A-Za-z]+)\(\s*(\[[A-Z]+\d+\])?\s*\)\s*$",
                        re.MULTILINE)
_ACTION_LINE_RE = re.compile(r"^\s*Action:", re.MULTILINE)
_OBSERVATION_RE = re.compile(
    r"Observation:\s*(.*?)(?=\n\s*(?:Action:|vulnerability identified:)|\Z)",
    re.DOTALL | re.IGNORECASE)


@dataclass
class StepParse:
    observation_text: str
    verdict: str = UNDECIDED
    cwe_id: str | None = None
    actions: list[tuple[str, str]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def chosen_elements(self) -> list[str]:
        return [tag for tool, tag in self.actions if tool != AGENT_TERMINATOR]

    def chosen_tool_per_element(self) -> dict[str, str]:
        return {tag: tool for tool, tag in self.actions if tool != AGENT_TERMINATOR}

    def terminates(self) -> bool:
        return any(tool == AGENT_TERMINATOR for tool, _ in self.actions)

    def deciding(self) -> bool:
        return self.verdict != UNDECIDED or self.terminates()


@dataclass(frozen=True)
class PathState:
    """What one reasoning path has already analyzed."""

    explored: frozenset[str]
    scr_tags: frozenset[str]

    def unexplored_scr(self) -> frozenset[str]:
        return self.scr_tags - self.explored


@dataclass
class ReasonerConfig:
    llm: Gateway | None = None
    tools: ToolKit | None = None
    store: KnowledgeStore | None = None
    max_depth: int = 6
    max_nodes: int = 24
    branch_limit: int = 4
    correction_enabled: bool = False
    theta_sim: float = 0.7
    inclusion_order: bool = True

    def __post_init__(self):
        if self.max_depth < 1 or self.branch_limit < 1:
            raise ValueError("max_depth and branch_limit must be at least 1")


def parse_step(resp_text: str) -> StepParse:
    """Total parse of one reasoning step; malformed parts degrade to warnings.

    Zero parseable actions means the model stopped talking in the expected
    grammar, which is treated as a termination request.
    """
    warnings: list[str] = []
    verdict = UNDECIDED
    cwe_id: str | None = None
    vm = _VERDICT_RE.search(resp_text)
    if vm:
        verdict = {"yes": VUL, "no": NOT_VUL, "undecided": UNDECIDED}[vm.group(1).lower()]
    if verdict == VUL:
        cm = _CWE_RE.search(resp_text)
        cwe_id = cm.group(0) if cm else None

    actions: list[tuple[str, str]] = []
    matched_lines = 0
    for m in _ACTION_RE.finditer(resp_text):
        matched_lines += 1
        tool, tag = m.group(1), m.group(2) or ""
        if tool not in TOOLS:
            warnings.append(f"unknown tool {tool!r} skipped")
            continue
        if tool == AGENT_TERMINATOR:
            actions.append((tool, ""))
        elif tag:
            actions.append((tool, tag))
        else:
            warnings.append(f"{tool} without a tag skipped")
    total_action_lines = len(_ACTION_LINE_RE.findall(resp_text))
    if total_action_lines > matched_lines:
        warnings.append(f"{total_action_lines - matched_lines} malformed action line(s) skipped")
    if not actions:
        warnings.append("no parseable actions; treating the step as termination")
        actions = [(AGENT_TERMINATOR, "")]

    om = _OBSERVATION_RE.search(resp_text)
    observation_text = om.group(1).strip() if om else ""
    if not om:
        warnings.append("no observation block found")

    return StepParse(observation_text, verdict, cwe_id, actions, warnings)


def enforce_inclusion_order(parse: StepParse, path_state: PathState) -> StepParse:
    """Defer code analysis while screenshots remain unexplored on this path."""
    if not path_state.unexplored_scr():
        return parse
    kept: list[tuple[str, str]] = []
    warnings = list(parse.warnings)
    for tool, tag in parse.actions:
        if tag.startswith("[CODE"):
            warnings.append(f"deferred {tag} until screenshots are explored")
        else:
            kept.append((tool, tag))
    return replace(parse, actions=kept, warnings=warnings)


_CORRECTION_LINE_RE = re.compile(r"^\s*(O[0-9][0-9.]*):\s*(.+?)\s*$", re.MULTILINE)


def correct_path(path: Path, store: KnowledgeStore, llm: Gateway,
                 theta_sim: float, cap: int = GOLDEN_PROMPT_CAP,
                 warnings: list[str] | None = None) -> Path:
    """Rewrite observation texts against golden knowledge, structure untouched.

    The correction prompt carries at most `cap` golden records. Responses may
    only rewrite texts of observations already on the path; anything else in
    the reply is ignored. On gateway failure the original path is kept.
    """
    description = describe_path(path)
    golden = retrieve_golden(store, description, theta_sim)
    if not golden:
        return path
    prompt = build_correction_prompt([g.text for g in golden[:cap]], description)
    try:
        resp = llm.complete(LlmRequest(system_prompt="", user_prompt=prompt))
    except VulrtexError as exc:
        message = f"correction failed, keeping original path: {exc}"
        log.warning("%s", message)
        if warnings is not None:
            warnings.append(message)
        return path
    by_id = {obs.id: obs for obs in path.nodes}
    for m in _CORRECTION_LINE_RE.finditer(resp.text):
        node_id, new_text = m.group(1), m.group(2)
        if node_id in by_id:
            by_id[node_id].text = new_text
    return path


def generate_reasoning_graph(ir: CanonicalIR, cfg: ReasonerConfig) -> ReasoningGraph:
    """Breadth-wise generation under depth/node/branch budgets.

    Terminal observations are shared per (verdict, cwe) so equal conclusions
    from sibling branches converge on one node, and a graph-wide map of
    (tool, element) results lets later branches link to an existing analysis
    instead of re-running it ("no repeated exploration"). Open frontiers left
    by budget limits are closed with a terminator to a shared undecided
    terminal when the node budget still allows one.
    """
    if cfg.llm is None or cfg.tools is None:
        raise ValueError("reasoner needs llm and tools configured")

    g = ReasoningGraph(ir.id)
    root_text = f"{ir.title}\n{ir.content}" if ir.title else ir.content
    g.add_observation(Observation(ROOT_ID, root_text))

    scr_tags = frozenset(el.tag for el in ir.rich_text if el.kind == KIND_SCR)
    path_nodes: dict[str, tuple[str, ...]] = {ROOT_ID: (ROOT_ID,)}
    path_actions: dict[str, tuple[Action, ...]] = {ROOT_ID: ()}
    explored: dict[str, frozenset[str]] = {ROOT_ID: frozenset()}
    dedup: dict[tuple[str, str], str] = {}
    terminal_for: dict[tuple[str, str | None], str] = {}
    branch_counter: dict[int, int] = {}
    edge_counter: dict[int, int] = {}
    level_of: dict[str, int] = {ROOT_ID: 1}

    def meta_warn(message: str) -> None:
        g.meta.setdefault("warnings", []).append(message)
        log.warning("%s: %s", ir.id, message)

    def new_node_id(level: int) -> str:
        branch_counter[level] = branch_counter.get(level, 0) + 1
        return f"O{level}.{branch_counter[level]}"

    def new_edge_id(level: int) -> str:
        edge_counter[level] = edge_counter.get(level, 0) + 1
        return f"A{level}.{edge_counter[level]}"

    frontier: list[str] = [ROOT_ID]
    level = 1
    aborted = False

    while frontier and not aborted:
        if level >= cfg.max_depth or len(g.nodes) >= cfg.max_nodes:
            break

        plans: list[tuple[str, StepParse, list[tuple[str, str]]]] = []
        for node_id in frontier:
            context = Path(tuple(g.nodes[n] for n in path_nodes[node_id]),
                           path_actions[node_id])
            prompt = build_reason_prompt(ir, context)
            try:
                resp = cfg.llm.complete(LlmRequest(system_prompt="", user_prompt=prompt))
            except GatewayExhausted as exc:
                g.meta["partial"] = True
                meta_warn(f"generation aborted at {node_id}: {exc}")
                aborted = True
                break
            parse = parse_step(resp.text)

            filtered: list[tuple[str, str]] = []
            seen: set[str] = set()
            for tool, tag in parse.actions:
                if tool == AGENT_TERMINATOR:
                    filtered.append((tool, ""))
                    continue
                element = ir.element_for(tag)
                if element is None:
                    parse.warnings.append(f"unknown element {tag} skipped")
                    continue
                expected = SCR_ANALYZER if element.kind == KIND_SCR else CODE_ANALYZER
                if tool != expected:
                    parse.warnings.append(f"{tool} cannot analyze {tag}; skipped")
                    continue
                if tag in explored[node_id]:
                    parse.warnings.append(f"{tag} already explored on this path; skipped")
                    continue
                if tag in seen:
                    continue
                seen.add(tag)
                filtered.append((tool, tag))
            parse = replace(parse, actions=filtered)
            # ordering constrains exploration only; a deciding step may still
            # cite code elements as evidence for its verdict
            if cfg.inclusion_order and not parse.deciding():
                parse = enforce_inclusion_order(
                    parse, PathState(explored[node_id], scr_tags))
            limit = cfg.branch_limit - (1 if parse.deciding() else 0)
            elements = [(t, tag) for t, tag in parse.actions
                        if t != AGENT_TERMINATOR][:max(limit, 0)]
            for w in parse.warnings:
                if "skipped" in w or "deferred" in w:
                    meta_warn(f"{node_id}: {w}")
            plans.append((node_id, parse, elements))

        if aborted:
            break

        next_level = level + 1
        new_frontier: list[str] = []
        new_terminator_ids: set[str] = set()

        # terminator edges first so their ids precede tool edges of this level
        for node_id, parse, elements in plans:
            if not parse.deciding():
                continue
            key = (parse.verdict, parse.cwe_id if parse.verdict == VUL else None)
            terminal_id = terminal_for.get(key)
            if terminal_id is None:
                if len(g.nodes) >= cfg.max_nodes:
                    meta_warn(f"{node_id}: node budget blocks its terminal; left open")
                    continue
                terminal_id = new_node_id(next_level)
                g.add_observation(Observation(
                    terminal_id, parse.observation_text,
                    focus_tags=[tag for _, tag in elements],
                    verdict=key[0], cwe_id=key[1]))
                terminal_for[key] = terminal_id
                level_of[terminal_id] = next_level
            aid = new_edge_id(level)
            g.add_action(Action(aid, node_id, terminal_id, AGENT_TERMINATOR))
            new_terminator_ids.add(aid)

        for node_id, parse, elements in plans:
            if parse.deciding():
                key = (parse.verdict, parse.cwe_id if parse.verdict == VUL else None)
                terminal_id = terminal_for.get(key)
                if terminal_id is None:
                    continue
                for tool, tag in elements:
                    g.add_action(Action(new_edge_id(level), node_id, terminal_id, tool, tag))
                continue
            for tool, tag in elements:
                existing = dedup.get((tool, tag))
                if existing is not None:
                    g.add_action(Action(new_edge_id(level), node_id, existing, tool, tag))
                    continue
                if len(g.nodes) >= cfg.max_nodes:
                    meta_warn(f"{node_id}: node budget reached; {tag} not explored")
                    continue
                try:
                    output = cfg.tools.run_tool(tool, ir.element_for(tag)).output_text
                except ToolBackendUnavailable as exc:
                    output = ""
                    meta_warn(f"{node_id}: {tool}({tag}) unavailable: {exc}")
                child_id = new_node_id(next_level)
                child = Observation(child_id, f"{tool}({tag}): {output}", focus_tags=[tag])
                g.add_observation(child)
                act = Action(new_edge_id(level), node_id, child_id, tool, tag)
                g.add_action(act)
                dedup[(tool, tag)] = child_id
                level_of[child_id] = next_level
                path_nodes[child_id] = path_nodes[node_id] + (child_id,)
                path_actions[child_id] = path_actions[node_id] + (act,)
                explored[child_id] = explored[node_id] | {tag}
                new_frontier.append(child_id)

        if cfg.correction_enabled and cfg.store is not None and new_terminator_ids:
            meta_warnings: list[str] = g.meta.setdefault("warnings", [])
            for p in extract_terminated_paths(g):
                if p.actions and p.actions[-1].id in new_terminator_ids:
                    correct_path(p, cfg.store, cfg.llm, cfg.theta_sim,
                                 warnings=meta_warnings)
            if not g.meta["warnings"]:
                del g.meta["warnings"]

        frontier = new_frontier
        level = next_level

    # close whatever never reached a decision; an aborted graph stays as-is
    open_nodes = [] if aborted else [
        nid for nid, obs in g.nodes.items()
        if g.is_terminal(nid) and not obs.decided() and nid not in terminal_for.values()]
    if open_nodes:
        if len(g.nodes) < cfg.max_nodes:
            key = (UNDECIDED, None)
            terminal_id = terminal_for.get(key)
            if terminal_id is None:
                terminal_level = max(level_of[n] for n in open_nodes) + 1
                terminal_id = new_node_id(terminal_level)
                g.add_observation(Observation(terminal_id, "reasoning stopped before a verdict"))
                terminal_for[key] = terminal_id
                level_of[terminal_id] = terminal_level
            for nid in open_nodes:
                g.add_action(Action(new_edge_id(level_of[nid]), nid, terminal_id,
                                    AGENT_TERMINATOR))
        else:
            meta_warn("node budget exhausted; open frontiers left unterminated")

    g.validate()
    return g
