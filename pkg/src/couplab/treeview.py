"""Decision-tree summary of a trained network's grouped predictions.

The inferred tree mirrors the coupling tree: one node per coarse class path,
annotated with the fraction of that group's predictions that stay inside its
coupled label subset, and one leaf per (deepest group, true fine class)
carrying the modal predicted label and its share of that cell's samples. The
modal label ranges over all labels, so off-subset leakage stays visible.

Rendering is deterministic: plain text (indented) or DOT, percentages to two
decimals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coupling import CouplingTree, GroupKey
from .evaluation import GroupedConfusionMatrix, containment


@dataclass
class TreeLeaf:
    group: GroupKey
    true_label: int
    modal_label: int
    fraction: float  # modal count / N_{g,y}


@dataclass
class TreeNode:
    path: GroupKey          # coarse class ids from the root to this node
    containment: float      # share of the group's predictions inside its subset
    children: list["TreeNode"] = field(default_factory=list)
    leaves: list[TreeLeaf] = field(default_factory=list)


@dataclass
class DecisionTree:
    roots: list[TreeNode]
    n_labels: int
    label_names: list[str]

    def nodes(self):
        stack = list(self.roots)
        while stack:
            node = stack.pop(0)
            yield node
            stack.extend(node.children)


def infer_tree(cm: GroupedConfusionMatrix, tree: CouplingTree,
               label_names: list[str] | None = None) -> DecisionTree:
    """Build the behavioral tree from matrices grouped at full coarse depth."""
    depth = tree.n_levels - 1
    for key in cm.groups:
        if len(key) != depth:
            raise ValueError(f"group key {key} is not at full coarse depth {depth}")
    names = label_names or tree.label_names()

    def build(path: GroupKey, level: int) -> TreeNode:
        level_cm = cm.merged_to_depth(level + 1)
        node = TreeNode(path=path,
                        containment=containment(level_cm, tree.subsets(level + 1), path))
        if level + 1 < depth:
            node.children = [build(path + (child,), level + 1)
                             for child in tree.edges[level][path[-1]]]
        else:
            mat = cm.counts(path)
            for y in range(tree.n_labels):
                n_y = int(mat[:, y].sum())
                if n_y == 0:
                    continue
                modal = int(np.argmax(mat[:, y]))  # lowest index wins ties
                node.leaves.append(TreeLeaf(group=path, true_label=y, modal_label=modal,
                                            fraction=int(mat[modal, y]) / n_y))
        return node

    roots = [build((c,), 0) for c in tree.levels[0].classes
             if any(key[0] == c for key in cm.groups)]
    return DecisionTree(roots=roots, n_labels=tree.n_labels, label_names=names)


def render_text(dt: DecisionTree) -> str:
    lines = []

    def visit(node: TreeNode, indent: int):
        pad = "  " * indent
        name = "/".join(str(p) for p in node.path)
        lines.append(f"{pad}[{name}] within-subset {100 * node.containment:.2f}%")
        for leaf in node.leaves:
            lines.append(
                f"{pad}  true={dt.label_names[leaf.true_label]} -> "
                f"{dt.label_names[leaf.modal_label]} ({100 * leaf.fraction:.2f}%)")
        for child in node.children:
            visit(child, indent + 1)

    for root in dt.roots:
        visit(root, 0)
    return "\n".join(lines) + "\n"


def render_dot(dt: DecisionTree) -> str:
    lines = ["digraph decision {", "  rankdir=TB;", "  node [shape=box];"]

    def node_id(path: GroupKey) -> str:
        return "n_" + "_".join(str(p) for p in path)

    def visit(node: TreeNode, parent: str | None):
        nid = node_id(node.path)
        label = f"{node.path[-1]}\\nwithin-subset {100 * node.containment:.2f}%"
        lines.append(f'  {nid} [label="{label}"];')
        if parent:
            lines.append(f"  {parent} -> {nid};")
        for leaf in node.leaves:
            lid = f"{nid}_y{leaf.true_label}"
            text = (f"true {dt.label_names[leaf.true_label]}\\n"
                    f"pred {dt.label_names[leaf.modal_label]} "
                    f"({100 * leaf.fraction:.2f}%)")
            lines.append(f'  {lid} [label="{text}", shape=ellipse];')
            lines.append(f"  {nid} -> {lid};")
        for child in node.children:
            visit(child, nid)

    for root in dt.roots:
        visit(root, None)
    lines.append("}")
    return "\n".join(lines) + "\n"


def render_tree(dt: DecisionTree, format: str = "text") -> str:
    if format == "text":
        return render_text(dt)
    if format == "dot":
        return render_dot(dt)
    raise ValueError(f"unknown format {format!r} (expected 'text' or 'dot')")
