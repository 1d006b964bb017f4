//! Runtime instantiation of a validated model.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};

use super::ir::*;
use super::{flatten_inheritance, typeck, Direction, ModelUnit, SigKind};
use crate::blocks::BlockState;
use crate::diag::{sort_diagnostics, Code, Diagnostic};

/// Marker for "no index".
pub const ABSENT: usize = usize::MAX;

/// The provider a required-port signature is bound to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Callee {
    pub instance: usize,
    pub port: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binding {
    pub instance: usize,
    pub port: usize,
    pub sig: usize,
    pub callee: Callee,
}

#[derive(Debug, Clone)]
pub struct Instance {
    /// Dotted path from the root, which is called `root`.
    pub path: String,
    pub class: usize,
    pub parent: Option<usize>,
    /// Indexed like the class's parts.
    pub children: Vec<usize>,
    pub attrs: Vec<Value>,
    pub state: Option<usize>,
    pub block: Option<BlockState>,
}

/// Fully resolved instantiation. Instances are stored in preorder, so an
/// instance's index is also its scheduling priority.
#[derive(Debug, Clone)]
pub struct InstanceTree {
    pub program: Arc<Program>,
    pub instances: Vec<Instance>,
    pub bindings: Vec<Binding>,
    lookup: HashMap<(usize, usize, usize), Callee>,
    /// Block-bearing instances in continuous evaluation order.
    pub continuous_order: Vec<usize>,
}

/// Validate, flatten, lower and instantiate a model.
pub fn instantiate(model: &ModelUnit) -> Result<InstanceTree, Vec<Diagnostic>> {
    let diags = super::validate(model);
    if !diags.is_empty() {
        return Err(diags);
    }
    let flat = flatten_inheritance(model)?;
    let (program, mut diags) = typeck::lower(&flat);
    if !diags.is_empty() {
        sort_diagnostics(&mut diags);
        return Err(diags);
    }
    build(program)
}

impl InstanceTree {
    pub fn class(&self, instance: usize) -> &RActor {
        &self.program.actors[self.instances[instance].class]
    }

    pub fn find(&self, path: &str) -> Option<usize> {
        self.instances.iter().position(|i| i.path == path)
    }

    pub fn callee(&self, instance: usize, port: usize, sig: usize) -> Option<Callee> {
        self.lookup.get(&(instance, port, sig)).copied()
    }

    /// Follow relays of a provided port down to the implementing instance.
    pub fn resolve_provided(&self, instance: usize, port: usize) -> Callee {
        resolve_provided(&self.program, &self.instances, instance, port)
    }

    pub fn model_name(&self) -> &str {
        &self.program.name
    }
}

pub(crate) fn build(program: Program) -> Result<InstanceTree, Vec<Diagnostic>> {
    let mut instances = Vec::new();
    let mut diags = Vec::new();
    create(&program, program.root, "root".to_string(), None, 0, &mut instances, &mut diags);
    if !diags.is_empty() {
        return Err(diags);
    }

    let mut bindings = Vec::new();
    for (ix, inst) in instances.iter().enumerate() {
        let class = &program.actors[inst.class];
        for (pi, port) in class.ports.iter().enumerate() {
            if port.direction != Direction::Required {
                continue;
            }
            match resolve_required(&program, &instances, ix, pi) {
                Some(callee) => {
                    for sig in 0..program.protocols[port.protocol].sigs.len() {
                        bindings.push(Binding { instance: ix, port: pi, sig, callee });
                    }
                }
                None => diags.push(Diagnostic::new(
                    Code::Unbound,
                    port.span,
                    format!("required port `{}` of `{}` is not connected", port.name, inst.path),
                )),
            }
        }
    }
    if !diags.is_empty() {
        sort_diagnostics(&mut diags);
        return Err(diags);
    }
    let lookup = bindings.iter().map(|b| ((b.instance, b.port, b.sig), b.callee)).collect();
    let mut tree = InstanceTree {
        program: Arc::new(program),
        instances,
        bindings,
        lookup,
        continuous_order: Vec::new(),
    };

    call_cycles(&tree, &mut diags);
    let order = continuous_order(&tree, &mut diags);
    if !diags.is_empty() {
        sort_diagnostics(&mut diags);
        return Err(diags);
    }
    tree.continuous_order = order;
    Ok(tree)
}

const MAX_DEPTH: usize = 64;

fn create(
    program: &Program,
    class: usize,
    path: String,
    parent: Option<usize>,
    depth: usize,
    out: &mut Vec<Instance>,
    diags: &mut Vec<Diagnostic>,
) -> usize {
    let c = &program.actors[class];
    let ix = out.len();
    out.push(Instance {
        path: path.clone(),
        class,
        parent,
        children: Vec::new(),
        attrs: c.layout.slots.iter().map(|s| s.init).collect(),
        state: c.machine.as_ref().map(|m| m.initial),
        block: c.block.as_ref().map(|b| BlockState::new(b.kind)),
    });
    if depth > MAX_DEPTH {
        diags.push(Diagnostic::new(Code::ContainCycle, c.span, "containment is too deep or cyclic"));
        return ix;
    }
    for (name, part_class) in &c.parts {
        let child = create(program, *part_class, format!("{path}.{name}"), Some(ix), depth + 1, out, diags);
        out[ix].children.push(child);
    }
    ix
}

fn resolve_required(p: &Program, insts: &[Instance], ix: usize, port: usize) -> Option<Callee> {
    let parent = insts[ix].parent?;
    let pclass = &p.actors[insts[parent].class];
    let part = insts[parent].children.iter().position(|&c| c == ix)?;
    let here = REnd { part: Some(part), port };
    let other = pclass.channels.iter().find_map(|c| {
        if c.a == here {
            Some(c.b)
        } else if c.b == here {
            Some(c.a)
        } else {
            None
        }
    })?;
    match other.part {
        None => resolve_required(p, insts, parent, other.port),
        Some(k) => Some(resolve_provided(p, insts, insts[parent].children[k], other.port)),
    }
}

fn resolve_provided(p: &Program, insts: &[Instance], ix: usize, port: usize) -> Callee {
    let class = &p.actors[insts[ix].class];
    let here = REnd { part: None, port };
    let inner = class.channels.iter().find_map(|c| {
        if c.a == here {
            Some(c.b)
        } else if c.b == here {
            Some(c.a)
        } else {
            None
        }
    });
    match inner {
        Some(REnd { part: Some(k), port: q }) => resolve_provided(p, insts, insts[ix].children[k], q),
        _ => Callee { instance: ix, port },
    }
}

/// Every synchronous call made while running `stmts` of `instance`, as
/// (callee instance, callee method) pairs, plus whether `out` of some instance
/// is read. Transitions triggered by a called method are included.
struct Reach<'t> {
    tree: &'t InstanceTree,
}

impl Reach<'_> {
    fn calls_in_expr(&self, inst: usize, e: &RExpr, calls: &mut BTreeSet<(usize, usize)>, outs: &mut bool) {
        match e {
            RExpr::Out => *outs = true,
            RExpr::PortCall { port, sig, args, .. } => {
                for a in args {
                    self.calls_in_expr(inst, a, calls, outs);
                }
                if let Some(c) = self.tree.callee(inst, *port, *sig) {
                    let cls = self.tree.class(c.instance);
                    let name = &self.tree.program.protocols[self.tree.class(inst).ports[*port].protocol].sigs[*sig].name;
                    if let Some(m) = cls.method(name) {
                        calls.insert((c.instance, m));
                    }
                }
            }
            RExpr::DataCall { args, .. } => {
                for a in args {
                    self.calls_in_expr(inst, a, calls, outs);
                }
            }
            RExpr::ToReal(x) | RExpr::Neg(_, x) | RExpr::Not(x) => self.calls_in_expr(inst, x, calls, outs),
            RExpr::Arith(_, _, a, b, _) | RExpr::Cmp(_, _, a, b) | RExpr::And(a, b) | RExpr::Or(a, b) => {
                self.calls_in_expr(inst, a, calls, outs);
                self.calls_in_expr(inst, b, calls, outs);
            }
            RExpr::Const(_) | RExpr::Slot(_) | RExpr::Param(_) => {}
        }
    }

    fn calls_in_stmts(&self, inst: usize, body: &[RStmt], calls: &mut BTreeSet<(usize, usize)>, outs: &mut bool) {
        for s in body {
            match s {
                RStmt::Assign { value: e, .. } | RStmt::Eval(e) | RStmt::Return(e) => {
                    self.calls_in_expr(inst, e, calls, outs)
                }
                RStmt::SetTimer { ticks, .. } => self.calls_in_expr(inst, ticks, calls, outs),
                RStmt::Send { args, .. } => {
                    for a in args {
                        self.calls_in_expr(inst, a, calls, outs);
                    }
                }
                RStmt::CancelTimer { .. } => {}
            }
        }
    }

    /// Direct callees of method `m` of `inst`, and whether it reads its own `out`.
    fn method_edges(&self, inst: usize, m: usize) -> (BTreeSet<(usize, usize)>, bool) {
        let cls = self.tree.class(inst);
        let mut calls = BTreeSet::new();
        let mut outs = false;
        self.calls_in_stmts(inst, &cls.methods[m].body, &mut calls, &mut outs);
        if let Some(machine) = &cls.machine {
            for t in machine.transitions.iter().filter(|t| t.trigger == cls.methods[m].name) {
                if let Some(g) = &t.guard {
                    self.calls_in_expr(inst, g, &mut calls, &mut outs);
                }
                self.calls_in_stmts(inst, &t.actions, &mut calls, &mut outs);
            }
        }
        (calls, outs)
    }
}

fn call_cycles(tree: &InstanceTree, diags: &mut Vec<Diagnostic>) {
    let reach = Reach { tree };
    let mut g = DiGraph::<(usize, usize), ()>::new();
    let mut node: HashMap<(usize, usize), NodeIndex> = HashMap::new();
    for (i, inst) in tree.instances.iter().enumerate() {
        for m in 0..tree.program.actors[inst.class].methods.len() {
            node.insert((i, m), g.add_node((i, m)));
        }
    }
    for (&(i, m), &n) in &node {
        for callee in reach.method_edges(i, m).0 {
            g.add_edge(n, node[&callee], ());
        }
    }
    for scc in tarjan_scc(&g) {
        let (i, m) = g[scc[0]];
        let self_loop = scc.len() == 1 && g.contains_edge(scc[0], scc[0]);
        if scc.len() > 1 || self_loop {
            let mut members: Vec<(usize, usize)> = scc.iter().map(|&n| g[n]).collect();
            members.sort();
            let (i, m) = members.first().copied().unwrap_or((i, m));
            let method = &tree.class(i).methods[m];
            let names: Vec<String> = members
                .iter()
                .map(|&(i, m)| format!("{}.{}", tree.instances[i].path, tree.class(i).methods[m].name))
                .collect();
            diags.push(Diagnostic::new(
                Code::CallCycle,
                method.span,
                format!("synchronous calls form a cycle: {}", names.join(" -> ")),
            ));
        }
    }
}

/// Which block outputs a block input reads, following calls transitively.
fn block_reads(tree: &InstanceTree, inst: usize) -> BTreeSet<usize> {
    let reach = Reach { tree };
    let mut reads = BTreeSet::new();
    let Some(block) = &tree.class(inst).block else { return reads };
    let mut calls = BTreeSet::new();
    let mut own = false;
    reach.calls_in_expr(inst, &block.input, &mut calls, &mut own);
    let mut seen = BTreeSet::new();
    let mut stack: Vec<(usize, usize)> = calls.into_iter().collect();
    while let Some((i, m)) = stack.pop() {
        if !seen.insert((i, m)) {
            continue;
        }
        let (next, reads_out) = reach.method_edges(i, m);
        if reads_out && tree.instances[i].block.is_some() {
            reads.insert(i);
        }
        stack.extend(next);
    }
    reads.remove(&inst);
    reads
}

fn continuous_order(tree: &InstanceTree, diags: &mut Vec<Diagnostic>) -> Vec<usize> {
    let blocks: Vec<usize> =
        (0..tree.instances.len()).filter(|&i| tree.instances[i].block.is_some()).collect();
    let mut g = DiGraph::<usize, ()>::new();
    let node: BTreeMap<usize, NodeIndex> = blocks.iter().map(|&i| (i, g.add_node(i))).collect();
    for &b in &blocks {
        for src in block_reads(tree, b) {
            g.add_edge(node[&src], node[&b], ());
        }
    }

    // A cycle made only of stateless blocks has no previous-tick value to break it.
    let stateless: Vec<usize> = blocks
        .iter()
        .copied()
        .filter(|&i| tree.class(i).block.as_ref().is_some_and(|b| !b.kind.is_stateful()))
        .collect();
    let mut sg = DiGraph::<usize, ()>::new();
    let snode: BTreeMap<usize, NodeIndex> = stateless.iter().map(|&i| (i, sg.add_node(i))).collect();
    for e in g.edge_indices() {
        let (a, b) = g.edge_endpoints(e).unwrap_or((NodeIndex::new(0), NodeIndex::new(0)));
        if let (Some(&x), Some(&y)) = (snode.get(&g[a]), snode.get(&g[b])) {
            sg.add_edge(x, y, ());
        }
    }
    for scc in tarjan_scc(&sg) {
        if scc.len() > 1 {
            let mut members: Vec<usize> = scc.iter().map(|&n| sg[n]).collect();
            members.sort();
            for &i in &members {
                let span = tree.class(i).block.as_ref().map(|b| b.span).unwrap_or_default();
                diags.push(Diagnostic::new(
                    Code::AlgebraicLoop,
                    span,
                    format!("`{}` is on a cycle of stateless blocks", tree.instances[i].path),
                ));
            }
        }
    }

    // Topological order of strongly connected components; ties and members of
    // one component go by preorder index.
    let sccs = tarjan_scc(&g);
    let mut comp_of = vec![0usize; g.node_count()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (c, scc) in sccs.iter().enumerate() {
        let mut m: Vec<usize> = scc.iter().map(|&n| g[n]).collect();
        m.sort();
        for &n in scc {
            comp_of[n.index()] = c;
        }
        members.push(m);
    }
    let mut indegree = vec![0usize; members.len()];
    let mut succ: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); members.len()];
    for e in g.edge_indices() {
        if let Some((a, b)) = g.edge_endpoints(e) {
            let (ca, cb) = (comp_of[a.index()], comp_of[b.index()]);
            if ca != cb && succ[ca].insert(cb) {
                indegree[cb] += 1;
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = BinaryHeap::new();
    for (c, m) in members.iter().enumerate() {
        if indegree[c] == 0 {
            ready.push(Reverse((m[0], c)));
        }
    }
    let mut order = Vec::with_capacity(blocks.len());
    while let Some(Reverse((_, c))) = ready.pop() {
        order.extend(members[c].iter().copied());
        for &n in &succ[c] {
            indegree[n] -= 1;
            if indegree[n] == 0 {
                ready.push(Reverse((members[n][0], n)));
            }
        }
    }
    order
}

impl InstanceTree {
    /// Signature metadata for a binding key.
    pub fn signature(&self, instance: usize, port: usize, sig: usize) -> &RSig {
        let proto = self.class(instance).ports[port].protocol;
        &self.program.protocols[proto].sigs[sig]
    }

    /// Everything an instance can be sent from outside: messages of its
    /// provided ports. Methods are reachable through [`InstanceTree::class`].
    pub fn receives(&self, instance: usize, name: &str) -> bool {
        self.class(instance).ports.iter().any(|p| {
            p.direction == Direction::Provided
                && self.program.protocols[p.protocol]
                    .sigs
                    .iter()
                    .any(|s| s.kind == SigKind::Message && s.name == name)
        })
    }
}
