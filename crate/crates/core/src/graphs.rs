//! Per-method control-flow graphs, dominators, and the class-hierarchy call
//! graph rooted at callback entry points.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write;

use crate::ir::{IRMethod, IRProgram, IRStatement, InvokeKind, MethodSig};

/// Kind of a control-flow edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EdgeKind {
    Fallthrough,
    /// `if` branch taken.
    Taken,
    /// `switch` case with this value.
    Case(i64),
    /// `switch` default.
    Default,
}

/// Control-flow graph over statement indices of one method. Statements are
/// dense and 0-based; entry is statement 0. Unreachable statements stay in the
/// node set as isolated nodes.
#[derive(Debug, Clone)]
pub struct Cfg {
    pub method_sig: MethodSig,
    pub succs: Vec<Vec<(usize, EdgeKind)>>,
    pub preds: Vec<Vec<usize>>,
    pub is_branch: Vec<bool>,
}

impl Cfg {
    pub fn node_count(&self) -> usize {
        self.succs.len()
    }

    pub fn entry(&self) -> usize {
        0
    }

    pub fn exit_nodes(&self) -> Vec<usize> {
        (0..self.succs.len())
            .filter(|&n| self.succs[n].is_empty())
            .collect()
    }

    fn succ_indices(&self) -> Vec<Vec<usize>> {
        self.succs
            .iter()
            .map(|edges| edges.iter().map(|(t, _)| *t).collect())
            .collect()
    }
}

/// Build the CFG of a parsed (non-external) method.
pub fn build_cfg(method: &IRMethod) -> Cfg {
    let n = method.body.len();
    let mut succs: Vec<Vec<(usize, EdgeKind)>> = vec![Vec::new(); n];
    let mut is_branch = vec![false; n];
    let target = |label: &str| -> usize {
        *method
            .labels
            .get(label)
            .unwrap_or_else(|| panic!("parser guarantees label `{label}` exists"))
    };
    for (i, stmt) in method.body.iter().enumerate() {
        match stmt {
            IRStatement::Return { .. } => {}
            IRStatement::Goto { target: label } => {
                succs[i].push((target(label), EdgeKind::Fallthrough));
            }
            IRStatement::IfCmp { target: label, .. } => {
                is_branch[i] = true;
                succs[i].push((i + 1, EdgeKind::Fallthrough));
                succs[i].push((target(label), EdgeKind::Taken));
            }
            IRStatement::Switch { cases, default, .. } => {
                is_branch[i] = true;
                for (value, label) in cases {
                    succs[i].push((target(label), EdgeKind::Case(*value)));
                }
                succs[i].push((target(default), EdgeKind::Default));
            }
            _ => {
                succs[i].push((i + 1, EdgeKind::Fallthrough));
            }
        }
    }
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, edges) in succs.iter().enumerate() {
        for (t, _) in edges {
            if !preds[*t].contains(&i) {
                preds[*t].push(i);
            }
        }
    }
    Cfg {
        method_sig: method.sig(),
        succs,
        preds,
        is_branch,
    }
}

/// Immediate-dominator tree computed with the iterative Cooper-Harvey-Kennedy
/// scheme over reverse postorder.
#[derive(Debug, Clone)]
pub struct Dominators {
    entry: usize,
    idom: Vec<Option<usize>>,
    rpo_number: Vec<Option<usize>>,
}

impl Dominators {
    pub fn compute(succs: &[Vec<usize>], entry: usize) -> Self {
        let n = succs.len();
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, out) in succs.iter().enumerate() {
            for &t in out {
                preds[t].push(i);
            }
        }
        // reverse postorder over reachable nodes
        let mut order = Vec::new();
        let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
        if n > 0 {
            let mut stack: Vec<(usize, usize)> = vec![(entry, 0)];
            state[entry] = 1;
            while let Some((node, child)) = stack.pop() {
                if child < succs[node].len() {
                    stack.push((node, child + 1));
                    let next = succs[node][child];
                    if state[next] == 0 {
                        state[next] = 1;
                        stack.push((next, 0));
                    }
                } else {
                    state[node] = 2;
                    order.push(node);
                }
            }
        }
        order.reverse();
        let mut rpo_number = vec![None; n];
        for (i, &node) in order.iter().enumerate() {
            rpo_number[node] = Some(i);
        }

        let mut idom: Vec<Option<usize>> = vec![None; n];
        if n == 0 {
            return Self {
                entry,
                idom,
                rpo_number,
            };
        }
        idom[entry] = Some(entry);
        let intersect =
            |idom: &[Option<usize>], rpo: &[Option<usize>], mut a: usize, mut b: usize| {
                while a != b {
                    while rpo[a].unwrap() > rpo[b].unwrap() {
                        a = idom[a].unwrap();
                    }
                    while rpo[b].unwrap() > rpo[a].unwrap() {
                        b = idom[b].unwrap();
                    }
                }
                a
            };
        let mut changed = true;
        while changed {
            changed = false;
            for &node in &order {
                if node == entry {
                    continue;
                }
                let mut new_idom: Option<usize> = None;
                for &p in &preds[node] {
                    if idom[p].is_none() {
                        continue;
                    }
                    new_idom = Some(match new_idom {
                        None => p,
                        Some(current) => intersect(&idom, &rpo_number, p, current),
                    });
                }
                if new_idom.is_some() && idom[node] != new_idom {
                    idom[node] = new_idom;
                    changed = true;
                }
            }
        }
        Self {
            entry,
            idom,
            rpo_number,
        }
    }

    pub fn is_reachable(&self, node: usize) -> bool {
        self.rpo_number[node].is_some()
    }

    /// Immediate dominator; `None` for the entry node and unreachable nodes.
    pub fn idom(&self, node: usize) -> Option<usize> {
        if node == self.entry {
            return None;
        }
        self.idom[node].filter(|_| self.is_reachable(node))
    }

    /// Whether `a` dominates `b` (reflexive).
    pub fn dominates(&self, a: usize, b: usize) -> bool {
        if !self.is_reachable(a) || !self.is_reachable(b) {
            return false;
        }
        let mut current = b;
        loop {
            if current == a {
                return true;
            }
            if current == self.entry {
                return false;
            }
            current = self.idom[current].expect("reachable non-entry node has idom");
        }
    }

    fn depth(&self, node: usize) -> usize {
        let mut d = 0;
        let mut current = node;
        while current != self.entry {
            current = self.idom[current].expect("reachable node");
            d += 1;
        }
        d
    }
}

/// All `if`/`switch` nodes that dominate `stmt` such that `stmt` is reachable
/// through exactly one of their out-edges, paired with that edge, outermost
/// guard first. Empty for unguarded or unreachable statements.
pub fn dominating_guards(cfg: &Cfg, stmt: usize) -> Vec<(usize, EdgeKind)> {
    let succs = cfg.succ_indices();
    let dom = Dominators::compute(&succs, cfg.entry());
    if !dom.is_reachable(stmt) {
        return Vec::new();
    }
    let mut guards = Vec::new();
    for d in 0..cfg.node_count() {
        if d == stmt || !cfg.is_branch[d] || !dom.dominates(d, stmt) {
            continue;
        }
        let mut reaching_edges = Vec::new();
        for &(edge_target, kind) in &cfg.succs[d] {
            if reaches_avoiding(&succs, edge_target, stmt, d) {
                reaching_edges.push(kind);
            }
        }
        if reaching_edges.len() == 1 {
            guards.push((d, reaching_edges[0]));
        }
    }
    guards.sort_by_key(|(d, _)| dom.depth(*d));
    guards
}

/// BFS reachability from `from` to `to` skipping `removed`.
fn reaches_avoiding(succs: &[Vec<usize>], from: usize, to: usize, removed: usize) -> bool {
    if from == removed {
        return false;
    }
    if from == to {
        return true;
    }
    let mut seen = vec![false; succs.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        for &next in &succs[node] {
            if next == removed || seen[next] {
                continue;
            }
            if next == to {
                return true;
            }
            seen[next] = true;
            queue.push_back(next);
        }
    }
    false
}

/// A callback treated as an analysis root: matches by method name and, when
/// given, by exact parameter types.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallbackPattern {
    pub name: String,
    pub params: Option<Vec<String>>,
}

impl CallbackPattern {
    fn matches(&self, method: &IRMethod) -> bool {
        self.name == method.name
            && self
                .params
                .as_ref()
                .map(|p| p == &method.params)
                .unwrap_or(true)
    }
}

/// Entry-point model: a flat root set of framework callbacks, extended by
/// program `entry` hints and user additions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPointModel {
    pub patterns: Vec<CallbackPattern>,
    pub extra_signatures: Vec<MethodSig>,
}

impl EntryPointModel {
    pub fn default_android() -> Self {
        let exact = |name: &str, params: &[&str]| CallbackPattern {
            name: name.into(),
            params: Some(params.iter().map(|p| p.to_string()).collect()),
        };
        let by_name = |name: &str| CallbackPattern {
            name: name.into(),
            params: None,
        };
        Self {
            patterns: vec![
                exact("onSensorChanged", &["android.hardware.SensorEvent"]),
                exact("onAccuracyChanged", &["android.hardware.Sensor", "int"]),
                by_name("onCreate"),
                by_name("onResume"),
                by_name("onPause"),
            ],
            extra_signatures: Vec::new(),
        }
    }

    pub fn with_signatures(mut self, sigs: impl IntoIterator<Item = MethodSig>) -> Self {
        self.extra_signatures.extend(sigs);
        self
    }
}

impl Default for EntryPointModel {
    fn default() -> Self {
        Self::default_android()
    }
}

/// Call graph built by class-hierarchy analysis. Edges lead only to parsed
/// methods; call sites whose every target is a framework stub have an empty
/// target set.
#[derive(Debug, Clone)]
pub struct CallGraph {
    pub entry_points: Vec<MethodSig>,
    pub reachable: BTreeSet<MethodSig>,
    pub edges: BTreeMap<(MethodSig, usize), BTreeSet<MethodSig>>,
    pub callers_of: BTreeMap<MethodSig, BTreeSet<(MethodSig, usize)>>,
    pub warnings: Vec<String>,
}

impl CallGraph {
    pub fn targets(&self, caller: &MethodSig, stmt: usize) -> Option<&BTreeSet<MethodSig>> {
        self.edges.get(&(caller.clone(), stmt))
    }
}

/// Class-hierarchy resolution of one call site to parsed methods.
pub fn resolve_call_targets<'a>(program: &'a IRProgram, stmt: &IRStatement) -> Vec<&'a IRMethod> {
    let IRStatement::Invoke { kind, sig, .. } = stmt else {
        return Vec::new();
    };
    let mut found: Vec<&IRMethod> = Vec::new();
    let mut push = |m: &'a IRMethod| {
        if !found.iter().any(|f| f.sig() == m.sig()) {
            found.push(m);
        }
    };
    match kind {
        InvokeKind::Static => {
            if let Some(m) = program.resolve_method(sig).internal() {
                push(m);
            }
        }
        InvokeKind::Virtual | InvokeKind::Interface => {
            for class in program.subtypes_of(&sig.class_name) {
                let candidate =
                    MethodSig::new(class.name.clone(), sig.name.clone(), sig.params.clone());
                if let Some(m) = program.resolve_method(&candidate).internal() {
                    push(m);
                }
            }
            // also cover hierarchies rooted in unparsed framework classes
            if let Some(m) = program.resolve_method(sig).internal() {
                push(m);
            }
        }
    }
    // threads run sequentially: `start()` on a class with a parsed `run()`
    // behaves like a direct call to it
    if sig.name == "start" && sig.params.is_empty() && *kind != InvokeKind::Static {
        for class in program.subtypes_of(&sig.class_name) {
            let run = MethodSig::new(class.name.clone(), "run".to_string(), Vec::new());
            if let Some(m) = program.resolve_method(&run).internal() {
                push(m);
            }
        }
    }
    found
}

/// Build the call graph from the entry-point roots. Pattern roots that match
/// nothing are dropped with a warning; methods unreachable from the roots are
/// excluded.
pub fn build_callgraph(program: &IRProgram, entry_model: &EntryPointModel) -> CallGraph {
    let mut entry_points: Vec<MethodSig> = Vec::new();
    let mut warnings = Vec::new();

    for pattern in &entry_model.patterns {
        let mut matched = false;
        for method in program.methods() {
            if pattern.matches(method) {
                matched = true;
                let sig = method.sig();
                if !entry_points.contains(&sig) {
                    entry_points.push(sig);
                }
            }
        }
        if !matched {
            warnings.push(format!(
                "entry callback `{}` not present in program; dropped",
                pattern.name
            ));
        }
    }
    for sig in entry_model
        .extra_signatures
        .iter()
        .chain(program.entry_hints.iter())
    {
        match program.resolve_method(sig).internal() {
            Some(m) => {
                let resolved = m.sig();
                if !entry_points.contains(&resolved) {
                    entry_points.push(resolved);
                }
            }
            None => warnings.push(format!(
                "entry signature `{sig}` not present in program; dropped"
            )),
        }
    }

    let mut reachable: BTreeSet<MethodSig> = BTreeSet::new();
    let mut edges: BTreeMap<(MethodSig, usize), BTreeSet<MethodSig>> = BTreeMap::new();
    let mut callers_of: BTreeMap<MethodSig, BTreeSet<(MethodSig, usize)>> = BTreeMap::new();
    let mut worklist: VecDeque<MethodSig> = entry_points.iter().cloned().collect();
    while let Some(sig) = worklist.pop_front() {
        if !reachable.insert(sig.clone()) {
            continue;
        }
        let method = program
            .resolve_method(&sig)
            .internal()
            .expect("reachable methods are parsed");
        for (i, stmt) in method.body.iter().enumerate() {
            if !matches!(stmt, IRStatement::Invoke { .. }) {
                continue;
            }
            let targets = resolve_call_targets(program, stmt);
            let entry = edges.entry((sig.clone(), i)).or_default();
            for target in targets {
                let target_sig = target.sig();
                entry.insert(target_sig.clone());
                callers_of
                    .entry(target_sig.clone())
                    .or_default()
                    .insert((sig.clone(), i));
                if !reachable.contains(&target_sig) {
                    worklist.push_back(target_sig);
                }
            }
        }
    }

    CallGraph {
        entry_points,
        reachable,
        edges,
        callers_of,
        warnings,
    }
}

/// DOT rendering of a CFG for `--dump-graphs`.
pub fn cfg_to_dot(cfg: &Cfg, method: &IRMethod) -> String {
    let mut out = String::new();
    writeln!(out, "digraph \"{}\" {{", cfg.method_sig).unwrap();
    for (i, stmt) in method.body.iter().enumerate() {
        let text = stmt.to_string().replace('\\', "\\\\").replace('"', "\\\"");
        writeln!(out, "  n{i} [label=\"{i}: {text}\"];").unwrap();
    }
    for (i, edges) in cfg.succs.iter().enumerate() {
        for (t, kind) in edges {
            let label = match kind {
                EdgeKind::Fallthrough => String::new(),
                EdgeKind::Taken => " [label=\"taken\"]".into(),
                EdgeKind::Case(v) => format!(" [label=\"case {v}\"]"),
                EdgeKind::Default => " [label=\"default\"]".into(),
            };
            writeln!(out, "  n{i} -> n{t}{label};").unwrap();
        }
    }
    writeln!(out, "}}").unwrap();
    out
}

/// DOT rendering of the call graph for `--dump-graphs`.
pub fn callgraph_to_dot(cg: &CallGraph) -> String {
    let mut out = String::new();
    writeln!(out, "digraph callgraph {{").unwrap();
    for sig in &cg.reachable {
        let shape = if cg.entry_points.contains(sig) {
            ", shape=box"
        } else {
            ""
        };
        writeln!(out, "  \"{sig}\" [label=\"{sig}\"{shape}];").unwrap();
    }
    for ((caller, stmt), targets) in &cg.edges {
        for target in targets {
            writeln!(out, "  \"{caller}\" -> \"{target}\" [label=\"{stmt}\"];").unwrap();
        }
    }
    writeln!(out, "}}").unwrap();
    out
}
