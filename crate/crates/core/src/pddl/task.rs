use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use super::domain::{ActionSchema, DomainDescription, PredicateSchema, Term};
use super::problem::{NamedAtom, ProblemDescription};
use super::state::{AtomId, SymbolicState};
use super::PddlError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Object {
    pub name: String,
    pub ty: String,
    /// Domain constants keep their identity in graph encodings.
    pub is_constant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroundAtom {
    pub predicate: usize,
    pub args: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundAction {
    pub schema: usize,
    /// Object index bound to each schema parameter.
    pub binding: Vec<u32>,
    /// Rendered as `(name obj1 ... objk)`.
    pub name: String,
    pub pre: Vec<AtomId>,
    pub add: Vec<AtomId>,
    pub del: Vec<AtomId>,
}

/// A fully grounded STRIPS task. Immutable once built.
#[derive(Debug, Clone)]
pub struct GroundedTask {
    pub domain_name: String,
    pub problem_name: String,
    pub types: super::TypeHierarchy,
    pub objects: Vec<Object>,
    pub predicates: Vec<PredicateSchema>,
    pub schemas: Vec<ActionSchema>,
    pub atoms: Vec<GroundAtom>,
    pub actions: Vec<GroundAction>,
    pub initial: SymbolicState,
    pub goal: Vec<AtomId>,
    atom_names: Vec<String>,
    atom_index: HashMap<String, AtomId>,
    action_index: HashMap<String, usize>,
}

/// Successor entries: (index into `task.actions`, resulting state).
pub type Successor = (usize, SymbolicState);

impl GroundedTask {
    pub fn from_texts(domain: &str, problem: &str) -> Result<Self, PddlError> {
        let d = super::parse_domain(domain)?;
        let p = super::parse_problem(problem, &d)?;
        ground(&d, &p)
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom_name(&self, atom: AtomId) -> &str {
        &self.atom_names[atom as usize]
    }

    /// Looks up an atom by its rendering, e.g. `(on b1 b2)`. Whitespace and
    /// case are normalised.
    pub fn atom_id(&self, text: &str) -> Option<AtomId> {
        self.atom_index.get(&normalize(text)).copied()
    }

    pub fn action_id(&self, text: &str) -> Option<usize> {
        self.action_index.get(&normalize(text)).copied()
    }

    pub fn object_id(&self, name: &str) -> Option<u32> {
        self.objects.iter().position(|o| o.name == name).map(|i| i as u32)
    }

    pub fn goal_state(&self) -> SymbolicState {
        SymbolicState::from_atoms(self.num_atoms(), self.goal.iter().copied())
    }

    pub fn state_from_names<'a>(
        &self,
        atoms: impl IntoIterator<Item = &'a str>,
    ) -> Result<SymbolicState, PddlError> {
        let mut s = SymbolicState::empty(self.num_atoms());
        for a in atoms {
            let id = self
                .atom_id(a)
                .ok_or_else(|| PddlError::Undeclared { kind: "atom", name: a.to_string() })?;
            s.insert(id);
        }
        Ok(s)
    }

    pub fn applicable(&self, state: &SymbolicState, action: &GroundAction) -> bool {
        state.contains_all(&action.pre)
    }

    /// `(s \ del) ∪ add`. The input state is left untouched.
    pub fn apply(&self, state: &SymbolicState, action: &GroundAction) -> Result<SymbolicState, PddlError> {
        if !self.applicable(state, action) {
            return Err(PddlError::Inapplicable { action: action.name.clone() });
        }
        Ok(apply_unchecked(state, action))
    }

    /// Every applicable action paired with its successor state, in canonical
    /// action order. Distinct actions reaching equal states stay separate.
    pub fn successors(&self, state: &SymbolicState) -> Vec<Successor> {
        self.actions
            .iter()
            .enumerate()
            .filter(|(_, a)| state.contains_all(&a.pre))
            .map(|(i, a)| (i, apply_unchecked(state, a)))
            .collect()
    }

    pub fn goal_satisfied(&self, state: &SymbolicState) -> bool {
        state.contains_all(&self.goal)
    }

    /// Canonical rendering: atoms in canonical order, space separated.
    pub fn render_state(&self, state: &SymbolicState) -> String {
        let mut out = String::new();
        for (i, a) in state.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.atom_name(a));
        }
        out
    }

    pub fn render_atoms(&self, atoms: &[AtomId]) -> String {
        atoms.iter().map(|&a| self.atom_name(a)).collect::<Vec<_>>().join(" ")
    }

    /// Diagnostic dump: atoms one per line, then actions with pre/add/del.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "; task {} {}", self.domain_name, self.problem_name);
        let _ = writeln!(out, "atoms {}", self.atoms.len());
        for name in &self.atom_names {
            let _ = writeln!(out, "{name}");
        }
        let _ = writeln!(out, "actions {}", self.actions.len());
        for a in &self.actions {
            let _ = writeln!(
                out,
                "{} pre: {} add: {} del: {}",
                a.name,
                self.render_atoms(&a.pre),
                self.render_atoms(&a.add),
                self.render_atoms(&a.del)
            );
        }
        out
    }
}

#[inline]
pub(crate) fn apply_unchecked(state: &SymbolicState, action: &GroundAction) -> SymbolicState {
    let mut next = state.clone();
    for &d in &action.del {
        next.remove(d);
    }
    for &a in &action.add {
        next.insert(a);
    }
    next
}

fn normalize(text: &str) -> String {
    let inner = text.trim().trim_start_matches('(').trim_end_matches(')');
    let parts: Vec<String> = inner.split_whitespace().map(str::to_lowercase).collect();
    format!("({})", parts.join(" "))
}

fn render(name: &str, args: impl IntoIterator<Item = impl AsRef<str>>) -> String {
    let mut s = format!("({name}");
    for a in args {
        s.push(' ');
        s.push_str(a.as_ref());
    }
    s.push(')');
    s
}

struct Candidate {
    schema: usize,
    binding: Vec<u32>,
    pre: Vec<u32>,
    add: Vec<u32>,
    del: Vec<u32>,
}

/// Grounds a parsed domain/problem pair.
///
/// Actions are instantiated over type-consistent bindings, static
/// preconditions are checked against the initial state, bindings whose add
/// and delete lists overlap are discarded, and only actions reachable in the
/// delete relaxation are kept. Atoms and actions are sorted by rendering.
pub fn ground(domain: &DomainDescription, problem: &ProblemDescription) -> Result<GroundedTask, PddlError> {
    if problem.domain_name != domain.name {
        return Err(PddlError::DomainMismatch { expected: domain.name.clone(), found: problem.domain_name.clone() });
    }
    let mut objects: Vec<Object> = problem
        .objects
        .iter()
        .map(|(n, t)| Object {
            name: n.clone(),
            ty: t.clone(),
            is_constant: domain.constants.iter().any(|(c, _)| c == n),
        })
        .collect();
    objects.sort_by(|a, b| a.name.cmp(&b.name));
    let obj_index: HashMap<&str, u32> =
        objects.iter().enumerate().map(|(i, o)| (o.name.as_str(), i as u32)).collect();
    let constant_ids: Vec<u32> = domain.constants.iter().map(|(c, _)| obj_index[c.as_str()]).collect();

    // Temporary atom interning; final ids are assigned after sorting.
    let mut interner: HashMap<GroundAtom, u32> = HashMap::new();
    let mut table: Vec<GroundAtom> = Vec::new();
    let mut intern = |atom: GroundAtom| -> u32 {
        if let Some(&id) = interner.get(&atom) {
            return id;
        }
        let id = table.len() as u32;
        table.push(atom.clone());
        interner.insert(atom, id);
        id
    };
    let named = |a: &NamedAtom| GroundAtom {
        predicate: domain.predicate(&a.predicate).expect("validated by parser"),
        args: a.args.iter().map(|n| obj_index[n.as_str()]).collect(),
    };

    let init: Vec<u32> = problem.init.iter().map(|a| intern(named(a))).collect();
    let goal: Vec<u32> = problem.goal.iter().map(|a| intern(named(a))).collect();
    let init_set: HashSet<GroundAtom> = problem.init.iter().map(named).collect();

    let mut fluent = vec![false; domain.predicates.len()];
    for schema in &domain.actions {
        for a in schema.add_effects.iter().chain(&schema.delete_effects) {
            fluent[a.predicate] = true;
        }
    }

    let mut candidates = Vec::new();
    for (si, schema) in domain.actions.iter().enumerate() {
        let domains: Vec<Vec<u32>> = schema
            .parameters
            .iter()
            .map(|(_, ty)| {
                objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| domain.types.is_subtype(&o.ty, ty))
                    .map(|(i, _)| i as u32)
                    .collect()
            })
            .collect();
        let mut binding = Vec::with_capacity(domains.len());
        enumerate_bindings(schema, &domains, &constant_ids, &fluent, &init_set, &mut binding, &mut |b| {
            let inst = |atoms: &[super::domain::LiftedAtom]| -> Vec<GroundAtom> {
                atoms.iter().map(|a| substitute(a, b, &constant_ids)).collect()
            };
            let add = inst(&schema.add_effects);
            let del = inst(&schema.delete_effects);
            if add.iter().any(|a| del.contains(a)) {
                return;
            }
            candidates.push((si, b.to_vec(), inst(&schema.preconditions), add, del));
        });
    }
    let mut candidates: Vec<Candidate> = candidates
        .into_iter()
        .map(|(schema, binding, pre, add, del)| Candidate {
            schema,
            binding,
            pre: dedup(pre.into_iter().map(&mut intern).collect()),
            add: dedup(add.into_iter().map(&mut intern).collect()),
            del: dedup(del.into_iter().map(&mut intern).collect()),
        })
        .collect();

    // Delete-relaxed reachability.
    let mut reached_atom = vec![false; table.len()];
    for &a in &init {
        reached_atom[a as usize] = true;
    }
    let mut reached_action = vec![false; candidates.len()];
    loop {
        let mut changed = false;
        for (ci, c) in candidates.iter().enumerate() {
            if !reached_action[ci] && c.pre.iter().all(|&p| reached_atom[p as usize]) {
                reached_action[ci] = true;
                changed = true;
                for &a in &c.add {
                    reached_atom[a as usize] = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut keep = reached_action.into_iter();
    candidates.retain(|_| keep.next().unwrap());

    let mut in_table = reached_atom;
    for &g in &goal {
        in_table[g as usize] = true;
    }
    for c in &candidates {
        for &d in &c.del {
            in_table[d as usize] = true;
        }
    }

    let render_atom = |a: &GroundAtom| {
        render(
            &domain.predicates[a.predicate].name,
            a.args.iter().map(|&o| objects[o as usize].name.as_str()),
        )
    };
    let mut kept: Vec<(String, u32)> = (0..table.len() as u32)
        .filter(|&i| in_table[i as usize])
        .map(|i| (render_atom(&table[i as usize]), i))
        .collect();
    kept.sort();
    let mut remap = vec![u32::MAX; table.len()];
    for (new, (_, old)) in kept.iter().enumerate() {
        remap[*old as usize] = new as AtomId;
    }
    let num_atoms = kept.len();
    let atoms: Vec<GroundAtom> = kept.iter().map(|(_, old)| table[*old as usize].clone()).collect();
    let atom_names: Vec<String> = kept.into_iter().map(|(n, _)| n).collect();
    let atom_index = atom_names.iter().enumerate().map(|(i, n)| (n.clone(), i as AtomId)).collect();

    let remap_all = |v: &[u32]| -> Vec<AtomId> {
        let mut out: Vec<AtomId> = v.iter().map(|&a| remap[a as usize]).collect();
        out.sort_unstable();
        out
    };
    let mut actions: Vec<GroundAction> = candidates
        .iter()
        .map(|c| GroundAction {
            schema: c.schema,
            name: render(
                &domain.actions[c.schema].name,
                c.binding.iter().map(|&o| objects[o as usize].name.as_str()),
            ),
            binding: c.binding.clone(),
            pre: remap_all(&c.pre),
            add: remap_all(&c.add),
            del: remap_all(&c.del),
        })
        .collect();
    actions.sort_by(|a, b| a.name.cmp(&b.name));
    let action_index = actions.iter().enumerate().map(|(i, a)| (a.name.clone(), i)).collect();

    let initial = SymbolicState::from_atoms(num_atoms, init.iter().map(|&a| remap[a as usize]));
    let mut goal: Vec<AtomId> = goal.iter().map(|&a| remap[a as usize]).collect();
    goal.sort_unstable();
    goal.dedup();

    Ok(GroundedTask {
        domain_name: domain.name.clone(),
        problem_name: problem.name.clone(),
        types: domain.types.clone(),
        objects,
        predicates: domain.predicates.clone(),
        schemas: domain.actions.clone(),
        atoms,
        actions,
        initial,
        goal,
        atom_names,
        atom_index,
        action_index,
    })
}

fn dedup(mut v: Vec<u32>) -> Vec<u32> {
    v.sort_unstable();
    v.dedup();
    v
}

fn substitute(atom: &super::domain::LiftedAtom, binding: &[u32], constants: &[u32]) -> GroundAtom {
    GroundAtom {
        predicate: atom.predicate,
        args: atom
            .args
            .iter()
            .map(|t| match *t {
                Term::Param(i) => binding[i],
                Term::Constant(c) => constants[c],
            })
            .collect(),
    }
}

/// Backtracking over parameter bindings. Static preconditions (predicates no
/// action changes) are checked against the initial state as soon as all of
/// their arguments are bound.
fn enumerate_bindings(
    schema: &ActionSchema,
    domains: &[Vec<u32>],
    constants: &[u32],
    fluent: &[bool],
    init: &HashSet<GroundAtom>,
    binding: &mut Vec<u32>,
    emit: &mut dyn FnMut(&[u32]),
) {
    let depth = binding.len();
    if depth == domains.len() {
        emit(binding);
        return;
    }
    for &obj in &domains[depth] {
        binding.push(obj);
        let ok = schema.preconditions.iter().all(|p| {
            if fluent[p.predicate] {
                return true;
            }
            let last_param = p
                .args
                .iter()
                .filter_map(|t| match t {
                    Term::Param(i) => Some(*i),
                    Term::Constant(_) => None,
                })
                .max();
            match last_param {
                Some(i) if i == depth => init.contains(&substitute(p, binding, constants)),
                None if depth == 0 => init.contains(&substitute(p, binding, constants)),
                _ => true,
            }
        });
        if ok {
            enumerate_bindings(schema, domains, constants, fluent, init, binding, emit);
        }
        binding.pop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::builtin;

    fn bw(n: usize, init: &str, goal: &str) -> GroundedTask {
        let objs: Vec<String> = (1..=n).map(|i| format!("b{i}")).collect();
        let problem = format!(
            "(define (problem p) (:domain blocksworld) (:objects {} - block) (:init {init}) (:goal (and {goal})))",
            objs.join(" ")
        );
        GroundedTask::from_texts(builtin::domain_text("blocksworld").unwrap(), &problem).unwrap()
    }

    fn all_on_table(n: usize) -> GroundedTask {
        let mut init = String::from("(handempty)");
        for i in 1..=n {
            init.push_str(&format!(" (ontable b{i}) (clear b{i})"));
        }
        bw(n, &init, "(on b2 b1)")
    }

    #[test]
    fn stack_count_is_n_times_n_minus_one() {
        for n in 2..=5 {
            let t = all_on_table(n);
            let stacks = t.actions.iter().filter(|a| a.name.starts_with("(stack ")).count();
            assert_eq!(stacks, n * (n - 1));
        }
        assert_eq!(all_on_table(3).actions.iter().filter(|a| a.name.starts_with("(stack ")).count(), 6);
    }

    #[test]
    fn pickup_semantics() {
        let t = bw(1, "(clear b1) (ontable b1) (handempty)", "(holding b1)");
        let a = &t.actions[t.action_id("(pick-up b1)").unwrap()];
        assert!(t.applicable(&t.initial, a));
        let next = t.apply(&t.initial, a).unwrap();
        assert_eq!(t.render_state(&next), "(holding b1)");
        assert_eq!(t.render_state(&t.initial), "(clear b1) (handempty) (ontable b1)");
    }

    #[test]
    fn pickup_inapplicable_when_holding_other() {
        let t = all_on_table(2);
        let s = t.state_from_names(["(holding b2)"]).unwrap();
        let a = &t.actions[t.action_id("(pick-up b1)").unwrap()];
        assert!(!t.applicable(&s, a));
        assert!(matches!(t.apply(&s, a), Err(PddlError::Inapplicable { .. })));
    }

    #[test]
    fn unstack_then_stack_restores_state() {
        let t = bw(2, "(on b1 b2) (ontable b2) (clear b1) (handempty)", "(on b2 b1)");
        let unstack = &t.actions[t.action_id("(unstack b1 b2)").unwrap()];
        let stack = &t.actions[t.action_id("(stack b1 b2)").unwrap()];
        let mid = t.apply(&t.initial, unstack).unwrap();
        assert_eq!(t.apply(&mid, stack).unwrap(), t.initial);
    }

    #[test]
    fn three_blocks_on_table_have_three_successors() {
        let t = all_on_table(3);
        let succ = t.successors(&t.initial);
        let names: Vec<&str> = succ.iter().map(|(a, _)| t.actions[*a].name.as_str()).collect();
        assert_eq!(names, vec!["(pick-up b1)", "(pick-up b2)", "(pick-up b3)"]);
    }

    #[test]
    fn goal_checks() {
        let t = all_on_table(3);
        assert!(!t.goal_satisfied(&t.initial));
        let mut empty_goal = t.clone();
        empty_goal.goal.clear();
        assert!(empty_goal.goal_satisfied(&SymbolicState::empty(t.num_atoms())));
    }

    #[test]
    fn empty_action_is_identity_and_always_applicable() {
        let domain = "(define (domain d) (:requirements :strips) (:predicates (p))
            (:action noop :parameters () :precondition () :effect ()))";
        let problem = "(define (problem q) (:domain d) (:init (p)) (:goal (p)))";
        let t = GroundedTask::from_texts(domain, problem).unwrap();
        let a = &t.actions[0];
        assert!(t.applicable(&SymbolicState::empty(t.num_atoms()), a));
        assert_eq!(t.apply(&t.initial, a).unwrap(), t.initial);
    }

    #[test]
    fn visitall_2x2_moves_follow_adjacency() {
        let problem = "(define (problem v) (:domain visitall)
            (:objects c00 c01 c10 c11 - place)
            (:init (at-robot c00) (visited c00)
                   (connected c00 c01) (connected c01 c00) (connected c00 c10) (connected c10 c00)
                   (connected c01 c11) (connected c11 c01) (connected c10 c11) (connected c11 c10))
            (:goal (and (visited c00) (visited c01) (visited c10) (visited c11))))";
        let t = GroundedTask::from_texts(builtin::domain_text("visitall").unwrap(), problem).unwrap();
        // 4 adjacent pairs, each traversable both ways.
        assert_eq!(t.actions.len(), 2 * 4);
    }

    #[test]
    fn missing_type_gives_empty_schema_grounding() {
        let problem = "(define (problem l) (:domain logistics)
            (:objects c1 - city l1 - location p1 - package)
            (:init (in-city l1 c1) (at p1 l1))
            (:goal (at p1 l1)))";
        let t = GroundedTask::from_texts(builtin::domain_text("logistics").unwrap(), problem).unwrap();
        assert!(t.actions.is_empty());
    }

    #[test]
    fn actions_and_atoms_are_canonically_ordered() {
        let t = all_on_table(4);
        assert!(t.actions.windows(2).all(|w| w[0].name < w[1].name));
        assert!((0..t.num_atoms() - 1).all(|i| t.atom_name(i as u32) < t.atom_name(i as u32 + 1)));
        for a in &t.actions {
            assert!(a.add.iter().all(|x| !a.del.contains(x)));
        }
    }

    #[test]
    fn dump_lists_atoms_then_actions() {
        let t = all_on_table(2);
        let dump = t.dump();
        assert!(dump.contains("\n(clear b1)\n"));
        assert!(dump.contains("(pick-up b1) pre: (clear b1) (handempty) (ontable b1) add: (holding b1) del:"));
    }
}
