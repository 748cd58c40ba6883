use std::collections::{BTreeMap, HashMap};

use super::sexpr::{self, syntax, SExpr};
use super::PddlError;

pub const ROOT_TYPE: &str = "object";

const SUPPORTED_REQUIREMENTS: &[&str] = &[":strips", ":typing"];

/// Single-inheritance type tree rooted at `object`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TypeHierarchy {
    parent: BTreeMap<String, String>,
}

impl TypeHierarchy {
    pub fn contains(&self, ty: &str) -> bool {
        ty == ROOT_TYPE || self.parent.contains_key(ty)
    }

    /// True when `ty` equals `ancestor` or inherits from it.
    pub fn is_subtype(&self, ty: &str, ancestor: &str) -> bool {
        let mut cur = ty;
        loop {
            if cur == ancestor {
                return true;
            }
            match self.parent.get(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        std::iter::once(ROOT_TYPE).chain(self.parent.keys().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateSchema {
    pub name: String,
    pub parameter_types: Vec<String>,
}

impl PredicateSchema {
    pub fn arity(&self) -> usize {
        self.parameter_types.len()
    }
}

/// Argument of a lifted atom: an action parameter or a domain constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Term {
    Param(usize),
    Constant(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftedAtom {
    pub predicate: usize,
    pub args: Vec<Term>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSchema {
    pub name: String,
    /// Parameter names (without `?`) and their types.
    pub parameters: Vec<(String, String)>,
    pub preconditions: Vec<LiftedAtom>,
    pub add_effects: Vec<LiftedAtom>,
    pub delete_effects: Vec<LiftedAtom>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainDescription {
    pub name: String,
    pub types: TypeHierarchy,
    /// Domain constants with their types.
    pub constants: Vec<(String, String)>,
    pub predicates: Vec<PredicateSchema>,
    pub actions: Vec<ActionSchema>,
    predicate_index: HashMap<String, usize>,
}

impl DomainDescription {
    pub fn predicate(&self, name: &str) -> Option<usize> {
        self.predicate_index.get(name).copied()
    }
}

/// Parses a typed list such as `a b - t c` into `(name, type)` pairs.
pub(crate) fn typed_list(items: &[SExpr]) -> Result<Vec<(String, String)>, PddlError> {
    let mut out = Vec::new();
    let mut pending: Vec<String> = Vec::new();
    let mut i = 0;
    while i < items.len() {
        let sym = items[i]
            .as_symbol()
            .ok_or_else(|| syntax(items[i].pos(), "expected a name in typed list"))?;
        if sym == "-" {
            let ty = items.get(i + 1).ok_or_else(|| syntax(items[i].pos(), "missing type after '-'"))?;
            if ty.head() == Some("either") {
                return Err(PddlError::Unsupported("either types".into()));
            }
            let ty = ty
                .as_symbol()
                .ok_or_else(|| syntax(ty.pos(), "expected a type name"))?;
            if pending.is_empty() {
                return Err(syntax(items[i].pos(), "type annotation without names"));
            }
            out.extend(pending.drain(..).map(|n| (n, ty.to_string())));
            i += 2;
        } else {
            pending.push(sym.to_string());
            i += 1;
        }
    }
    out.extend(pending.into_iter().map(|n| (n, ROOT_TYPE.to_string())));
    Ok(out)
}

/// A conjunction of positive atoms, or a single atom, or `()`.
pub(crate) fn conjunction(expr: &SExpr) -> Result<Vec<&SExpr>, PddlError> {
    let items = expr
        .as_list()
        .ok_or_else(|| syntax(expr.pos(), "expected a list"))?;
    match expr.head() {
        None if items.is_empty() => Ok(Vec::new()),
        Some("and") => {
            let mut out = Vec::new();
            for item in &items[1..] {
                out.extend(conjunction(item)?);
            }
            Ok(out)
        }
        Some(kw @ ("or" | "not" | "imply" | "forall" | "exists" | "when" | "=")) => {
            Err(PddlError::Unsupported(format!("'{kw}' in a condition")))
        }
        Some(_) => Ok(vec![expr]),
        None => Err(syntax(expr.pos(), "expected an atom")),
    }
}

pub fn parse_domain(text: &str) -> Result<DomainDescription, PddlError> {
    let root = sexpr::parse(text)?;
    let items = root
        .as_list()
        .filter(|_| root.head() == Some("define"))
        .ok_or_else(|| syntax(root.pos(), "expected (define ...)"))?;
    let header = items
        .get(1)
        .filter(|h| h.head() == Some("domain"))
        .ok_or_else(|| syntax(root.pos(), "expected (domain <name>)"))?;
    let name = header
        .as_list()
        .and_then(|l| l.get(1))
        .and_then(SExpr::as_symbol)
        .ok_or_else(|| syntax(header.pos(), "missing domain name"))?
        .to_string();

    let mut domain = DomainDescription {
        name,
        types: TypeHierarchy::default(),
        constants: Vec::new(),
        predicates: Vec::new(),
        actions: Vec::new(),
        predicate_index: HashMap::new(),
    };
    let mut action_exprs = Vec::new();

    for section in &items[2..] {
        let body = section
            .as_list()
            .ok_or_else(|| syntax(section.pos(), "expected a section"))?;
        match section.head() {
            Some(":requirements") => {
                for req in &body[1..] {
                    let r = req
                        .as_symbol()
                        .ok_or_else(|| syntax(req.pos(), "expected a requirement keyword"))?;
                    if !SUPPORTED_REQUIREMENTS.contains(&r) {
                        return Err(PddlError::UnsupportedRequirement(r.to_string()));
                    }
                }
            }
            Some(":types") => {
                for (ty, parent) in typed_list(&body[1..])? {
                    if ty == ROOT_TYPE {
                        continue;
                    }
                    domain.types.parent.insert(ty, parent);
                }
            }
            Some(":constants") => domain.constants = typed_list(&body[1..])?,
            Some(":predicates") => {
                for p in &body[1..] {
                    let parts = p
                        .as_list()
                        .filter(|l| !l.is_empty())
                        .ok_or_else(|| syntax(p.pos(), "expected a predicate declaration"))?;
                    let pname = parts[0]
                        .as_symbol()
                        .ok_or_else(|| syntax(p.pos(), "expected a predicate name"))?;
                    let params = typed_list(&parts[1..])?;
                    if domain.predicate_index.contains_key(pname) {
                        return Err(syntax(p.pos(), format!("duplicate predicate '{pname}'")));
                    }
                    domain
                        .predicate_index
                        .insert(pname.to_string(), domain.predicates.len());
                    domain.predicates.push(PredicateSchema {
                        name: pname.to_string(),
                        parameter_types: params.into_iter().map(|(_, t)| t).collect(),
                    });
                }
            }
            Some(":action") => action_exprs.push(section),
            Some(other) => return Err(PddlError::Unsupported(format!("domain section '{other}'"))),
            None => return Err(syntax(section.pos(), "expected a section keyword")),
        }
    }

    // Every referenced type must be declared (implicitly declared parents are
    // allowed, as in the IPC files where `object` is the only implicit one).
    let mut referenced: Vec<&str> = domain.types.parent.values().map(String::as_str).collect();
    referenced.extend(domain.constants.iter().map(|(_, t)| t.as_str()));
    referenced.extend(domain.predicates.iter().flat_map(|p| p.parameter_types.iter().map(String::as_str)));
    for ty in referenced {
        if !domain.types.contains(ty) {
            return Err(PddlError::Undeclared { kind: "type", name: ty.to_string() });
        }
    }

    for expr in action_exprs {
        let action = parse_action(expr, &domain)?;
        domain.actions.push(action);
    }
    Ok(domain)
}

fn parse_action(expr: &SExpr, domain: &DomainDescription) -> Result<ActionSchema, PddlError> {
    let items = expr.as_list().expect("checked by caller");
    let name = items
        .get(1)
        .and_then(SExpr::as_symbol)
        .ok_or_else(|| syntax(expr.pos(), "missing action name"))?
        .to_string();
    let mut parameters = Vec::new();
    let mut precondition = None;
    let mut effect = None;
    let mut i = 2;
    while i < items.len() {
        let key = items[i]
            .as_symbol()
            .ok_or_else(|| syntax(items[i].pos(), "expected an action keyword"))?;
        let value = items
            .get(i + 1)
            .ok_or_else(|| syntax(items[i].pos(), format!("missing value for {key}")))?;
        match key {
            ":parameters" => {
                let list = value
                    .as_list()
                    .ok_or_else(|| syntax(value.pos(), "expected a parameter list"))?;
                for (p, t) in typed_list(list)? {
                    let p = p
                        .strip_prefix('?')
                        .ok_or_else(|| syntax(value.pos(), format!("parameter '{p}' must start with '?'")))?;
                    if !domain.types.contains(&t) {
                        return Err(PddlError::Undeclared { kind: "type", name: t });
                    }
                    parameters.push((p.to_string(), t));
                }
            }
            ":precondition" => precondition = Some(value),
            ":effect" => effect = Some(value),
            other => return Err(PddlError::Unsupported(format!("action keyword '{other}'"))),
        }
        i += 2;
    }

    let lift = |atom: &SExpr| -> Result<LiftedAtom, PddlError> { lift_atom(atom, &parameters, domain) };

    let preconditions = match precondition {
        Some(p) => conjunction(p)?.into_iter().map(lift).collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let mut add_effects = Vec::new();
    let mut delete_effects = Vec::new();
    if let Some(eff) = effect {
        for literal in effect_literals(eff)? {
            match literal {
                (true, atom) => add_effects.push(lift(atom)?),
                (false, atom) => delete_effects.push(lift(atom)?),
            }
        }
    }
    Ok(ActionSchema { name, parameters, preconditions, add_effects, delete_effects })
}

fn effect_literals(expr: &SExpr) -> Result<Vec<(bool, &SExpr)>, PddlError> {
    let items = expr
        .as_list()
        .ok_or_else(|| syntax(expr.pos(), "expected an effect"))?;
    match expr.head() {
        None if items.is_empty() => Ok(Vec::new()),
        Some("and") => {
            let mut out = Vec::new();
            for item in &items[1..] {
                out.extend(effect_literals(item)?);
            }
            Ok(out)
        }
        Some("not") => {
            let inner = items
                .get(1)
                .filter(|_| items.len() == 2)
                .ok_or_else(|| syntax(expr.pos(), "malformed (not ...)"))?;
            if matches!(inner.head(), Some("and" | "not" | "when" | "forall")) {
                return Err(PddlError::Unsupported("complex negated effect".into()));
            }
            Ok(vec![(false, inner)])
        }
        Some(kw @ ("when" | "forall" | "increase" | "decrease" | "assign")) => {
            Err(PddlError::Unsupported(format!("'{kw}' effect")))
        }
        Some(_) => Ok(vec![(true, expr)]),
        None => Err(syntax(expr.pos(), "expected an effect atom")),
    }
}

fn lift_atom(
    atom: &SExpr,
    parameters: &[(String, String)],
    domain: &DomainDescription,
) -> Result<LiftedAtom, PddlError> {
    let items = atom.as_list().ok_or_else(|| syntax(atom.pos(), "expected an atom"))?;
    let pname = atom.head().ok_or_else(|| syntax(atom.pos(), "expected a predicate name"))?;
    let predicate = domain
        .predicate(pname)
        .ok_or_else(|| PddlError::Undeclared { kind: "predicate", name: pname.to_string() })?;
    let schema = &domain.predicates[predicate];
    let args = &items[1..];
    if args.len() != schema.arity() {
        return Err(PddlError::ArityMismatch {
            predicate: pname.to_string(),
            expected: schema.arity(),
            found: args.len(),
        });
    }
    let mut terms = Vec::with_capacity(args.len());
    for (arg, expected_ty) in args.iter().zip(&schema.parameter_types) {
        let sym = arg.as_symbol().ok_or_else(|| syntax(arg.pos(), "expected a term"))?;
        let (term, ty) = if let Some(var) = sym.strip_prefix('?') {
            let idx = parameters
                .iter()
                .position(|(p, _)| p == var)
                .ok_or_else(|| PddlError::Undeclared { kind: "variable", name: sym.to_string() })?;
            (Term::Param(idx), parameters[idx].1.as_str())
        } else {
            let idx = domain
                .constants
                .iter()
                .position(|(c, _)| c == sym)
                .ok_or_else(|| PddlError::Undeclared { kind: "constant", name: sym.to_string() })?;
            (Term::Constant(idx), domain.constants[idx].1.as_str())
        };
        if !domain.types.is_subtype(ty, expected_ty) {
            return Err(PddlError::TypeMismatch {
                context: format!("({pname} ...)"),
                name: sym.to_string(),
                expected: expected_ty.clone(),
                found: ty.to_string(),
            });
        }
        terms.push(term);
    }
    Ok(LiftedAtom { predicate, args: terms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::builtin;

    #[test]
    fn ipc_domains_have_expected_action_counts() {
        let counts: Vec<usize> = ["blocksworld", "gripper", "logistics", "visitall"]
            .iter()
            .map(|d| parse_domain(builtin::domain_text(d).unwrap()).unwrap().actions.len())
            .collect();
        assert_eq!(counts, vec![4, 3, 6, 1]);
    }

    #[test]
    fn rejects_adl_requirement() {
        let text = "(define (domain d) (:requirements :strips :adl) (:predicates (p)))";
        match parse_domain(text) {
            Err(PddlError::UnsupportedRequirement(r)) => assert_eq!(r, ":adl"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_input_is_syntax_error() {
        assert!(matches!(parse_domain(""), Err(PddlError::Syntax { .. })));
    }

    #[test]
    fn negative_precondition_rejected() {
        let text = "(define (domain d) (:requirements :strips) (:predicates (p) (q))
            (:action a :parameters () :precondition (not (p)) :effect (q)))";
        assert!(matches!(parse_domain(text), Err(PddlError::Unsupported(_))));
    }

    #[test]
    fn type_hierarchy_of_logistics() {
        let d = parse_domain(builtin::domain_text("logistics").unwrap()).unwrap();
        assert!(d.types.is_subtype("truck", "vehicle"));
        assert!(d.types.is_subtype("truck", "physobj"));
        assert!(d.types.is_subtype("airport", "place"));
        assert!(!d.types.is_subtype("airport", "physobj"));
        let drive = d.actions.iter().find(|a| a.name == "drive-truck").unwrap();
        assert_eq!(drive.parameters.len(), 4);
        assert_eq!(drive.preconditions.len(), 3);
    }
}
