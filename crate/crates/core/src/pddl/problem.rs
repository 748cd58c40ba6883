use std::collections::HashMap;

use super::domain::{conjunction, typed_list, DomainDescription};
use super::sexpr::{self, syntax, SExpr};
use super::PddlError;

/// A ground atom by names, as written in a problem file.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NamedAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl std::fmt::Display for NamedAtom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProblemDescription {
    pub name: String,
    pub domain_name: String,
    /// Problem objects followed by domain constants, each with its type.
    pub objects: Vec<(String, String)>,
    pub init: Vec<NamedAtom>,
    pub goal: Vec<NamedAtom>,
}

impl ProblemDescription {
    pub fn object_count(&self) -> usize {
        self.objects.len()
    }
}

pub fn parse_problem(text: &str, domain: &DomainDescription) -> Result<ProblemDescription, PddlError> {
    let root = sexpr::parse(text)?;
    let items = root
        .as_list()
        .filter(|_| root.head() == Some("define"))
        .ok_or_else(|| syntax(root.pos(), "expected (define ...)"))?;
    let name = items
        .get(1)
        .filter(|h| h.head() == Some("problem"))
        .and_then(|h| h.as_list().and_then(|l| l.get(1)).and_then(SExpr::as_symbol))
        .ok_or_else(|| syntax(root.pos(), "expected (problem <name>)"))?
        .to_string();

    let mut domain_name = None;
    let mut objects: Vec<(String, String)> = Vec::new();
    let mut init_expr = None;
    let mut goal_expr = None;
    for section in &items[2..] {
        let body = section
            .as_list()
            .ok_or_else(|| syntax(section.pos(), "expected a section"))?;
        match section.head() {
            Some(":domain") => {
                domain_name = body.get(1).and_then(SExpr::as_symbol).map(str::to_string);
            }
            Some(":requirements") => {}
            Some(":objects") => objects = typed_list(&body[1..])?,
            Some(":init") => init_expr = Some(&body[1..]),
            Some(":goal") => {
                goal_expr = Some(
                    body.get(1)
                        .ok_or_else(|| syntax(section.pos(), "empty goal"))?,
                )
            }
            Some(other) => return Err(PddlError::Unsupported(format!("problem section '{other}'"))),
            None => return Err(syntax(section.pos(), "expected a section keyword")),
        }
    }
    let domain_name = domain_name.ok_or_else(|| syntax(root.pos(), "missing (:domain ...)"))?;
    if domain_name != domain.name {
        return Err(PddlError::DomainMismatch { expected: domain.name.clone(), found: domain_name });
    }

    for (obj, ty) in &objects {
        if !domain.types.contains(ty) {
            return Err(PddlError::Undeclared { kind: "type", name: ty.clone() });
        }
        if domain.constants.iter().any(|(c, _)| c == obj) {
            return Err(syntax(root.pos(), format!("object '{obj}' shadows a domain constant")));
        }
    }
    objects.extend(domain.constants.iter().cloned());
    let mut seen = HashMap::new();
    for (obj, ty) in &objects {
        if seen.insert(obj.as_str(), ty.as_str()).is_some() {
            return Err(syntax(root.pos(), format!("duplicate object '{obj}'")));
        }
    }

    let ground = |expr: &SExpr| named_atom(expr, domain, &seen);
    let init = init_expr
        .unwrap_or(&[])
        .iter()
        .map(|e| {
            if e.head() == Some("=") || e.head() == Some("not") {
                return Err(PddlError::Unsupported(format!("'{}' in :init", e.head().unwrap())));
            }
            ground(e)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let goal = match goal_expr {
        Some(g) => conjunction(g)?.into_iter().map(ground).collect::<Result<Vec<_>, _>>()?,
        None => return Err(syntax(root.pos(), "missing (:goal ...)")),
    };

    Ok(ProblemDescription { name, domain_name: domain.name.clone(), objects, init, goal })
}

fn named_atom(
    expr: &SExpr,
    domain: &DomainDescription,
    objects: &HashMap<&str, &str>,
) -> Result<NamedAtom, PddlError> {
    let items = expr.as_list().ok_or_else(|| syntax(expr.pos(), "expected an atom"))?;
    let pname = expr.head().ok_or_else(|| syntax(expr.pos(), "expected a predicate name"))?;
    let pred = domain
        .predicate(pname)
        .map(|i| &domain.predicates[i])
        .ok_or_else(|| PddlError::Undeclared { kind: "predicate", name: pname.to_string() })?;
    let args = &items[1..];
    if args.len() != pred.arity() {
        return Err(PddlError::ArityMismatch {
            predicate: pname.to_string(),
            expected: pred.arity(),
            found: args.len(),
        });
    }
    let mut names = Vec::with_capacity(args.len());
    for (arg, expected) in args.iter().zip(&pred.parameter_types) {
        let obj = arg.as_symbol().ok_or_else(|| syntax(arg.pos(), "expected an object name"))?;
        let ty = objects
            .get(obj)
            .ok_or_else(|| PddlError::Undeclared { kind: "object", name: obj.to_string() })?;
        if !domain.types.is_subtype(ty, expected) {
            return Err(PddlError::TypeMismatch {
                context: format!("({pname} ...)"),
                name: obj.to_string(),
                expected: expected.clone(),
                found: ty.to_string(),
            });
        }
        names.push(obj.to_string());
    }
    Ok(NamedAtom { predicate: pname.to_string(), args: names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pddl::{builtin, parse_domain};

    fn bw() -> DomainDescription {
        parse_domain(builtin::domain_text("blocksworld").unwrap()).unwrap()
    }

    const FOUR_BLOCKS: &str = "(define (problem bw4) (:domain blocksworld)
        (:objects b1 b2 b3 b4 - block)
        (:init (handempty) (ontable b1) (ontable b2) (ontable b3) (ontable b4)
               (clear b1) (clear b2) (clear b3) (clear b4))
        (:goal (on b2 b1)))";

    #[test]
    fn four_block_problem() {
        let p = parse_problem(FOUR_BLOCKS, &bw()).unwrap();
        assert_eq!(p.object_count(), 4);
        assert_eq!(p.goal, vec![NamedAtom { predicate: "on".into(), args: vec!["b2".into(), "b1".into()] }]);
        assert_eq!(p.init.len(), 9);
    }

    #[test]
    fn undeclared_goal_object() {
        let text = FOUR_BLOCKS.replace("(on b2 b1)", "(on b9 b1)");
        match parse_problem(&text, &bw()) {
            Err(PddlError::Undeclared { kind: "object", name }) => assert_eq!(name, "b9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arity_mismatch() {
        let text = FOUR_BLOCKS.replace("(on b2 b1)", "(on b2)");
        assert!(matches!(parse_problem(&text, &bw()), Err(PddlError::ArityMismatch { .. })));
    }

    #[test]
    fn gripper_object_count_includes_robot() {
        let d = parse_domain(builtin::domain_text("gripper").unwrap()).unwrap();
        let text = "(define (problem g2) (:domain gripper)
            (:objects robby - robot rooma roomb - room ball1 ball2 - ball left right - gripper)
            (:init (at-robby robby rooma) (free robby left) (free robby right)
                   (at ball1 rooma) (at ball2 rooma))
            (:goal (and (at ball1 roomb) (at ball2 roomb))))";
        let p = parse_problem(text, &d).unwrap();
        assert_eq!(p.object_count(), 7);
    }

    #[test]
    fn type_violation() {
        let d = parse_domain(builtin::domain_text("gripper").unwrap()).unwrap();
        let text = "(define (problem g) (:domain gripper)
            (:objects robby - robot rooma - room ball1 - ball)
            (:init (at rooma ball1)) (:goal (at ball1 rooma)))";
        assert!(matches!(parse_problem(text, &d), Err(PddlError::TypeMismatch { .. })));
    }
}
