use std::collections::HashMap;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stategp::decoder::{decode, embed_plan, DecodeConfig};
use stategp::encoders::{build_ilg, embed_wl, Encoder, WlVocabulary};
use stategp::harness::{compute_coverage, Coverage, InstanceGenerator};
use stategp::models::{EmbeddedTrajectory, OracleDeltaModel, RecurrentConfig, RecurrentModel, TargetMode};
use stategp::pddl::{builtin, GroundedTask, SymbolicState};
use stategp::search::{solve, Plan, SearchConfig, Strategy as Search};
use stategp::trajectory::{read_trajectory, reconstruct, validate, write_trajectory, Trajectory, Validation};

fn instance(domain: usize, size: usize, seed: u64) -> (GroundedTask, String) {
    let name = builtin::DOMAINS[domain];
    let text = InstanceGenerator::new(name, seed).unwrap().generate("p", size, 0);
    (GroundedTask::from_texts(builtin::domain_text(name).unwrap(), &text).unwrap(), text)
}

/// Replaces whole object-name tokens.
fn rename(text: &str, map: &HashMap<String, String>) -> String {
    let mut out = String::new();
    let mut token = String::new();
    for ch in text.chars().chain(std::iter::once(' ')) {
        if ch.is_alphanumeric() || ch == '-' || ch == '_' {
            token.push(ch);
        } else {
            out.push_str(map.get(&token).unwrap_or(&token));
            token.clear();
            out.push(ch);
        }
    }
    out.pop();
    out
}

fn random_walk(task: &GroundedTask, steps: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = task.initial.clone();
    let mut ids = Vec::new();
    for _ in 0..steps {
        let succ = task.successors(&s);
        if succ.is_empty() {
            break;
        }
        let (a, next) = succ[rng.gen_range(0..succ.len())].clone();
        ids.push(a);
        s = next;
    }
    ids
}

fn final_state(task: &GroundedTask, ids: &[usize]) -> SymbolicState {
    ids.iter().fold(task.initial.clone(), |s, &a| task.apply(&s, &task.actions[a]).unwrap())
}

fn instances() -> impl Strategy<Value = (usize, usize, u64)> {
    (0..4usize, 2..6usize, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn apply_is_pure_and_respects_the_frame((d, n, seed) in instances(), steps in 0..20usize) {
        let (task, _) = instance(d, n, seed);
        let s = final_state(&task, &random_walk(&task, steps, seed));
        let before = s.clone();
        for (a, next) in task.successors(&s) {
            let action = &task.actions[a];
            let again = task.apply(&s, action).unwrap();
            prop_assert_eq!(&again, &next);
            for atom in 0..task.num_atoms() as u32 {
                if !action.add.contains(&atom) && !action.del.contains(&atom) {
                    prop_assert_eq!(s.contains(atom), next.contains(atom));
                }
            }
            for &x in &action.add {
                prop_assert!(next.contains(x));
            }
        }
        prop_assert_eq!(s, before);
    }

    #[test]
    fn reconstruction_is_the_apply_fold((d, n, seed) in instances()) {
        let (task, _) = instance(d, n, seed);
        let plan = solve(&task, &SearchConfig::single(Search::GbfsHadd)).unwrap();
        let traj = reconstruct(&task, &plan).unwrap();
        let mut s = task.initial.clone();
        prop_assert_eq!(&traj.states[0], &s);
        for (t, name) in plan.actions.iter().enumerate() {
            let a = task.action_id(name).unwrap();
            s = task.apply(&s, &task.actions[a]).unwrap();
            prop_assert_eq!(&traj.states[t + 1], &s);
        }
    }

    #[test]
    fn trajectory_files_round_trip((d, n, seed) in instances(), steps in 0..25usize) {
        let (task, _) = instance(d, n, seed);
        let ids = random_walk(&task, steps, seed ^ 1);
        let states = (0..=ids.len()).map(|t| final_state(&task, &ids[..t])).collect();
        let traj = Trajectory {
            domain_id: task.domain_name.clone(),
            problem_id: task.problem_name.clone(),
            states,
            plan: Plan::from_action_ids(&task, &ids),
            goal: task.goal.clone(),
        };
        let text = write_trajectory(&task, &traj);
        let back = read_trajectory(&text, &task).unwrap();
        prop_assert_eq!(&back.states, &traj.states);
        prop_assert_eq!(write_trajectory(&task, &back), text);
    }

    #[test]
    fn validation_agrees_with_goal_satisfaction((d, n, seed) in instances(), steps in 0..25usize) {
        let (task, _) = instance(d, n, seed);
        let ids = random_walk(&task, steps, seed ^ 2);
        let plan = Plan::from_action_ids(&task, &ids);
        let reached = task.goal_satisfied(&final_state(&task, &ids));
        match validate(&task, &plan) {
            Validation::Valid => prop_assert!(reached),
            Validation::Invalid(e) => {
                prop_assert!(!reached);
                prop_assert_eq!(e.step, ids.len());
            }
        }
    }

    #[test]
    fn wl_embeddings_ignore_object_names((d, n, seed) in instances(), steps in 0..10usize, perm in any::<u64>()) {
        let (task, text) = instance(d, n, seed);
        let s = final_state(&task, &random_walk(&task, steps, seed));
        let mut vocab = WlVocabulary::new(2);
        vocab.collect(&build_ilg(&task.initial, &task.goal, &task)).unwrap();
        vocab.freeze();
        let mut rng = ChaCha8Rng::seed_from_u64(perm);
        let mut fresh: Vec<usize> = (0..task.objects.len()).collect();
        for i in (1..fresh.len()).rev() {
            fresh.swap(i, rng.gen_range(0..=i));
        }
        let map: HashMap<String, String> =
            task.objects.iter().zip(&fresh).map(|(o, &i)| (o.name.clone(), format!("x{i}"))).collect();
        let rename = |t: &str| rename(t, &map);
        let renamed = GroundedTask::from_texts(builtin::domain_text(builtin::DOMAINS[d]).unwrap(), &rename(&text)).unwrap();
        let names: Vec<String> = s.iter().map(|a| rename(task.atom_name(a))).collect();
        let s2 = renamed.state_from_names(names.iter().map(String::as_str)).unwrap();
        let a = embed_wl(&s, &task.goal, &task, &vocab).unwrap();
        let b = embed_wl(&s2, &renamed.goal, &renamed, &vocab).unwrap();
        prop_assert_eq!(a.values.len(), vocab.len() + 1);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn oracle_decoding_stays_within_the_step_bound((d, n, seed) in instances(), max_steps in 0..30usize, width in 1..4usize) {
        let (task, _) = instance(d, n, seed);
        let plan = solve(&task, &SearchConfig::single(Search::GbfsHadd)).unwrap();
        let traj = reconstruct(&task, &plan).unwrap();
        let vocab = stategp::encoders::collect_vocabulary([(&task, &traj)], 2);
        let encoder = Encoder::Wl { vocab, normalize: false };
        let expert = embed_plan(&task, &plan, &encoder).unwrap();
        let oracle = OracleDeltaModel::new(&expert);
        let config = DecodeConfig { beam_width: width, max_steps, ..DecodeConfig::default() };
        let r = decode(&task, &oracle, &encoder, &config).unwrap();
        prop_assert!(r.visited <= max_steps);
        prop_assert_eq!(r.succeeded(), validate(&task, &r.plan).is_valid());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn search_is_deterministic_and_plans_revalidate((d, n, seed) in instances()) {
        let (task, _) = instance(d, n, seed);
        for search in [Search::AstarHmax, Search::GbfsHadd] {
            let config = SearchConfig::single(search);
            let a = solve(&task, &config).unwrap();
            let b = solve(&task, &config).unwrap();
            prop_assert_eq!(&a.actions, &b.actions);
            prop_assert!(validate(&task, &a).is_valid());
        }
    }

    #[test]
    fn recurrent_outputs_have_the_embedding_width(len in 1..50usize, width in 1..12usize, seed in any::<u64>()) {
        let cfg = RecurrentConfig { hidden: 8, embed: 4, seed, ..Default::default() };
        let m = RecurrentModel::new(TargetMode::Delta, width, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seq = EmbeddedTrajectory {
            states: (0..=len).map(|_| (0..width).map(|_| rng.gen_range(0.0..3.0)).collect()).collect(),
            goal: vec![1.0; width],
        };
        let out = m.sequence_outputs(&seq);
        prop_assert_eq!(out.len(), len);
        prop_assert!(out.iter().all(|o| o.len() == width));
    }

    #[test]
    fn coverage_is_a_rate_with_bounded_spread(runs in prop::collection::vec(prop::collection::vec(any::<bool>(), 1..8), 1..5)) {
        let n = runs[0].len();
        let runs: Vec<Vec<bool>> = runs.into_iter().map(|mut r| { r.resize(n, false); r }).collect();
        let seeds: Vec<u64> = (0..runs.len() as u64).collect();
        match compute_coverage(&runs, &seeds).unwrap() {
            Coverage::Rate { mean, std } => {
                prop_assert!((0.0..=1.0).contains(&mean));
                prop_assert!((0.0..=0.5).contains(&std));
            }
            Coverage::NoInstances => prop_assert!(false),
        }
    }
}
