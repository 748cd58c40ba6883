use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::HarnessError;

/// Seeded problem generator for one of the bundled domains. The size
/// parameter counts blocks, balls, goal packages or grid cells.
#[derive(Debug, Clone)]
pub struct InstanceGenerator {
    pub domain: String,
    pub seed: u64,
}

impl InstanceGenerator {
    pub fn new(domain: &str, seed: u64) -> Result<Self, HarnessError> {
        if !crate::pddl::builtin::DOMAINS.contains(&domain) {
            return Err(HarnessError::UnsupportedDomain(domain.to_string()));
        }
        Ok(Self { domain: domain.to_string(), seed })
    }

    /// Problem text for instance `index` of the given size. The same
    /// generator seed, size and index always produce the same text.
    pub fn generate(&self, name: &str, size: usize, index: u64) -> String {
        let stream = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (size as u64) << 32 ^ index;
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        match self.domain.as_str() {
            "blocksworld" => blocksworld(name, size, &mut rng),
            "gripper" => gripper(name, size),
            "logistics" => logistics(name, size, &mut rng),
            "visitall" => visitall(name, size, &mut rng),
            _ => unreachable!("checked in new"),
        }
    }
}

fn render(name: &str, domain: &str, objects: &str, init: &[String], goal: &[String]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(define (problem {name})");
    let _ = writeln!(out, "  (:domain {domain})");
    let _ = writeln!(out, "  (:objects {objects})");
    let _ = writeln!(out, "  (:init");
    for a in init {
        let _ = writeln!(out, "    {a}");
    }
    let _ = writeln!(out, "  )");
    let _ = writeln!(out, "  (:goal (and");
    for a in goal {
        let _ = writeln!(out, "    {a}");
    }
    let _ = writeln!(out, "  )))");
    out
}

/// Random stacking: each block in shuffled order starts a new tower or goes
/// on top of a uniformly chosen existing tower.
fn random_towers(n: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut towers: Vec<Vec<usize>> = Vec::new();
    for b in order {
        let pick = rng.gen_range(0..=towers.len());
        if pick == towers.len() {
            towers.push(vec![b]);
        } else {
            towers[pick].push(b);
        }
    }
    towers
}

fn tower_atoms(towers: &[Vec<usize>], names: &[String]) -> (Vec<String>, Vec<String>) {
    let mut on = Vec::new();
    let mut rest = Vec::new();
    for t in towers {
        rest.push(format!("(ontable {})", names[t[0]]));
        for w in t.windows(2) {
            on.push(format!("(on {} {})", names[w[1]], names[w[0]]));
        }
        rest.push(format!("(clear {})", names[*t.last().unwrap()]));
    }
    (on, rest)
}

fn blocksworld(name: &str, n: usize, rng: &mut impl Rng) -> String {
    let names: Vec<String> = (1..=n).map(|i| format!("b{i:02}")).collect();
    let start = random_towers(n, rng);
    let (mut init, rest) = tower_atoms(&start, &names);
    init.extend(rest);
    init.push("(handempty)".to_string());
    let mut goal = Vec::new();
    for _ in 0..1000 {
        let (on, _) = tower_atoms(&random_towers(n, rng), &names);
        if !on.is_empty() && !on.iter().all(|a| init.contains(a)) {
            goal = on;
            break;
        }
    }
    if goal.is_empty() {
        // a single block: ask for it on the table, already true
        goal = vec![format!("(ontable {})", names[0])];
    }
    init.sort();
    goal.sort();
    render(name, "blocksworld", &format!("{} - block", names.join(" ")), &init, &goal)
}

fn gripper(name: &str, n: usize) -> String {
    let balls: Vec<String> = (1..=n).map(|i| format!("ball{i:02}")).collect();
    let objects = format!("robby - robot rooma roomb - room left right - gripper {} - ball", balls.join(" "));
    let mut init = vec![
        "(at-robby robby rooma)".to_string(),
        "(free robby left)".to_string(),
        "(free robby right)".to_string(),
    ];
    init.extend(balls.iter().map(|b| format!("(at {b} rooma)")));
    let goal: Vec<String> = balls.iter().map(|b| format!("(at {b} roomb)")).collect();
    render(name, "gripper", &objects, &init, &goal)
}

fn logistics(name: &str, packages: usize, rng: &mut impl Rng) -> String {
    let cities = 2 + packages.saturating_sub(1) / 4;
    let planes = 1 + packages / 8;
    let mut objects = String::new();
    let mut init = Vec::new();
    let mut places = Vec::new();
    let mut airports = Vec::new();
    let city_names: Vec<String> = (1..=cities).map(|c| format!("city{c}")).collect();
    let _ = write!(objects, "{} - city ", city_names.join(" "));
    for c in 1..=cities {
        let apt = format!("apt{c}");
        let loc = format!("loc{c}");
        init.push(format!("(in-city {apt} city{c})"));
        init.push(format!("(in-city {loc} city{c})"));
        let truck_at = if rng.gen_bool(0.5) { &apt } else { &loc };
        init.push(format!("(at truck{c} {truck_at})"));
        places.push(apt.clone());
        places.push(loc);
        airports.push(apt);
    }
    let _ = write!(objects, "{} - airport ", airports.join(" "));
    let locs: Vec<String> = (1..=cities).map(|c| format!("loc{c}")).collect();
    let _ = write!(objects, "{} - location ", locs.join(" "));
    let trucks: Vec<String> = (1..=cities).map(|c| format!("truck{c}")).collect();
    let _ = write!(objects, "{} - truck ", trucks.join(" "));
    let plane_names: Vec<String> = (1..=planes).map(|p| format!("plane{p}")).collect();
    for p in &plane_names {
        init.push(format!("(at {p} {})", airports.choose(rng).unwrap()));
    }
    let _ = write!(objects, "{} - airplane ", plane_names.join(" "));
    let pkgs: Vec<String> = (1..=packages).map(|p| format!("pkg{p:02}")).collect();
    let _ = write!(objects, "{} - package", pkgs.join(" "));
    let mut goal = Vec::new();
    for p in &pkgs {
        let from = places.choose(rng).unwrap();
        let to = loop {
            let to = places.choose(rng).unwrap();
            if to != from {
                break to;
            }
        };
        init.push(format!("(at {p} {from})"));
        goal.push(format!("(at {p} {to})"));
    }
    init.sort();
    render(name, "logistics", &objects, &init, &goal)
}

/// Near-square grid holding the first `cells` cells in row-major order. The
/// width is the ceiling square root or one more; the robot starts on a
/// random cell.
fn visitall(name: &str, cells: usize, rng: &mut impl Rng) -> String {
    let cells = cells.max(1);
    let base = (cells as f64).sqrt().ceil() as usize;
    let width = if base < cells && rng.gen_bool(0.5) { base + 1 } else { base };
    let cell = |i: usize| format!("c{:02}-{:02}", i / width, i % width);
    let names: Vec<String> = (0..cells).map(cell).collect();
    let start = rng.gen_range(0..cells);
    let mut init = vec![format!("(at-robot {})", names[start]), format!("(visited {})", names[start])];
    for i in 0..cells {
        let (r, c) = (i / width, i % width);
        let mut adj = Vec::new();
        if c + 1 < width && i + 1 < cells {
            adj.push(i + 1);
        }
        if c > 0 {
            adj.push(i - 1);
        }
        if i + width < cells {
            adj.push(i + width);
        }
        if r > 0 {
            adj.push(i - width);
        }
        for j in adj {
            init.push(format!("(connected {} {})", names[i], names[j]));
        }
    }
    init.sort();
    let goal: Vec<String> = names.iter().map(|n| format!("(visited {n})")).collect();
    render(name, "visitall", &format!("{} - place", names.join(" ")), &init, &goal)
}
