//! A diagnostic task that can only be solved through the relation channel: two
//! named nodes, one directed relation that appears only in the tuple set, and a
//! target that states the order implied by it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{DataSchema, Preset, Role, Segment, Tuple};

pub const DIRECTION_PREDICATES: [&str; 2] = ["precedes", "follows"];

pub const NAME_POOL: [&str; 40] = [
    "alba", "bruno", "carla", "dario", "elena", "fabio", "greta", "hugo", "ines", "jonas", "kira", "luca", "mira",
    "nico", "olga", "pablo", "quinn", "rosa", "sven", "tara", "ugo", "vera", "wim", "xena", "yuri", "zora", "arne",
    "bea", "cleo", "dina", "emil", "fay", "gil", "hana", "ivo", "jana", "kai", "lena", "milo", "nora",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExample {
    /// Two node segments and the target segment.
    pub schema: DataSchema,
    /// Index into [`DIRECTION_PREDICATES`].
    pub relation: usize,
    pub first: String,
    pub second: String,
}

/// `n` examples. The tuple `(X, rel, Y)` links segment X to segment Y; the target
/// reads `A precedes B` with `A = X` for `precedes` and `A = Y` for `follows`.
pub fn make_synthetic_direction_dataset(n: usize, seed: u64) -> Vec<SyntheticExample> {
    let predicates: Vec<String> = DIRECTION_PREDICATES.iter().map(|p| p.to_string()).collect();
    let preset = Preset::generic(&predicates).expect("distinct predicates");
    let node = preset.segment_type("node").expect("generic preset has nodes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..NAME_POOL.len());
            let mut b = rng.random_range(0..NAME_POOL.len() - 1);
            if b >= a {
                b += 1;
            }
            let (x, y) = (NAME_POOL[a], NAME_POOL[b]);
            let relation = usize::from(rng.random_bool(0.5));
            let (first, second) = if relation == 0 { (x, y) } else { (y, x) };
            let x_first = rng.random_bool(0.5);
            let (xi, yi) = if x_first { (0, 1) } else { (1, 0) };
            let mut names = [""; 2];
            names[xi] = x;
            names[yi] = y;
            let segments = vec![
                Segment::new(names[0], node, Role::Source),
                Segment::new(names[1], node, Role::Source),
                Segment::new(&format!("{first} precedes {second}"), preset.target_type(), Role::Target),
            ];
            let predicate = preset.relation_set().predicate_id(DIRECTION_PREDICATES[relation]).expect("declared");
            let tuples = vec![Tuple { head: xi, predicate, tail: yi }];
            let schema = DataSchema::new(segments, preset.clone(), tuples, vec![]).expect("valid by construction");
            SyntheticExample { schema, relation, first: first.to_string(), second: second.to_string() }
        })
        .collect()
}
