//! Synthetic corpus and multiple-choice items over a small world of animals
//! with fixed foods, colours and homes. Facts stay consistent across
//! documents, so a tiny model can learn them and answer questions.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::McItem;

const ANIMALS: [&str; 24] = [
    "cat", "dog", "fox", "owl", "bear", "wolf", "deer", "frog", "duck", "goat", "hare", "lynx",
    "mole", "newt", "seal", "swan", "toad", "wren", "yak", "crab", "moth", "bee", "eel", "ram",
];
const FOODS: [&str; 12] = [
    "fish", "seeds", "apples", "grass", "berries", "honey", "nuts", "worms", "corn", "leaves",
    "bread", "plums",
];
const COLOURS: [&str; 8] = ["red", "brown", "grey", "white", "black", "green", "gold", "blue"];
const PLACES: [&str; 10] = [
    "forest", "river", "barn", "meadow", "cave", "lake", "hill", "marsh", "field", "garden",
];
const TIMES: [&str; 4] = ["morning", "evening", "night", "noon"];

#[derive(Debug, Clone)]
pub struct World {
    pub food: Vec<usize>,
    pub colour: Vec<usize>,
    pub home: Vec<usize>,
    pub friend: Vec<usize>,
}

impl World {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = ANIMALS.len();
        let mut friend: Vec<usize> = (0..n).collect();
        friend.shuffle(&mut rng);
        for i in 0..n {
            if friend[i] == i {
                friend[i] = (i + 1) % n;
            }
        }
        World {
            food: (0..n).map(|_| rng.random_range(0..FOODS.len())).collect(),
            colour: (0..n).map(|_| rng.random_range(0..COLOURS.len())).collect(),
            home: (0..n).map(|_| rng.random_range(0..PLACES.len())).collect(),
            friend,
        }
    }

    fn sentence(&self, a: usize, rng: &mut ChaCha8Rng) -> String {
        let name = ANIMALS[a];
        match rng.random_range(0..7) {
            0 => format!("the {name} eats {} .", FOODS[self.food[a]]),
            1 => format!("the {name} is {} .", COLOURS[self.colour[a]]),
            2 => format!("the {name} lives in the {} .", PLACES[self.home[a]]),
            3 => format!("the {name} and the {} are friends .", ANIMALS[self.friend[a]]),
            4 => format!(
                "at {} the {name} goes to the {} .",
                TIMES.choose(rng).unwrap(),
                PLACES[self.home[a]]
            ),
            5 => format!(
                "the {} {name} finds {} near the {} .",
                COLOURS[self.colour[a]],
                FOODS[self.food[a]],
                PLACES[self.home[a]]
            ),
            _ => format!("the {name} visits the {} .", ANIMALS[self.friend[a]]),
        }
    }

    /// One passage of 3 to 8 sentences, mostly about one animal and its friend.
    pub fn passage(&self, rng: &mut ChaCha8Rng) -> String {
        let a = rng.random_range(0..ANIMALS.len());
        let n = rng.random_range(3..=8);
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let who = if rng.random_bool(0.7) { a } else { self.friend[a] };
            out.push(self.sentence(who, rng));
        }
        out.join(" ")
    }
}

fn stream_rng(seed: u64, stream: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(stream);
    rng
}

/// One passage per line until the text reaches `target_bytes`. Different
/// `stream`s give different text about the same world.
pub fn synth_corpus(seed: u64, stream: u64, target_bytes: usize) -> String {
    let world = World::new(seed);
    let mut rng = stream_rng(seed, stream, 0x5EED_C0DE);
    let mut out = String::with_capacity(target_bytes + 256);
    while out.len() < target_bytes {
        out.push_str(&world.passage(&mut rng));
        out.push('\n');
    }
    out
}

fn question(
    rng: &mut ChaCha8Rng,
    context: String,
    gold_word: &str,
    pool: &[&str],
    n_choices: usize,
) -> McItem {
    let mut choices: Vec<&str> = vec![gold_word];
    let mut others: Vec<&str> = pool.iter().copied().filter(|w| *w != gold_word).collect();
    others.shuffle(rng);
    choices.extend(others.into_iter().take(n_choices - 1));
    choices.shuffle(rng);
    let gold = choices.iter().position(|c| *c == gold_word).unwrap();
    McItem {
        context,
        choices: choices.into_iter().map(|c| format!("{c} .")).collect(),
        gold,
    }
}

/// Fact questions ("the cat eats" → food) with `n_choices` options each.
pub fn synth_mc_items(seed: u64, stream: u64, count: usize, n_choices: usize) -> Vec<McItem> {
    let world = World::new(seed);
    let mut rng = stream_rng(seed, stream, 0x0A11_CE5);
    let n_choices = n_choices.clamp(2, COLOURS.len());
    (0..count)
        .map(|_| {
            let a = rng.random_range(0..ANIMALS.len());
            let name = ANIMALS[a];
            match rng.random_range(0..3) {
                0 => question(&mut rng, format!("the {name} eats"), FOODS[world.food[a]], &FOODS, n_choices),
                1 => question(&mut rng, format!("the {name} is"), COLOURS[world.colour[a]], &COLOURS, n_choices),
                _ => question(
                    &mut rng,
                    format!("the {name} lives in the"),
                    PLACES[world.home[a]],
                    &PLACES,
                    n_choices,
                ),
            }
        })
        .collect()
}
