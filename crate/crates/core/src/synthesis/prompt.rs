use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::dataio::{Gender, PersonMeta};

pub const HAIR_COLORS: [&str; 3] = ["blond", "brunette", "redhead"];
pub const HAIR_TYPES: [&str; 6] = ["straight", "wavy", "curly", "coily", "mullet", "afro"];
pub const SHOE_TYPES: [&str; 5] = ["oxford shoes", "boots", "sneakers", "sandals", "crocs"];

/// A region regenerated by one inpainting pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcessPart {
    Head,
    Hair,
    Body,
    Feet,
}

impl ProcessPart {
    /// Processing order within a person; each part sees the previous
    /// part's output.
    pub const ORDER: [ProcessPart; 4] = [
        ProcessPart::Head,
        ProcessPart::Hair,
        ProcessPart::Body,
        ProcessPart::Feet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessPart::Head => "head",
            ProcessPart::Hair => "hair",
            ProcessPart::Body => "body",
            ProcessPart::Feet => "feet",
        }
    }
}

impl fmt::Display for ProcessPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessPart {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        Self::ORDER
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| SynthError::UnknownPart(s.to_string()))
    }
}

fn gender_word(g: Gender) -> &'static str {
    match g {
        Gender::Female => "female",
        Gender::Male => "male",
        Gender::Neutral => "person",
    }
}

fn pick<'a>(pool: &[&'a str], rng: &mut impl Rng) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Instantiates the part's template. Hair color comes from metadata when
/// recorded; every other free attribute is drawn from `rng`.
pub fn build_prompt(part: ProcessPart, meta: &PersonMeta, rng: &mut impl Rng) -> String {
    let gender = gender_word(meta.gender);
    let race = meta.race.as_str();
    match part {
        ProcessPart::Head => format!("Realistic {race} {gender} face"),
        ProcessPart::Hair => {
            let color = match &meta.hair_color {
                Some(c) => c.clone(),
                None => pick(&HAIR_COLORS, rng).to_string(),
            };
            let kind = pick(&HAIR_TYPES, rng);
            format!("Realistic {color} {kind} {race} {gender}")
        }
        ProcessPart::Body => format!("Realistic {gender} clothes"),
        ProcessPart::Feet => format!("Realistic {gender} {}", pick(&SHOE_TYPES, rng)),
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Seed for one (frame, person, part): FNV-1a of
/// `"<global_seed>/<frame_id>/<person_id>/<part>"`.
pub fn part_seed(global_seed: u64, frame_id: &str, person_id: u32, part: ProcessPart) -> u64 {
    fnv1a64(format!("{global_seed}/{frame_id}/{person_id}/{part}").as_bytes())
}
