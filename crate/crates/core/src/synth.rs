//! Seeded generator of a two-source provider study with known truth.
//!
//! The left file looks like a billing extract (upper case, abbreviated
//! street types); the right file looks like a survey (mixed case, spelled
//! out, some facilities listed under two names). Names are built from
//! unique (place, qualifier) combinations and addresses from unique
//! (number, street) combinations, so unrelated entities never reach the
//! approximate-match threshold against each other.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::hits::{Decision, Hit, HitKind, HitResolution};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub pairs: usize,
    pub wrong_zip_rate: f64,
    pub multi_name_rate: f64,
    pub approx_name_rate: f64,
    pub distractors: usize,
    /// Distractors that copy a true left's name and zip.
    pub confounders: usize,
    /// True pairs whose name and address both changed; only a reviewer
    /// can link them.
    pub renamed: usize,
    /// Left entities with no counterpart on the right.
    pub left_only: usize,
    pub zip_pool: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 20_170_401,
            pairs: 500,
            wrong_zip_rate: 0.05,
            multi_name_rate: 0.10,
            approx_name_rate: 0.15,
            distractors: 20,
            confounders: 8,
            renamed: 5,
            left_only: 3,
            zip_pool: 250,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SynthRow {
    pub id: String,
    pub name: String,
    pub address: String,
    pub zip: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticStudy {
    pub left: Vec<SynthRow>,
    pub right: Vec<SynthRow>,
    /// True (left id, right id) links.
    pub truth: BTreeSet<(String, String)>,
    /// True links whose right record carries a wrong zip.
    pub wrong_zip: BTreeSet<(String, String)>,
    pub renamed: BTreeSet<(String, String)>,
    pub confounder_ids: BTreeSet<String>,
    pub left_only: BTreeSet<String>,
}

const PLACES: &[&str] = &[
    "Abilene", "Alvin", "Amarillo", "Andrews", "Arlington", "Athens", "Austin", "Baytown", "Beaumont",
    "Beeville", "Bellaire", "Borger", "Bowie", "Brenham", "Brownsville", "Brownwood", "Bryan", "Burnet",
    "Caldwell", "Cameron", "Canyon", "Carthage", "Childress", "Cleburne", "Clifton", "Coleman", "Conroe",
    "Corsicana", "Crockett", "Cuero", "Dalhart", "Decatur", "Denison", "Denton", "Dumas", "Eastland",
    "Edinburg", "Ennis", "Falfurrias", "Floresville", "Fredericksburg", "Gainesville", "Galveston",
    "Gatesville", "Gonzales", "Graham", "Granbury", "Greenville", "Hallettsville", "Hamilton", "Harlingen",
    "Henderson", "Hereford", "Hillsboro", "Hondo", "Huntsville", "Jacksonville", "Jasper", "Katy", "Kenedy",
    "Kerrville", "Kilgore", "Killeen", "Kingsville", "Lamesa", "Lampasas", "Laredo", "Levelland",
    "Littlefield", "Livingston", "Llano", "Lockhart", "Longview", "Lubbock", "Lufkin", "Madisonville",
    "Marlin", "Marshall", "McAllen", "McKinney", "Mexia", "Midland", "Mineola", "Monahans", "Muleshoe",
    "Nacogdoches", "Navasota", "Odessa", "Olney", "Palestine", "Pampa", "Paris", "Pearsall", "Pecos",
    "Plainview", "Pleasanton", "Quanah", "Refugio", "Rockdale", "Rusk", "Seguin", "Seminole", "Seymour",
    "Shamrock", "Sherman", "Silsbee", "Snyder", "Sonora", "Stamford", "Stephenville", "Sweetwater", "Taylor",
    "Temple", "Terrell", "Texarkana", "Tomball", "Tyler", "Uvalde", "Vernon", "Victoria", "Waco",
    "Waxahachie", "Weatherford", "Wharton", "Winnie", "Yoakum",
];

const QUALIFIERS: &[&str] = &[
    "Heights", "Northwest", "Southeast", "Valley", "Lakes", "Bayshore", "Pinecrest", "Westside", "Parkview",
    "Riverside", "Crossroads", "Highlands", "Prairie", "Summit", "Meadows", "Hillcrest", "Lakeview", "Oakwood",
];

/// Facility-type suffixes. They all standardize away, in both spellings.
const TYPES_LEFT: &[&str] = &["HOSPITAL", "MEDICAL CENTER", "MED CTR", "REGIONAL HOSP", "MEMORIAL HOSPITAL", "HOSP"];
const TYPES_RIGHT: &[&str] = &[
    "Hospital",
    "Medical Center",
    "Regional Medical Center",
    "Memorial Hospital",
    "Health System",
    "Hospital Inc",
    "Medical Ctr",
];
/// Extra brand word that makes a right name an approximate match.
const BRANDS: &[&str] = &["Methodist", "Baptist", "Christus", "Adventist", "Presbyterian", "Covenant", "Mission"];

const STREET_WORDS: &[&str] = &[
    "Cedar", "Elm", "Pine", "Maple", "Willow", "Magnolia", "Pecan", "Mesquite", "Cypress", "Hickory", "Walnut",
    "Sycamore", "Bluebonnet", "Lonestar", "Ranch", "Mill", "Spring", "Creek", "Ridge", "Hollow", "Bend", "Forest",
    "Meadow", "Canyon", "Brook", "Stone", "Timber", "Prairieview", "Sunset", "Lakeshore",
];

/// (left spelling, right spelling) of street types; both sides standardize
/// to the same token.
const STREET_TYPES: &[(&str, &str)] = &[
    ("ST", "Street"),
    ("AVE", "Avenue"),
    ("BLVD", "Boulevard"),
    ("RD", "Road"),
    ("DR", "Drive"),
    ("LN", "Lane"),
    ("CIR", "Circle"),
    ("LOOP", "Loop"),
    ("HWY", "Highway"),
    ("PKWY", "Parkway"),
];

const DIRECTIONS: &[(&str, &str)] = &[("N", "North"), ("S", "South"), ("E", "East"), ("W", "West")];

#[derive(Clone, Copy, PartialEq, Eq)]
enum AddrMode {
    Same,
    DroppedSuffix,
    ExtraTokens,
    Relocated,
}

struct Address {
    number: u32,
    direction: Option<usize>,
    words: String,
    street_type: usize,
}

impl Address {
    fn left(&self) -> String {
        let dir = self.direction.map(|d| format!("{} ", DIRECTIONS[d].0)).unwrap_or_default();
        format!(
            "{} {dir}{} {}",
            self.number,
            self.words.to_uppercase(),
            STREET_TYPES[self.street_type].0
        )
    }

    fn right(&self, mode: AddrMode, rng: &mut ChaCha8Rng) -> String {
        let dir = self.direction.map(|d| format!("{} ", DIRECTIONS[d].1)).unwrap_or_default();
        let base = format!("{} {dir}{}", self.number, self.words);
        let typ = STREET_TYPES[self.street_type].1;
        match mode {
            AddrMode::Same => format!("{base} {typ}"),
            AddrMode::DroppedSuffix => base,
            AddrMode::ExtraTokens => {
                let extra = ["5th Floor", "Suite 200", "Bldg B", "2nd Floor"];
                format!("{base} {typ}, {}", extra[rng.gen_range(0..extra.len())])
            }
            AddrMode::Relocated => unreachable!("relocated addresses are drawn fresh"),
        }
    }
}

struct Pools {
    names: Vec<(usize, usize)>,
    streets: Vec<String>,
    numbers: Vec<u32>,
}

impl Pools {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut names: Vec<(usize, usize)> = (0..PLACES.len())
            .flat_map(|p| (0..QUALIFIERS.len()).map(move |q| (p, q)))
            .collect();
        names.shuffle(rng);
        let mut streets: Vec<String> = Vec::new();
        for (i, a) in STREET_WORDS.iter().enumerate() {
            for (j, b) in STREET_WORDS.iter().enumerate() {
                if i != j {
                    streets.push(format!("{a} {b}"));
                }
            }
        }
        streets.shuffle(rng);
        let mut numbers: Vec<u32> = (100..10_000).collect();
        numbers.shuffle(rng);
        Self { names, streets, numbers }
    }

    fn name(&mut self) -> String {
        let (p, q) = self.names.pop().expect("name pool exhausted");
        format!("{} {}", PLACES[p], QUALIFIERS[q])
    }

    fn address(&mut self, rng: &mut ChaCha8Rng) -> Address {
        Address {
            number: self.numbers.pop().expect("number pool exhausted"),
            direction: rng.gen_bool(0.2).then(|| rng.gen_range(0..DIRECTIONS.len())),
            words: self.streets.pop().expect("street pool exhausted"),
            street_type: rng.gen_range(0..STREET_TYPES.len()),
        }
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn plus4(zip: &str, rng: &mut ChaCha8Rng) -> String {
    if rng.gen_bool(0.1) {
        format!("{zip}-{:04}", rng.gen_range(0..10_000))
    } else {
        zip.to_string()
    }
}

fn choose(rng: &mut ChaCha8Rng, n: usize, k: usize) -> BTreeSet<usize> {
    rand::seq::index::sample(rng, n, k.min(n)).into_iter().collect()
}

impl SyntheticStudy {
    pub fn generate(cfg: &SynthConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut pools = Pools::new(&mut rng);
        let zips: Vec<String> = rand::seq::index::sample(&mut rng, 5000, cfg.zip_pool)
            .into_iter()
            .map(|i| format!("{}", 75_000 + i))
            .collect();
        let zip = |rng: &mut ChaCha8Rng| zips[rng.gen_range(0..zips.len())].clone();

        let n = cfg.pairs;
        let round = |rate: f64| (rate * n as f64).round() as usize;
        let mut left_ids: Vec<usize> = (1..=n + cfg.left_only).collect();
        left_ids.shuffle(&mut rng);
        let mut right_ids: Vec<usize> = (1..=n + cfg.distractors).collect();
        right_ids.shuffle(&mut rng);

        // Disjoint special roles among the pairs.
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let mut take = |k: usize| -> BTreeSet<usize> { order.drain(..k.min(order.len())).collect() };
        let wrong_zip = take(round(cfg.wrong_zip_rate));
        let renamed = take(cfg.renamed);
        let confounded = take(cfg.confounders.min(cfg.distractors));
        let approx = {
            let pool: Vec<usize> = order.clone();
            choose(&mut rng, pool.len(), round(cfg.approx_name_rate))
                .into_iter()
                .map(|i| pool[i])
                .collect::<BTreeSet<_>>()
        };
        let multi = choose(&mut rng, n, round(cfg.multi_name_rate));

        let mut study = SyntheticStudy {
            left: Vec::new(),
            right: Vec::new(),
            truth: BTreeSet::new(),
            wrong_zip: BTreeSet::new(),
            renamed: BTreeSet::new(),
            confounder_ids: BTreeSet::new(),
            left_only: BTreeSet::new(),
        };
        let mut confounder_sources = Vec::new();

        for i in 0..n {
            let lid = format!("45{:04}", left_ids[i]);
            let rid = format!("F{:05}", right_ids[i]);
            let base = pools.name();
            let addr = pools.address(&mut rng);
            let home = zip(&mut rng);

            study.left.push(SynthRow {
                id: lid.clone(),
                name: format!("{} {}", base.to_uppercase(), pick(&mut rng, TYPES_LEFT)),
                address: addr.left(),
                zip: plus4(&home, &mut rng),
            });

            let mode = if renamed.contains(&i) {
                AddrMode::Relocated
            } else {
                match rng.gen_range(0..100) {
                    0..=54 => AddrMode::Same,
                    55..=74 => AddrMode::DroppedSuffix,
                    75..=89 => AddrMode::ExtraTokens,
                    _ => AddrMode::Relocated,
                }
            };
            let right_addr = match mode {
                AddrMode::Relocated => {
                    let a = pools.address(&mut rng);
                    a.right(AddrMode::Same, &mut rng)
                }
                m => addr.right(m, &mut rng),
            };
            let right_name = if renamed.contains(&i) {
                format!("{} {}", pools.name(), pick(&mut rng, TYPES_RIGHT))
            } else if approx.contains(&i) && !wrong_zip.contains(&i) {
                format!("{} {base} {}", pick(&mut rng, BRANDS), pick(&mut rng, TYPES_RIGHT))
            } else {
                format!("{base} {}", pick(&mut rng, TYPES_RIGHT))
            };
            let right_zip = if wrong_zip.contains(&i) {
                loop {
                    let z = zip(&mut rng);
                    if z != home {
                        break z;
                    }
                }
            } else {
                home.clone()
            };

            let mut rows = vec![SynthRow {
                id: rid.clone(),
                name: right_name,
                address: right_addr.clone(),
                zip: plus4(&right_zip, &mut rng),
            }];
            if multi.contains(&i) {
                rows.push(SynthRow {
                    id: rid.clone(),
                    name: format!("{} {}", pools.name(), pick(&mut rng, TYPES_RIGHT)),
                    address: right_addr,
                    zip: right_zip.clone(),
                });
                rows.shuffle(&mut rng);
            }
            study.right.extend(rows);

            study.truth.insert((lid.clone(), rid.clone()));
            if wrong_zip.contains(&i) {
                study.wrong_zip.insert((lid.clone(), rid.clone()));
            }
            if renamed.contains(&i) {
                study.renamed.insert((lid.clone(), rid.clone()));
            }
            if confounded.contains(&i) {
                confounder_sources.push((base, home));
            }
        }

        for k in 0..cfg.left_only {
            let lid = format!("45{:04}", left_ids[n + k]);
            let addr = pools.address(&mut rng);
            study.left.push(SynthRow {
                id: lid.clone(),
                name: format!("{} {}", pools.name().to_uppercase(), pick(&mut rng, TYPES_LEFT)),
                address: addr.left(),
                zip: zip(&mut rng),
            });
            study.left_only.insert(lid);
        }

        for k in 0..cfg.distractors {
            let rid = format!("F{:05}", right_ids[n + k]);
            let addr = pools.address(&mut rng);
            let (name, z) = match confounder_sources.get(k) {
                // Same facility name in the same zip: a second campus.
                Some((base, home)) => {
                    study.confounder_ids.insert(rid.clone());
                    (format!("{base} {}", pick(&mut rng, TYPES_RIGHT)), home.clone())
                }
                None => (format!("{} {}", pools.name(), pick(&mut rng, TYPES_RIGHT)), zip(&mut rng)),
            };
            study.right.push(SynthRow {
                id: rid,
                name,
                address: addr.right(AddrMode::Same, &mut rng),
                zip: z,
            });
        }

        study.left.shuffle(&mut rng);
        study.right.shuffle(&mut rng);
        study
    }

    pub fn right_for(&self, left: &str) -> Option<&str> {
        self.truth
            .range((left.to_string(), String::new())..)
            .next()
            .filter(|(l, _)| l == left)
            .map(|(_, r)| r.as_str())
    }

    /// Writes `left.csv`, `right.csv`, `gold.csv` and `config.json` into
    /// `dir` and returns the config path.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let to_io = |e: csv::Error| std::io::Error::other(e);
        let write_rows = |file: &str, header: [&str; 4], rows: &[SynthRow]| -> std::io::Result<()> {
            let mut w = csv::Writer::from_path(dir.join(file)).map_err(to_io)?;
            w.write_record(header).map_err(to_io)?;
            for r in rows {
                w.write_record([&r.id, &r.name, &r.address, &r.zip]).map_err(to_io)?;
            }
            w.flush()
        };
        write_rows("left.csv", ["provider_id", "provider_name", "address", "zip"], &self.left)?;
        write_rows("right.csv", ["fid", "facility_name", "street", "zip_code"], &self.right)?;
        let mut w = csv::Writer::from_path(dir.join("gold.csv")).map_err(to_io)?;
        w.write_record(["left_id", "right_id"]).map_err(to_io)?;
        for (l, r) in &self.truth {
            w.write_record([l, r]).map_err(to_io)?;
        }
        w.flush()?;

        let config = serde_json::json!({
            "left": {"path": "left.csv", "columns": {
                "id": "provider_id", "name": "provider_name", "address": "address", "zip": "zip"}},
            "right": {"path": "right.csv", "columns": {
                "id": "fid", "name": "facility_name", "address": "street", "zip": "zip_code"}},
            "output_dir": "out",
            "gold_standard": "gold.csv"
        });
        let path = dir.join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap() + "\n")?;
        Ok(path)
    }
}

/// A reviewer who knows the truth. Answers every given HIT.
pub fn simulated_review(study: &SyntheticStudy, hits: &[&Hit], timestamp: &str) -> Vec<HitResolution> {
    let lefts: HashSet<&str> = study.left.iter().map(|r| r.id.as_str()).collect();
    let mut out = Vec::new();
    for hit in hits {
        let left = hit.left.entity_id.as_str();
        debug_assert!(lefts.contains(left));
        let truth = study.right_for(left);
        let listed = truth.filter(|t| hit.has_candidate(t));
        let (decision, chosen, note) = match (hit.kind, truth, listed) {
            (_, _, Some(t)) => (Decision::Match, Some(t.to_string()), "same facility"),
            (HitKind::ManualMatch, None, _) => (Decision::NoLink, None, "not in the survey"),
            (HitKind::ManualMatch, Some(_), None) => (Decision::Defer, None, "counterpart not listed"),
            _ => (Decision::Nonmatch, None, "different facility"),
        };
        out.push(HitResolution {
            hit_id: hit.hit_id.clone(),
            decision,
            chosen_right_entity_id: chosen,
            reviewer: "sim".into(),
            note: note.into(),
            timestamp: timestamp.into(),
        });
    }
    out
}

/// Row counts per entity id, for checking the multi-name share.
pub fn rows_per_entity(rows: &[SynthRow]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for r in rows {
        *m.entry(r.id.as_str()).or_default() += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape() {
        let cfg = SynthConfig::default();
        let s = SyntheticStudy::generate(&cfg);
        assert_eq!(s.truth.len(), 500);
        assert_eq!(s.wrong_zip.len(), 25);
        assert_eq!(s.left.len(), 503);
        let per = rows_per_entity(&s.right);
        assert_eq!(per.len(), 520);
        assert_eq!(per.values().filter(|&&c| c == 2).count(), 50);
        assert_eq!(s.confounder_ids.len(), 8);
        let ids: BTreeSet<&str> = s.left.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids.len(), s.left.len());
    }

    #[test]
    fn seeded() {
        let a = SyntheticStudy::generate(&SynthConfig::default());
        let b = SyntheticStudy::generate(&SynthConfig::default());
        assert_eq!(a.left, b.left);
        assert_eq!(a.right, b.right);
        let c = SyntheticStudy::generate(&SynthConfig {
            seed: 7,
            ..SynthConfig::default()
        });
        assert_ne!(a.left, c.left);
    }
}
