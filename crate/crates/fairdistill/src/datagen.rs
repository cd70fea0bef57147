//! Seeded demo tables with planted bias, used by the examples and the test
//! suite. Both generators emit raw CSV-shaped records plus the matching
//! schema spec, so consumers exercise the same ingestion path as real files.
//!
//! `census_income` couples the label to the protected group both directly
//! and through a strong categorical proxy, so a classifier trained on the
//! raw table discriminates even without seeing the group. `recidivism` has
//! no proxies at all: its label bias rides only on the protected column
//! itself, which makes it the cleanest probe for whether synthesis removed
//! the direct dependence.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ColumnKind, ColumnRole, ColumnSpec, SchemaSpec};

/// A generated table: header, string records, and the column spec that
/// loads them.
#[derive(Debug, Clone)]
pub struct DemoTable {
    pub spec: SchemaSpec,
    pub rows: Vec<Vec<String>>,
}

impl DemoTable {
    pub fn header(&self) -> Vec<&str> {
        self.spec.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{}", self.header().join(","))?;
        for row in &self.rows {
            writeln!(f, "{}", row.join(","))?;
        }
        f.flush()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn col(
    name: &str,
    kind: ColumnKind,
    role: ColumnRole,
    categories: Option<Vec<&str>>,
) -> ColumnSpec {
    ColumnSpec {
        name: name.to_string(),
        kind,
        role,
        categories: categories.map(|cs| cs.iter().map(|c| c.to_string()).collect()),
        min: None,
        max: None,
    }
}

/// Label-model coefficients for `census_income`, factored out so the values
/// can be tuned as a group.
struct CensusKnobs {
    edu_coef: f64,
    age_coef: f64,
    hours_coef: f64,
    male_coef: f64,
    base: f64,
    /// Fraction of rows in the majority (male) group.
    male_share: f64,
    /// Probability mass of each group's majority relationship category.
    proxy_major: f64,
    proxy_minor: f64,
}

const CENSUS_KNOBS: CensusKnobs = CensusKnobs {
    edu_coef: 0.6,
    age_coef: 0.3,
    hours_coef: 0.25,
    male_coef: 4.3,
    base: 0.55,
    male_share: 0.62,
    proxy_major: 0.95,
    proxy_minor: 0.02,
};

/// Draw an index from `probs` (assumed to sum to 1).
fn pick(rng: &mut ChaCha8Rng, probs: &[f64]) -> usize {
    let draw: f64 = rng.random_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return i;
        }
    }
    probs.len() - 1
}

const AGE_BANDS: [&str; 4] = ["18_29", "30_44", "45_59", "60_plus"];
const AGE_PROBS: [f64; 4] = [0.22, 0.36, 0.28, 0.14];
const AGE_SCORES: [f64; 4] = [-1.2, -0.1, 0.7, 1.1];

const EDU_BANDS: [&str; 5] = ["dropout", "highschool", "some_college", "bachelors", "advanced"];
const EDU_PROBS: [f64; 5] = [0.12, 0.30, 0.26, 0.20, 0.12];
const EDU_SCORES: [f64; 5] = [-1.6, -0.6, 0.0, 0.9, 1.7];

const HOURS_BANDS: [&str; 3] = ["part_time", "full_time", "overtime"];
// Mild group shift on hours: a weak proxy next to the strong one.
const HOURS_PROBS_MALE: [f64; 3] = [0.12, 0.58, 0.30];
const HOURS_PROBS_FEMALE: [f64; 3] = [0.28, 0.60, 0.12];
const HOURS_SCORES: [f64; 3] = [-1.0, 0.0, 0.8];

/// Income-style table with a biased label. All columns are banded
/// categories, mirroring the coarse preprocessing common for this kind of
/// table; banded columns also give the autoencoder a faithful target, where
/// a raw wide-range numeric would be squashed into one low-stakes cell.
///
/// Structure per row: `education` and `age_band` carry the honest signal,
/// `hours_band` adds a mild group shift, `relationship` is a strong
/// categorical proxy for the group, and the label logit mixes the honest
/// signal with a large direct group term that saturates the majority group.
/// `occupation` is noise.
pub fn census_income(n: usize, seed: u64) -> DemoTable {
    census_income_with(n, seed, &CENSUS_KNOBS)
}

fn census_income_with(n: usize, seed: u64, k: &CensusKnobs) -> DemoTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let spec = SchemaSpec {
        columns: vec![
            col(
                "age_band",
                ColumnKind::Categorical,
                ColumnRole::Feature,
                Some(AGE_BANDS.to_vec()),
            ),
            col(
                "education",
                ColumnKind::Categorical,
                ColumnRole::Feature,
                Some(EDU_BANDS.to_vec()),
            ),
            col(
                "hours_band",
                ColumnKind::Categorical,
                ColumnRole::Feature,
                Some(HOURS_BANDS.to_vec()),
            ),
            col(
                "relationship",
                ColumnKind::Categorical,
                ColumnRole::Feature,
                Some(vec!["type_a", "type_b", "type_c"]),
            ),
            col(
                "occupation",
                ColumnKind::Categorical,
                ColumnRole::Feature,
                Some(vec!["admin", "craft", "service", "tech"]),
            ),
            col(
                "sex",
                ColumnKind::Categorical,
                ColumnRole::Protected,
                Some(vec!["female", "male"]),
            ),
            col(
                "income",
                ColumnKind::Categorical,
                ColumnRole::Target,
                Some(vec!["low", "high"]),
            ),
        ],
    };

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let male = rng.random_range(0.0..1.0) < k.male_share;
        let age = pick(&mut rng, &AGE_PROBS);
        let edu = pick(&mut rng, &EDU_PROBS);
        let hours =
            pick(&mut rng, if male { &HOURS_PROBS_MALE } else { &HOURS_PROBS_FEMALE });
        let rel_draw: f64 = rng.random_range(0.0..1.0);
        let (major, minor) = ("type_a", "type_b");
        let (own, other) = if male { (major, minor) } else { (minor, major) };
        let relationship = if rel_draw < k.proxy_major {
            own
        } else if rel_draw < k.proxy_major + k.proxy_minor {
            other
        } else {
            "type_c"
        };
        let occupation = ["admin", "craft", "service", "tech"][rng.random_range(0..4)];

        let logit = k.edu_coef * EDU_SCORES[edu]
            + k.age_coef * AGE_SCORES[age]
            + k.hours_coef * HOURS_SCORES[hours]
            + if male { k.male_coef } else { 0.0 }
            - k.base;
        let y = rng.random_range(0.0..1.0) < sigmoid(logit);

        rows.push(vec![
            AGE_BANDS[age].to_string(),
            EDU_BANDS[edu].to_string(),
            HOURS_BANDS[hours].to_string(),
            relationship.to_string(),
            occupation.to_string(),
            if male { "male" } else { "female" }.to_string(),
            if y { "high" } else { "low" }.to_string(),
        ]);
    }
    DemoTable { spec, rows }
}

/// Recidivism-style table whose label bias is direct only.
///
/// `priors_count` and `age` drive the honest signal; no feature is
/// correlated with the protected group, so once the direct dependence is
/// removed nothing in the features can reconstruct it.
pub fn recidivism(n: usize, seed: u64) -> DemoTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let age_noise: Normal<f64> = Normal::new(0.0, 9.0).unwrap();

    let spec = SchemaSpec {
        columns: vec![
            col("age", ColumnKind::Numeric, ColumnRole::Feature, None),
            col("priors_count", ColumnKind::Numeric, ColumnRole::Feature, None),
            col(
                "charge_degree",
                ColumnKind::Categorical,
                ColumnRole::Feature,
                Some(vec!["felony", "misdemeanor"]),
            ),
            col(
                "race",
                ColumnKind::Categorical,
                ColumnRole::Protected,
                Some(vec!["group_x", "group_y"]),
            ),
            col(
                "two_year_recid",
                ColumnKind::Categorical,
                ColumnRole::Target,
                Some(vec!["no", "yes"]),
            ),
        ],
    };

    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let group_x = rng.random_range(0.0..1.0) < 0.5;
        let age = (32.0 + age_noise.sample(&mut rng)).clamp(18.0, 70.0).round();
        // Geometric-ish priors: most people have few, a tail has many.
        let mut priors = 0;
        while priors < 15 && rng.random_range(0.0..1.0) < 0.55 {
            priors += 1;
        }
        let felony = rng.random_range(0.0..1.0) < 0.4;

        let priors_std = (priors as f64 - 2.0) / 2.5;
        let age_std = (age - 32.0) / 9.0;
        let logit = 1.6 * priors_std - 0.8 * age_std + 0.4 * (felony as u8 as f64)
            + if group_x { 1.8 } else { 0.0 }
            - 1.1;
        let y = rng.random_range(0.0..1.0) < sigmoid(logit);

        rows.push(vec![
            format!("{age}"),
            format!("{priors}"),
            if felony { "felony" } else { "misdemeanor" }.to_string(),
            if group_x { "group_x" } else { "group_y" }.to_string(),
            if y { "yes" } else { "no" }.to_string(),
        ]);
    }
    DemoTable { spec, rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn census_income_is_deterministic_and_sized() {
        let a = census_income(500, 1);
        let b = census_income(500, 1);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 500);
        let c = census_income(500, 2);
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn census_income_base_rate_and_bias() {
        let t = census_income(4000, 3);
        let mut pos = 0.0;
        let mut male_pos = 0.0;
        let mut males = 0.0;
        let mut female_pos = 0.0;
        for row in &t.rows {
            let male = row[5] == "male";
            let y = row[6] == "high";
            if male {
                males += 1.0;
                male_pos += y as u8 as f64;
            } else {
                female_pos += y as u8 as f64;
            }
            pos += y as u8 as f64;
        }
        let n = t.rows.len() as f64;
        let rate = pos / n;
        // High majority-class rate: a constant majority predictor clears the
        // utility floor, so synthesis can trade sharpness for parity.
        assert!(rate > 0.68 && rate < 0.82, "base rate {rate}");
        let male_rate = male_pos / males;
        let female_rate = female_pos / (n - males);
        assert!(
            female_rate / male_rate < 0.5,
            "planted gap too weak: {female_rate} vs {male_rate}"
        );
        assert!(male_rate > 0.93, "majority group should saturate: {male_rate}");
    }

    #[test]
    fn census_income_relationship_is_a_strong_proxy() {
        let t = census_income(4000, 4);
        let mut male_type_a = 0.0;
        let mut males = 0.0;
        let mut female_type_a = 0.0;
        let mut females = 0.0;
        for row in &t.rows {
            if row[5] == "male" {
                males += 1.0;
                male_type_a += (row[3] == "type_a") as u8 as f64;
            } else {
                females += 1.0;
                female_type_a += (row[3] == "type_a") as u8 as f64;
            }
        }
        assert!(male_type_a / males > 0.6);
        assert!(female_type_a / females < 0.2);
    }

    #[test]
    fn recidivism_features_are_group_independent() {
        let t = recidivism(4000, 5);
        let mut sums = [[0.0f64; 2]; 2]; // [group][0]=count, [1]=priors sum
        let mut pos = [[0.0f64; 2]; 2]; // [group][label]
        for row in &t.rows {
            let g = (row[3] == "group_x") as usize;
            sums[g][0] += 1.0;
            sums[g][1] += row[1].parse::<f64>().unwrap();
            pos[g][(row[4] == "yes") as usize] += 1.0;
        }
        let mean_x = sums[1][1] / sums[1][0];
        let mean_y = sums[0][1] / sums[0][0];
        assert!(
            (mean_x - mean_y).abs() < 0.3,
            "priors should not differ by group: {mean_x} vs {mean_y}"
        );
        // But the label rate does differ, by construction.
        let rate_x = pos[1][1] / sums[1][0];
        let rate_y = pos[0][1] / sums[0][0];
        assert!(rate_y / rate_x < 0.7, "label bias missing: {rate_y} vs {rate_x}");
    }

    fn as_dataset(t: &DemoTable) -> crate::data::Dataset {
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write_csv(f.path()).unwrap();
        crate::data::load_csv(f.path(), &t.spec).unwrap()
    }

    // The planted-bias contract: a forest trained on the raw census table
    // must discriminate, or the table is useless as a fairness demo.
    #[test]
    fn census_baseline_forest_discriminates() {
        let t = census_income(4000, 42);
        let d = as_dataset(&t);
        let split = crate::data::split_80_20(&d, 1).unwrap();
        let cfg = crate::eval::ForestConfig { trees: 100, max_depth: 12, seed: 0 };
        let forest = crate::eval::fit_forest(&split.train.x, &split.train.y, &cfg).unwrap();
        let pred = forest.predict(&split.test.x).unwrap();
        let groups = split.test.schema.num_groups();
        let dpr = crate::eval::demographic_parity_ratio(&pred, &split.test.s, groups).unwrap();
        let eor =
            crate::eval::equalized_odds_ratio(&pred, &split.test.y, &split.test.s, groups)
                .unwrap();
        assert!(dpr < 0.45, "baseline selection rates should be skewed: dpr {dpr}");
        assert!(eor < 0.35, "baseline error rates should be skewed: eor {eor}");
    }

    #[test]
    fn tables_load_through_the_csv_path() {
        let t = recidivism(200, 6);
        let f = tempfile::NamedTempFile::new().unwrap();
        t.write_csv(f.path()).unwrap();
        let d = crate::data::load_csv(f.path(), &t.spec).unwrap();
        assert_eq!(d.rows(), 200);
        assert_eq!(d.schema.num_groups(), 2);
        // age + priors + 2-cat charge = 4 encoded cells.
        assert_eq!(d.x.ncols(), 4);
    }
}
